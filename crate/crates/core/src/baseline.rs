//! Network-cohesion baseline and the trivial network ablations.
//!
//! The cohesion model fits one intercept per node and a common slope,
//! minimizing `‖y - α - βx‖² + λ αᵀ L α` with `L = diag(A1) - A`.

use crate::error::{dim, param, Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::linalg::symmetric_eigen;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_FOLDS: usize = 5;
pub const GRID_SIZE: usize = 100;
pub const HELD_OUT_RULE: &str = "harmonic_extension";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub cv_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetcohFit {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub objective: f64,
    /// Empty unless λ was chosen by cross-validation.
    pub cv_curve: Vec<CvPoint>,
    pub n_folds: Option<usize>,
    pub held_out_rule: Option<String>,
}

impl NetcohFit {
    pub fn alpha_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.alpha)
    }
}

/// `‖y - α - βx‖² + λ αᵀ L α`.
pub fn netcoh_objective(
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
    lambda: f64,
) -> f64 {
    let r = y - alpha - x * beta;
    r.norm_squared() + lambda * alpha.dot(&(laplacian * alpha))
}

/// Solver for the first-order system
/// `(I + λL)α + xβ = r₁`, `xᵀα + (xᵀx)β = r₂`
/// via the spectrum of `L`, shared across λ.
struct CohesionSolver {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    x: DVector<f64>,
    ux: DVector<f64>,
    xx: f64,
}

impl CohesionSolver {
    fn new(laplacian: &DMatrix<f64>, x: &DVector<f64>) -> Result<Self> {
        let eig = symmetric_eigen(laplacian)?;
        let values = eig.values.map(|v| v.max(0.0));
        let ux = eig.vectors.tr_mul(x);
        Ok(Self {
            values,
            vectors: eig.vectors,
            x: x.clone(),
            ux,
            xx: x.norm_squared(),
        })
    }

    fn solve(&self, lambda: f64, r1: &DVector<f64>, r2: f64) -> Result<(DVector<f64>, f64)> {
        let u1 = self.vectors.tr_mul(r1);
        // 1 - 1/(1 + λμ) written without cancellation
        let shrink = self.values.map(|m| lambda * m / (1.0 + lambda * m));
        let keep = self.values.map(|m| 1.0 / (1.0 + lambda * m));
        let denom: f64 = (0..self.ux.len())
            .map(|i| shrink[i] * self.ux[i] * self.ux[i])
            .sum();
        if !(denom > 1e-12 * self.xx) {
            return Err(Error::Numerical(
                "slope is not identifiable: x lies in the Laplacian null space".into(),
            ));
        }
        let x_s_r1: f64 = (0..self.ux.len())
            .map(|i| keep[i] * self.ux[i] * u1[i])
            .sum();
        let beta = (r2 - x_s_r1) / denom;
        let coords = (u1 - &self.ux * beta).component_mul(&keep);
        Ok((&self.vectors * coords, beta))
    }

    /// Solve with `r₁ = y`, `r₂ = xᵀy`.
    fn fit(&self, lambda: f64, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        self.solve(lambda, y, self.x.dot(y))
    }
}

fn check_xy(a: &AdjacencyMatrix, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if x.len() != a.n() || y.len() != a.n() {
        return Err(dim(format!(
            "network has {} nodes, x has {}, y has {}",
            a.n(),
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(param(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

/// Residual of the first-order system at `(α, β)`.
pub fn netcoh_system_residual(
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
    lambda: f64,
) -> (DVector<f64>, f64) {
    let r1 = y - (alpha + laplacian * alpha * lambda + x * beta);
    let r2 = x.dot(y) - x.dot(alpha) - x.norm_squared() * beta;
    (r1, r2)
}

fn fit_with_solver(
    solver: &CohesionSolver,
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<NetcohFit> {
    let (mut alpha, mut beta) = solver.fit(lambda, y)?;
    // two rounds of iterative refinement against the explicit Laplacian
    for _ in 0..2 {
        let (r1, r2) = netcoh_system_residual(laplacian, x, y, &alpha, beta, lambda);
        let (da, db) = solver.solve(lambda, &r1, r2)?;
        alpha += da;
        beta += db;
    }
    if !beta.is_finite() || alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite cohesion solution".into()));
    }
    let objective = netcoh_objective(laplacian, x, y, &alpha, beta, lambda);
    Ok(NetcohFit {
        alpha: alpha.iter().copied().collect(),
        beta,
        lambda,
        objective,
        cv_curve: Vec::new(),
        n_folds: None,
        held_out_rule: None,
    })
}

/// Exact minimizer of the penalized cohesion loss for a fixed λ.
pub fn fit_netcoh(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<NetcohFit> {
    check_xy(a, x, y)?;
    check_lambda(lambda)?;
    let l = a.laplacian();
    let solver = CohesionSolver::new(&l, x)?;
    fit_with_solver(&solver, &l, x, y, lambda)
}

/// `ŷ_i = α_i + β x_i`.
pub fn predict_netcoh(fit: &NetcohFit, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != fit.alpha.len() {
        return Err(dim(format!(
            "fit has {} intercepts, x has {} entries",
            fit.alpha.len(),
            x.len()
        )));
    }
    Ok(DVector::from_fn(x.len(), |i, _| {
        fit.alpha[i] + fit.beta * x[i]
    }))
}

/// `GRID_SIZE` values from 1e-3 to 10, evenly spaced in log scale.
pub fn lambda_grid() -> Vec<f64> {
    (0..GRID_SIZE)
        .map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / (GRID_SIZE - 1) as f64))
        .collect()
}

/// Node-level fold labels: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds < 2 {
        return Err(param("cross-validation needs at least two folds"));
    }
    if n_folds > n {
        return Err(param(format!(
            "{n_folds} folds for {n} nodes leaves a fold with every node in training or none held out"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        folds[node] = pos % n_folds;
    }
    Ok(folds)
}

/// Linear map from training intercepts to held-out intercepts that minimizes
/// `αᵀLα` over the held-out coordinates. Held-out components with no edge
/// into the training set receive the training mean instead.
struct HarmonicExtension {
    /// `(held-out positions, extension rows)` for anchored components.
    anchored: Vec<(Vec<usize>, DMatrix<f64>)>,
    floating: Vec<usize>,
}

impl HarmonicExtension {
    fn new(
        adj: &DMatrix<f64>,
        full_lap: &DMatrix<f64>,
        train: &[usize],
        held: &[usize],
    ) -> Result<Self> {
        let h = held.len();
        let mut seen = vec![false; h];
        let mut anchored = Vec::new();
        let mut floating = Vec::new();
        for start in 0..h {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut head = 0;
            while head < comp.len() {
                let u = held[comp[head]];
                head += 1;
                for (pos, &v) in held.iter().enumerate() {
                    if !seen[pos] && adj[(u, v)] != 0.0 {
                        seen[pos] = true;
                        comp.push(pos);
                    }
                }
            }
            comp.sort_unstable();
            let touches_train = comp
                .iter()
                .any(|&p| train.iter().any(|&t| adj[(held[p], t)] != 0.0));
            if !touches_train {
                floating.extend(comp);
                continue;
            }
            let m = comp.len();
            let l_cc = DMatrix::from_fn(m, m, |r, c| full_lap[(held[comp[r]], held[comp[c]])]);
            let a_ct = DMatrix::from_fn(m, train.len(), |r, c| adj[(held[comp[r]], train[c])]);
            let chol = l_cc.cholesky().ok_or_else(|| {
                Error::Numerical("held-out Laplacian block is not positive definite".into())
            })?;
            anchored.push((comp, chol.solve(&a_ct)));
        }
        floating.sort_unstable();
        Ok(Self { anchored, floating })
    }

    fn extend(&self, alpha_train: &DVector<f64>, h: usize) -> DVector<f64> {
        let mut out = DVector::zeros(h);
        for (comp, map) in &self.anchored {
            let vals = map * alpha_train;
            for (r, &p) in comp.iter().enumerate() {
                out[p] = vals[r];
            }
        }
        if !self.floating.is_empty() {
            let mean = alpha_train.mean();
            for &p in &self.floating {
                out[p] = mean;
            }
        }
        out
    }
}

/// Pooled held-out mean squared error for each λ in `grid`.
pub fn cv_curve(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    grid: &[f64],
    n_folds: usize,
    seed: u64,
) -> Result<Vec<CvPoint>> {
    check_xy(a, x, y)?;
    for &l in grid {
        check_lambda(l)?;
    }
    let n = a.n();
    let folds = fold_assignment(n, n_folds, seed)?;
    let adj = a.matrix();
    let full_lap = a.laplacian();
    let mut sse = vec![0.0; grid.len()];
    for f in 0..n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let held: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let sub =
            AdjacencyMatrix::from_dense(DMatrix::from_fn(train.len(), train.len(), |r, c| {
                adj[(train[r], train[c])]
            }))?;
        let lap_t = sub.laplacian();
        let x_t = DVector::from_fn(train.len(), |r, _| x[train[r]]);
        let y_t = DVector::from_fn(train.len(), |r, _| y[train[r]]);
        let solver = CohesionSolver::new(&lap_t, &x_t)?;
        let ext = HarmonicExtension::new(adj, &full_lap, &train, &held)?;
        for (g, &lambda) in grid.iter().enumerate() {
            let (alpha_t, beta) = solver.fit(lambda, &y_t)?;
            let alpha_h = ext.extend(&alpha_t, held.len());
            sse[g] += held
                .iter()
                .enumerate()
                .map(|(p, &i)| (y[i] - alpha_h[p] - beta * x[i]).powi(2))
                .sum::<f64>();
        }
    }
    Ok(grid
        .iter()
        .zip(sse)
        .map(|(&lambda, s)| CvPoint {
            lambda,
            cv_error: s / n as f64,
        })
        .collect())
}

/// Cross-validates λ over [`lambda_grid`] and refits on all nodes.
pub fn cv_select_lambda(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    n_folds: usize,
    seed: u64,
) -> Result<NetcohFit> {
    let curve = cv_curve(a, x, y, &lambda_grid(), n_folds, seed)?;
    let best = curve
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, p)| match acc {
            Some((_, e)) if e <= p.cv_error => acc,
            _ if p.cv_error.is_finite() => Some((i, p.cv_error)),
            _ => acc,
        })
        .ok_or_else(|| Error::Numerical("cross-validation error is not finite".into()))?;
    let mut fit = fit_netcoh(a, x, y, curve[best.0].lambda)?;
    fit.cv_curve = curve;
    fit.n_folds = Some(n_folds);
    fit.held_out_rule = Some(HELD_OUT_RULE.to_string());
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkAblation {
    Identity,
    Complete,
}

/// `Iₙ` or `1ₙ1ₙᵀ`, to stand in for the observed network.
pub fn ablation_network(kind: NetworkAblation, n: usize) -> Result<AdjacencyMatrix> {
    if n == 0 {
        return Err(param("ablation network needs at least one node"));
    }
    Ok(match kind {
        NetworkAblation::Identity => AdjacencyMatrix::identity(n),
        NetworkAblation::Complete => AdjacencyMatrix::complete(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::Membership;
    use crate::graph::{sample_sbm, SbmParams};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, seed: u64) -> (AdjacencyMatrix, DVector<f64>, DVector<f64>) {
        let z = Membership::new((0..n).map(|i| i % 2).collect(), 2).unwrap();
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.3]);
        let a = sample_sbm(&SbmParams::new(z, b).unwrap(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        (a, x, y)
    }

    #[test]
    fn system_residual_is_tiny() {
        let (a, x, y) = instance(120, 3);
        for lambda in [1e-3, 0.3, 10.0] {
            let fit = fit_netcoh(&a, &x, &y, lambda).unwrap();
            let (r1, r2) = netcoh_system_residual(
                &a.laplacian(),
                &x,
                &y,
                &fit.alpha_vector(),
                fit.beta,
                lambda,
            );
            assert!(r1.norm() <= 1e-8 * y.norm(), "{}", r1.norm());
            assert!(r2.abs() <= 1e-8 * y.norm() * x.norm());
        }
    }

    #[test]
    fn local_optimality_probe() {
        let (a, x, y) = instance(60, 5);
        let l = a.laplacian();
        let fit = fit_netcoh(&a, &x, &y, 0.5).unwrap();
        let alpha = fit.alpha_vector();
        let best = netcoh_objective(&l, &x, &y, &alpha, fit.beta, 0.5);
        assert!((best - fit.objective).abs() < 1e-10 * best);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let sign = |r: &mut ChaCha8Rng| if r.random::<bool>() { 1e-3 } else { -1e-3 };
            let pa = DVector::from_fn(60, |i, _| alpha[i] + sign(&mut rng));
            let pb = fit.beta + sign(&mut rng);
            assert!(netcoh_objective(&l, &x, &y, &pa, pb, 0.5) >= best);
        }
    }

    #[test]
    fn constant_response_is_free() {
        let (a, x0, _) = instance(80, 7);
        let x = x0.add_scalar(-x0.mean());
        let y = DVector::from_element(80, 2.5);
        for lambda in [1e-3, 1.0, 10.0] {
            let fit = fit_netcoh(&a, &x, &y, lambda).unwrap();
            assert!(fit.beta.abs() < 1e-10);
            assert!(fit.alpha.iter().all(|v| (v - 2.5).abs() < 1e-10));
        }
    }

    #[test]
    fn heavy_penalty_gives_simple_regression() {
        let (a, x, y) = instance(100, 11);
        let fit = fit_netcoh(&a, &x, &y, 1e8).unwrap();
        let xm = x.mean();
        let ym = y.mean();
        let slope = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - xm) * (b - ym))
            .sum::<f64>()
            / x.iter().map(|a| (a - xm).powi(2)).sum::<f64>();
        assert!((fit.beta - slope).abs() < 1e-4);
        let spread = fit.alpha.iter().cloned().fold(f64::MIN, f64::max)
            - fit.alpha.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-4);
        assert!((fit.alpha[0] - (ym - slope * xm)).abs() < 1e-4);
    }

    #[test]
    fn predictions_and_objective_round_trip() {
        let (a, x, y) = instance(50, 13);
        let fit = fit_netcoh(&a, &x, &y, 2.0).unwrap();
        let yhat = predict_netcoh(&fit, &x).unwrap();
        let alpha = fit.alpha_vector();
        let obj = (&y - &yhat).norm_squared() + 2.0 * alpha.dot(&(a.laplacian() * &alpha));
        assert!((obj - fit.objective).abs() < 1e-10);
        let zero_beta = NetcohFit {
            beta: 0.0,
            ..fit.clone()
        };
        assert_eq!(predict_netcoh(&zero_beta, &x).unwrap(), alpha);
        let zero_alpha = NetcohFit {
            alpha: vec![0.0; 50],
            ..fit
        };
        assert_eq!(
            predict_netcoh(&zero_alpha, &x).unwrap(),
            &x * zero_alpha.beta
        );
    }

    #[test]
    fn constant_x_is_rejected() {
        let (a, _, y) = instance(30, 1);
        let x = DVector::from_element(30, 1.0);
        // connected graph: constants carry no penalty so the slope is confounded
        let complete = AdjacencyMatrix::complete(30);
        assert!(matches!(
            fit_netcoh(&complete, &x, &y, 1.0),
            Err(Error::Numerical(_))
        ));
        assert!(fit_netcoh(&a, &x, &y, 0.0).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid();
        assert_eq!(g.len(), 100);
        assert!((g[0] - 1e-3).abs() < 1e-18);
        assert!((g[99] - 10.0).abs() < 1e-12);
        let ratio = 10f64.powf(4.0 / 99.0);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(23, 5, 4).unwrap();
        let counts: Vec<usize> = (0..5)
            .map(|k| f.iter().filter(|&&v| v == k).count())
            .collect();
        assert_eq!(counts, vec![5, 5, 5, 4, 4]);
        assert_eq!(f, fold_assignment(23, 5, 4).unwrap());
        assert!(fold_assignment(3, 4, 0).is_err());
        assert!(fold_assignment(10, 1, 0).is_err());
    }

    #[test]
    fn harmonic_extension_on_a_path() {
        // path 0-1-2-3-4 with nodes 1..=3 held out: linear interpolation
        let a = AdjacencyMatrix::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let ext = HarmonicExtension::new(a.matrix(), &a.laplacian(), &[0, 4], &[1, 2, 3]).unwrap();
        let out = ext.extend(&DVector::from_vec(vec![0.0, 4.0]), 3);
        assert!((out - DVector::from_vec(vec![1.0, 2.0, 3.0])).amax() < 1e-12);
        // isolated held-out node gets the training mean
        let b = AdjacencyMatrix::from_edges(3, [(0, 1)]).unwrap();
        let ext = HarmonicExtension::new(b.matrix(), &b.laplacian(), &[0, 1], &[2]).unwrap();
        assert_eq!(ext.extend(&DVector::from_vec(vec![1.0, 3.0]), 1)[0], 2.0);
    }

    #[test]
    fn cv_is_deterministic_and_picks_the_minimum() {
        let (a, x, y) = instance(80, 21);
        let f1 = cv_select_lambda(&a, &x, &y, 5, 3).unwrap();
        let f2 = cv_select_lambda(&a, &x, &y, 5, 3).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.cv_curve.len(), 100);
        assert!(f1.cv_curve.iter().all(|p| p.cv_error.is_finite()));
        let min = f1
            .cv_curve
            .iter()
            .map(|p| p.cv_error)
            .fold(f64::INFINITY, f64::min);
        let chosen = f1.cv_curve.iter().find(|p| p.lambda == f1.lambda).unwrap();
        assert!(chosen.cv_error <= 1.05 * min);
        assert!(f1.lambda.is_finite() && f1.lambda > 0.0);
        let json = serde_json::to_string(&f1).unwrap();
        assert!(json.contains("cv_curve"));
    }

    #[test]
    fn ablation_networks() {
        assert_eq!(
            ablation_network(NetworkAblation::Identity, 3)
                .unwrap()
                .matrix(),
            &DMatrix::identity(3, 3)
        );
        assert_eq!(
            ablation_network(NetworkAblation::Complete, 3)
                .unwrap()
                .matrix(),
            &DMatrix::from_element(3, 3, 1.0)
        );
        assert!(ablation_network(NetworkAblation::Identity, 0).is_err());
    }
}

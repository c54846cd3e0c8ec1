//! Community-wise least squares and its structured variants.
//!
//! The response of node `i` is modeled as `Σ_j A_ij β[ψ_i][ψ_j] x_j`, so the
//! coefficients for responses in community `k` only enter through row `k`
//! of β. Each row is estimated from its own least-squares problem.

mod centering;
mod clse;
mod design;
mod multi;

pub use centering::{center_data, fit_clse_centered, CenteredData, CenteredFit};
pub use clse::{fit_clse, fit_ols, fit_row, fit_singleton, OlsFit};
pub use design::{block_degrees, build_design, neighborhood_sums, DesignMatrix};
pub use multi::{fit_clse_multi, predict_multi, CoefficientTensor, MultiFit};

use crate::community::Membership;
use crate::error::{dim, param, Result};
use crate::graph::AdjacencyMatrix;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Paired node covariates and responses.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Optional n×p covariates for the multi-covariate model.
    pub covariates: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(dim(format!("x has {} entries, y has {}", x.len(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(param("covariates and responses must be finite"));
        }
        Ok(Self {
            x,
            y,
            covariates: None,
        })
    }

    pub fn with_covariates(mut self, covariates: DMatrix<f64>) -> Result<Self> {
        if covariates.nrows() != self.y.len() {
            return Err(dim(format!(
                "covariate matrix has {} rows for {} responses",
                covariates.nrows(),
                self.y.len()
            )));
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(param("covariates must be finite"));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Full,
    Row,
    Singleton,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Full => "full",
            Structure::Row => "row",
            Structure::Singleton => "singleton",
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Structure {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Structure::Full),
            "row" => Ok(Structure::Row),
            "singleton" => Ok(Structure::Singleton),
            other => Err(param(format!("unknown coefficient structure `{other}`"))),
        }
    }
}

/// K×K directional effects; row `k` acts on responses in community `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    structure: Structure,
}

impl CoefficientMatrix {
    pub fn new(values: DMatrix<f64>, structure: Structure) -> Result<Self> {
        let k = values.nrows();
        if values.ncols() != k || k == 0 {
            return Err(dim(format!(
                "coefficient matrix must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let ok = match structure {
            Structure::Full => true,
            Structure::Row => (1..k).all(|r| values.row(r) == values.row(0)),
            Structure::Singleton => values.iter().all(|&v| v == values[(0, 0)]),
        };
        if !ok {
            return Err(param(format!("values do not have {structure} structure")));
        }
        Ok(Self { values, structure })
    }

    pub fn full(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, Structure::Full)
    }

    /// `1_K β₀ᵀ`.
    pub fn row(beta0: &DVector<f64>) -> Self {
        let k = beta0.len();
        Self {
            values: DMatrix::from_fn(k, k, |_, j| beta0[j]),
            structure: Structure::Row,
        }
    }

    /// `β₀ 1_K 1_Kᵀ`.
    pub fn singleton(k: usize, beta0: f64) -> Self {
        Self {
            values: DMatrix::from_element(k, k, beta0),
            structure: Structure::Singleton,
        }
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.values[(k1, k2)]
    }

    /// Row-major nested vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// Linear solve diagnostics for one least-squares subproblem.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    /// Response community, or `None` for the pooled row/singleton problems.
    pub community: Option<usize>,
    pub hessian: DMatrix<f64>,
    pub rank: usize,
    pub min_norm: bool,
}

impl SolveSummary {
    pub fn full_rank(&self) -> bool {
        self.rank == self.hessian.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: CoefficientMatrix,
    /// Per-community designs; empty for row and singleton fits.
    pub designs: Vec<DesignMatrix>,
    pub solves: Vec<SolveSummary>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

impl FitResult {
    pub fn structure(&self) -> Structure {
        self.beta_hat.structure()
    }

    pub fn min_norm_used(&self) -> bool {
        self.solves.iter().any(|s| s.min_norm)
    }

    /// Residuals of the nodes in community `k`, in increasing node order.
    pub fn community_residuals(&self, z: &Membership, k: usize) -> DVector<f64> {
        let members = z.members(k);
        DVector::from_iterator(members.len(), members.iter().map(|&i| self.residuals[i]))
    }

    /// JSON summary: coefficients, rank flags, residual statistics.
    pub fn summary_json(&self) -> serde_json::Value {
        let n = self.residuals.len().max(1) as f64;
        let rss = self.residuals.norm_squared();
        let solves: Vec<_> = self
            .solves
            .iter()
            .map(|s| {
                serde_json::json!({
                    "community": s.community,
                    "rank": s.rank,
                    "full_rank": s.full_rank(),
                    "min_norm": s.min_norm,
                })
            })
            .collect();
        serde_json::json!({
            "structure": self.structure().as_str(),
            "k": self.beta_hat.k(),
            "beta_hat": self.beta_hat.to_rows(),
            "solves": solves,
            "residuals": {
                "n": self.residuals.len(),
                "rss": rss,
                "mse": rss / n,
                "mean": self.residuals.sum() / n,
                "max_abs": self.residuals.amax(),
            },
        })
    }
}

pub(crate) fn check_inputs(a: &AdjacencyMatrix, x: &DVector<f64>, z: &Membership) -> Result<()> {
    let n = a.n();
    if x.len() != n || z.n() != n {
        return Err(dim(format!(
            "network has {n} nodes, x has {}, membership has {}",
            x.len(),
            z.n()
        )));
    }
    Ok(())
}

fn check_beta(beta: &CoefficientMatrix, z: &Membership) -> Result<()> {
    if beta.k() != z.k() {
        return Err(dim(format!(
            "coefficients are {}x{} but membership has {} communities",
            beta.k(),
            beta.k(),
            z.k()
        )));
    }
    Ok(())
}

/// `ŷ = (Z β Zᵀ ∗ A) x`.
pub fn predict(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    z: &Membership,
    beta: &CoefficientMatrix,
) -> Result<DVector<f64>> {
    check_inputs(a, x, z)?;
    check_beta(beta, z)?;
    let labels = z.labels();
    let adj = a.matrix();
    let n = a.n();
    Ok(DVector::from_fn(n, |i, _| {
        let row = labels[i];
        let mut acc = 0.0;
        for j in 0..n {
            if adj[(i, j)] != 0.0 {
                acc += beta.get(row, labels[j]) * x[j];
            }
        }
        acc
    }))
}

/// `(1/2n) ‖y - ŷ‖²`.
pub fn loss(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
    beta: &CoefficientMatrix,
) -> Result<f64> {
    if y.len() != a.n() {
        return Err(dim("response length differs from node count"));
    }
    let yhat = predict(a, x, z, beta)?;
    Ok((y - yhat).norm_squared() / (2.0 * a.n() as f64))
}

/// `(1/2n_k) ‖y ∗ Z_{·,k} - M_k β_{k,·}‖²`.
pub fn loss_k(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
    beta: &CoefficientMatrix,
    k: usize,
) -> Result<f64> {
    check_beta(beta, z)?;
    if y.len() != a.n() {
        return Err(dim("response length differs from node count"));
    }
    let design = build_design(a, x, z, k)?;
    let n_k = design.rows.len();
    if n_k == 0 {
        return Err(param(format!("community {k} is empty")));
    }
    let coef = beta.values().row(k).clone_owned();
    let mut rss = 0.0;
    for &i in &design.rows {
        let r = y[i] - design.matrix.row(i).dot(&coef);
        rss += r * r;
    }
    Ok(rss / (2.0 * n_k as f64))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::{sample_sbm, SbmParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_instance(
        n: usize,
        k: usize,
        seed: u64,
    ) -> (
        AdjacencyMatrix,
        Membership,
        DVector<f64>,
        DVector<f64>,
        CoefficientMatrix,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Membership::new((0..n).map(|i| i % k).collect(), k).unwrap();
        let mut b = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 0.5);
        b = DMatrix::from_fn(k, k, |i, j| {
            let v = if i <= j { b[(i, j)] } else { b[(j, i)] };
            if i == j {
                v + 0.5
            } else {
                v
            }
        });
        let a = sample_sbm(&SbmParams::new(z.clone(), b).unwrap(), rng.random());
        let x = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let beta =
            CoefficientMatrix::full(DMatrix::from_fn(k, k, |_, _| rng.sample(StandardNormal)))
                .unwrap();
        (a, z, x, y, beta)
    }

    #[test]
    fn zero_beta_predicts_zero() {
        let (a, z, x, _, _) = random_instance(30, 3, 1);
        let beta = CoefficientMatrix::full(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(predict(&a, &x, &z, &beta).unwrap(), DVector::zeros(30));
    }

    #[test]
    fn identity_network_scales_x() {
        let a = AdjacencyMatrix::identity(4);
        let z = Membership::new(vec![0; 4], 1).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let beta = CoefficientMatrix::singleton(1, 2.5);
        assert_eq!(predict(&a, &x, &z, &beta).unwrap(), &x * 2.5);
    }

    #[test]
    fn prediction_equals_stacked_design_form() {
        for seed in 0..10 {
            let (a, z, x, _, beta) = random_instance(40, 3, seed);
            let direct = predict(&a, &x, &z, &beta).unwrap();
            let mut stacked = DVector::zeros(40);
            for k in 0..3 {
                let m = build_design(&a, &x, &z, k).unwrap();
                stacked += &m.matrix * beta.values().row(k).transpose();
            }
            assert!((direct - stacked).amax() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let a = AdjacencyMatrix::identity(4);
        let z = Membership::new(vec![0, 1, 0, 1], 2).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let beta = CoefficientMatrix::full(DMatrix::zeros(2, 2)).unwrap();
        let ones = DVector::from_element(4, 1.0);
        assert_eq!(loss(&a, &x, &ones, &z, &beta).unwrap(), 0.5);
        let beta = CoefficientMatrix::singleton(2, 1.5);
        let y = predict(&a, &x, &z, &beta).unwrap();
        assert_eq!(loss(&a, &x, &y, &z, &beta).unwrap(), 0.0);
    }

    #[test]
    fn loss_decomposes_over_communities() {
        for seed in 0..20 {
            let (a, z, x, y, beta) = random_instance(45, 3, seed);
            let total = loss(&a, &x, &y, &z, &beta).unwrap();
            let sizes = z.sizes();
            let parts: f64 = (0..3)
                .map(|k| sizes[k] as f64 / 45.0 * loss_k(&a, &x, &y, &z, &beta, k).unwrap())
                .sum();
            assert!((total - parts).abs() < 1e-12);
        }
    }

    #[test]
    fn structure_validation() {
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(CoefficientMatrix::new(rows.clone(), Structure::Row).is_ok());
        assert!(CoefficientMatrix::new(rows, Structure::Singleton).is_err());
        let r = CoefficientMatrix::row(&DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(r.get(1, 0), 1.0);
        assert_eq!(r.get(0, 1), -1.0);
        assert!("diag".parse::<Structure>().is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![1.0])).is_err());
        assert!(Dataset::new(x.clone(), DVector::from_vec(vec![1.0, f64::NAN])).is_err());
        let d = Dataset::new(x.clone(), x.clone()).unwrap();
        assert!(d.clone().with_covariates(DMatrix::zeros(3, 2)).is_err());
        assert_eq!(d.with_covariates(DMatrix::zeros(2, 2)).unwrap().n(), 2);
    }
}

use super::design::{design_from_sums, neighborhood_sums};
use super::{check_inputs, predict, CoefficientMatrix, FitResult, SolveSummary};
use crate::community::Membership;
use crate::error::{dim, Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::linalg::solve_normal_equations;
use nalgebra::{DMatrix, DVector};

fn check_response(a: &AdjacencyMatrix, y: &DVector<f64>) -> Result<()> {
    if y.len() != a.n() {
        return Err(dim(format!(
            "y has {} entries for {} nodes",
            y.len(),
            a.n()
        )));
    }
    Ok(())
}

/// Community-wise least squares estimator (full K×K structure).
///
/// Row `k` solves `H_k β = M_kᵀ y` with `H_k = M_kᵀ M_k`; a numerically
/// singular `H_k` yields the minimum-norm solution and is flagged.
pub fn fit_clse(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<FitResult> {
    check_inputs(a, x, z)?;
    check_response(a, y)?;
    let n = a.n();
    let k = z.k();
    let sums = neighborhood_sums(a, x, z)?;
    let mut beta = DMatrix::zeros(k, k);
    let mut designs = Vec::with_capacity(k);
    let mut solves = Vec::with_capacity(k);
    for c in 0..k {
        let design = design_from_sums(&sums, z, c);
        if design.rows.is_empty() {
            return Err(Error::Degenerate(format!("community {c} is empty")));
        }
        let hessian = design.gram();
        let solve = solve_normal_equations(&hessian, &design.cross(y), n)?;
        beta.row_mut(c).copy_from(&solve.solution.transpose());
        solves.push(SolveSummary {
            community: Some(c),
            hessian,
            rank: solve.rank,
            min_norm: solve.min_norm,
        });
        designs.push(design);
    }
    let beta_hat = CoefficientMatrix::full(beta)?;
    finish(a, x, y, z, beta_hat, designs, solves)
}

pub(super) fn finish(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
    beta_hat: CoefficientMatrix,
    designs: Vec<super::DesignMatrix>,
    solves: Vec<SolveSummary>,
) -> Result<FitResult> {
    let fitted = predict(a, x, z, &beta_hat)?;
    let residuals = y - &fitted;
    Ok(FitResult {
        beta_hat,
        designs,
        solves,
        fitted,
        residuals,
    })
}

/// Row-structured estimator `β = 1_K β₀ᵀ`, where β₀ solves
/// `(Zᵀ diag(x) A² diag(x) Z) β₀ = Zᵀ diag(x) A y`.
pub fn fit_row(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<FitResult> {
    check_inputs(a, x, z)?;
    check_response(a, y)?;
    // A diag(x) Z; its Gram is Zᵀ diag(x) A² diag(x) Z because A is symmetric
    let sums = neighborhood_sums(a, x, z)?;
    let hessian = sums.tr_mul(&sums);
    let rhs = sums.tr_mul(y);
    let solve = solve_normal_equations(&hessian, &rhs, a.n())?;
    let beta_hat = CoefficientMatrix::row(&solve.solution);
    let summary = SolveSummary {
        community: None,
        hessian,
        rank: solve.rank,
        min_norm: solve.min_norm,
    };
    finish(a, x, y, z, beta_hat, Vec::new(), vec![summary])
}

/// Singleton estimator `β = β₀ 1 1ᵀ` with `β₀ = xᵀ A y / xᵀ A² x`.
pub fn fit_singleton(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<FitResult> {
    check_inputs(a, x, z)?;
    check_response(a, y)?;
    let ax = a.matrix() * x;
    let denom = ax.norm_squared();
    if denom <= 0.0 {
        return Err(Error::Degenerate("xᵀ A² x is zero".into()));
    }
    let beta0 = ax.dot(y) / denom;
    let beta_hat = CoefficientMatrix::singleton(z.k(), beta0);
    let summary = SolveSummary {
        community: None,
        hessian: DMatrix::from_element(1, 1, denom),
        rank: 1,
        min_norm: false,
    };
    finish(a, x, y, z, beta_hat, Vec::new(), vec![summary])
}

/// Global no-intercept least squares of y on x.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: f64,
    pub fitted: DVector<f64>,
}

pub fn fit_ols(x: &DVector<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(dim(format!("x has {} entries, y has {}", x.len(), y.len())));
    }
    let xx = x.norm_squared();
    if xx <= 0.0 {
        return Err(Error::Degenerate("xᵀx is zero".into()));
    }
    let coef = x.dot(y) / xx;
    Ok(OlsFit {
        coef,
        fitted: x * coef,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_instance;
    use super::*;
    use crate::community::PermutationMatrix;

    #[test]
    fn single_community_identity_network_is_simple_regression() {
        let x = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.3]);
        let y = DVector::from_vec(vec![2.1, -0.9, 4.2, 0.5]);
        let a = AdjacencyMatrix::identity(4);
        let z = Membership::new(vec![0; 4], 1).unwrap();
        let expected = x.dot(&y) / x.dot(&x);
        let clse = fit_clse(&a, &x, &y, &z).unwrap();
        let single = fit_singleton(&a, &x, &y, &z).unwrap();
        let ols = fit_ols(&x, &y).unwrap();
        assert!((clse.beta_hat.get(0, 0) - expected).abs() < 1e-14);
        assert!((single.beta_hat.get(0, 0) - expected).abs() < 1e-14);
        assert!((ols.coef - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let (a, z, x, _, _) = random_instance(40, 3, 2);
        let y = DVector::zeros(40);
        assert_eq!(
            fit_clse(&a, &x, &y, &z).unwrap().beta_hat.values(),
            &DMatrix::zeros(3, 3)
        );
        // min-norm branch: x = 0 makes every H_k zero
        let fit = fit_clse(&a, &DVector::zeros(40), &y, &z).unwrap();
        assert!(fit.min_norm_used());
        assert_eq!(fit.beta_hat.values(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn noiseless_data_recovered() {
        for seed in 0..5 {
            let (a, z, x, _, beta) = random_instance(120, 3, seed);
            let y = predict(&a, &x, &z, &beta).unwrap();
            let fit = fit_clse(&a, &x, &y, &z).unwrap();
            assert!(!fit.min_norm_used());
            assert!((fit.beta_hat.values() - beta.values()).norm() < 1e-8);
            assert!(fit.residuals.amax() < 1e-9);
        }
    }

    #[test]
    fn relabeling_conjugates_coefficients() {
        let (a, z, x, y, _) = random_instance(60, 3, 7);
        let q = PermutationMatrix::from_map(vec![1, 2, 0]).unwrap();
        let base = fit_clse(&a, &x, &y, &z).unwrap();
        let moved = fit_clse(&a, &x, &y, &z.relabel(&q).unwrap()).unwrap();
        let expected = q.conjugate(base.beta_hat.values()).unwrap();
        assert!((moved.beta_hat.values() - expected).amax() < 1e-10);
        assert!((moved.fitted - base.fitted).amax() < 1e-10);
    }

    #[test]
    fn scaling_x_rescales_coefficients() {
        let (a, z, x, y, _) = random_instance(60, 2, 3);
        let base = fit_clse(&a, &x, &y, &z).unwrap();
        let c = -2.5;
        let scaled = fit_clse(&a, &(&x * c), &y, &z).unwrap();
        assert!((scaled.beta_hat.values() * c - base.beta_hat.values()).amax() < 1e-10);
        assert!((scaled.fitted - base.fitted).amax() < 1e-10);
    }

    #[test]
    fn row_estimator_recovers_row_truth() {
        let (a, z, x, _, _) = random_instance(90, 3, 4);
        let truth = CoefficientMatrix::row(&DVector::from_vec(vec![0.7, -1.2, 2.0]));
        let y = predict(&a, &x, &z, &truth).unwrap();
        let fit = fit_row(&a, &x, &y, &z).unwrap();
        assert!((fit.beta_hat.values() - truth.values()).amax() < 1e-10);
        assert_eq!(fit.beta_hat.structure(), super::super::Structure::Row);
    }

    #[test]
    fn row_equals_singleton_for_one_community() {
        let (a, _, x, y, _) = random_instance(30, 1, 5);
        let z = Membership::new(vec![0; 30], 1).unwrap();
        let r = fit_row(&a, &x, &y, &z).unwrap();
        let s = fit_singleton(&a, &x, &y, &z).unwrap();
        assert!((r.beta_hat.get(0, 0) - s.beta_hat.get(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_covariates() {
        let (a, z, _, y, _) = random_instance(30, 3, 6);
        let zero = DVector::zeros(30);
        let r = fit_row(&a, &zero, &y, &z).unwrap();
        assert!(r.min_norm_used());
        assert_eq!(r.beta_hat.values(), &DMatrix::zeros(3, 3));
        assert!(matches!(
            fit_singleton(&a, &zero, &y, &z),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(fit_ols(&zero, &y), Err(Error::Degenerate(_))));
    }

    #[test]
    fn singleton_exact_cases() {
        let (a, z, x, _, _) = random_instance(50, 2, 8);
        let y = a.matrix() * &x;
        let fit = fit_singleton(&a, &x, &y, &z).unwrap();
        assert!((fit.beta_hat.get(0, 0) - 1.0).abs() < 1e-14);
        let y = &y * 2.5;
        let fit = fit_singleton(&a, &x, &y, &z).unwrap();
        assert!((fit.beta_hat.get(1, 1) - 2.5).abs() < 1e-10);
    }

    #[test]
    fn ols_examples() {
        let x = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        assert!((fit_ols(&x, &(&x * 3.0)).unwrap().coef - 3.0).abs() < 1e-15);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert_eq!(fit_ols(&x, &y).unwrap().coef, 0.0);
    }
}

use super::check_inputs;
use super::design::neighborhood_sums;
use super::SolveSummary;
use crate::community::Membership;
use crate::error::{dim, param, Result};
use crate::graph::AdjacencyMatrix;
use crate::linalg::solve_normal_equations;
use nalgebra::{DMatrix, DVector};

/// K×K×p coefficient tensor; slice `l` holds the effects of covariate `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    slices: Vec<DMatrix<f64>>,
}

impl CoefficientTensor {
    pub fn new(slices: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = slices.first().map_or(0, |s| s.nrows());
        if k == 0 || slices.iter().any(|s| s.nrows() != k || s.ncols() != k) {
            return Err(param(
                "tensor slices must be non-empty K×K matrices of equal size",
            ));
        }
        Ok(Self { slices })
    }

    pub fn k(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn p(&self) -> usize {
        self.slices.len()
    }

    pub fn get(&self, k1: usize, k2: usize, l: usize) -> f64 {
        self.slices[l][(k1, k2)]
    }

    pub fn slice(&self, l: usize) -> &DMatrix<f64> {
        &self.slices[l]
    }
}

#[derive(Debug, Clone)]
pub struct MultiFit {
    pub coefficients: CoefficientTensor,
    pub solves: Vec<SolveSummary>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
}

fn check_multi(a: &AdjacencyMatrix, covariates: &DMatrix<f64>, z: &Membership) -> Result<()> {
    if covariates.ncols() == 0 {
        return Err(param("need at least one covariate"));
    }
    if covariates.nrows() != a.n() || z.n() != a.n() {
        return Err(dim(format!(
            "network has {} nodes, covariates {} rows, membership {} nodes",
            a.n(),
            covariates.nrows(),
            z.n()
        )));
    }
    Ok(())
}

/// `ŷ_i = Σ_l Σ_j A_ij β[ψ_i][ψ_j][l] X_jl`.
pub fn predict_multi(
    a: &AdjacencyMatrix,
    covariates: &DMatrix<f64>,
    z: &Membership,
    beta: &CoefficientTensor,
) -> Result<DVector<f64>> {
    check_multi(a, covariates, z)?;
    if beta.k() != z.k() || beta.p() != covariates.ncols() {
        return Err(dim(
            "coefficient tensor does not match membership or covariates",
        ));
    }
    let labels = z.labels();
    let adj = a.matrix();
    let n = a.n();
    Ok(DVector::from_fn(n, |i, _| {
        let mut acc = 0.0;
        for j in 0..n {
            if adj[(i, j)] != 0.0 {
                for l in 0..beta.p() {
                    acc += beta.get(labels[i], labels[j], l) * covariates[(j, l)];
                }
            }
        }
        acc
    }))
}

/// Multi-covariate community-wise least squares.
///
/// Community `k` regresses its responses on the K·p columns indexed by
/// `(l, k')`, column `l·K + k'` holding `Σ_{j∈k'} A_ij X_jl`; the solution is
/// `vec(β_{k,·,·})`.
pub fn fit_clse_multi(
    a: &AdjacencyMatrix,
    covariates: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<MultiFit> {
    check_multi(a, covariates, z)?;
    if y.len() != a.n() {
        return Err(dim("response length differs from node count"));
    }
    let n = a.n();
    let k = z.k();
    let p = covariates.ncols();
    let sums: Vec<DMatrix<f64>> = (0..p)
        .map(|l| {
            let col = covariates.column(l).clone_owned();
            check_inputs(a, &col, z)?;
            neighborhood_sums(a, &col, z)
        })
        .collect::<Result<_>>()?;

    let width = k * p;
    let mut slices = vec![DMatrix::zeros(k, k); p];
    let mut solves = Vec::with_capacity(k);
    for c in 0..k {
        let rows = z.members(c);
        let mut hessian = DMatrix::zeros(width, width);
        let mut rhs = DVector::zeros(width);
        let mut r = DVector::zeros(width);
        for &i in &rows {
            for l in 0..p {
                for c2 in 0..k {
                    r[l * k + c2] = sums[l][(i, c2)];
                }
            }
            hessian.ger(1.0, &r, &r, 1.0);
            rhs.axpy(y[i], &r, 1.0);
        }
        let solve = solve_normal_equations(&hessian, &rhs, n)?;
        for l in 0..p {
            for c2 in 0..k {
                slices[l][(c, c2)] = solve.solution[l * k + c2];
            }
        }
        solves.push(SolveSummary {
            community: Some(c),
            hessian,
            rank: solve.rank,
            min_norm: solve.min_norm,
        });
    }
    let coefficients = CoefficientTensor::new(slices)?;
    let fitted = predict_multi(a, covariates, z, &coefficients)?;
    let residuals = y - &fitted;
    Ok(MultiFit {
        coefficients,
        solves,
        fitted,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fit_clse;
    use super::super::tests::random_instance;
    use super::*;

    #[test]
    fn single_covariate_matches_clse() {
        for seed in 0..5 {
            let (a, z, x, y, _) = random_instance(50, 3, seed);
            let multi =
                fit_clse_multi(&a, &DMatrix::from_column_slice(50, 1, x.as_slice()), &y, &z)
                    .unwrap();
            let single = fit_clse(&a, &x, &y, &z).unwrap();
            assert!((multi.coefficients.slice(0) - single.beta_hat.values()).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_covariates_give_zero_tensor() {
        let (a, z, _, y, _) = random_instance(30, 2, 1);
        let fit = fit_clse_multi(&a, &DMatrix::zeros(30, 3), &y, &z).unwrap();
        assert!(fit.solves.iter().all(|s| s.min_norm));
        for l in 0..3 {
            assert_eq!(fit.coefficients.slice(l), &DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let (a, z, _, y, _) = random_instance(20, 2, 1);
        assert!(fit_clse_multi(&a, &DMatrix::zeros(20, 0), &y, &z).is_err());
        assert!(fit_clse_multi(&a, &DMatrix::zeros(19, 2), &y, &z).is_err());
    }
}

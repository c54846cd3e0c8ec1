//! Dense linear-algebra helpers shared by the estimators.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Eigendecomposition of a symmetric matrix, eigenvalues in ascending order.
pub struct SymmetricEigen {
    pub values: DVector<f64>,
    /// Columns are the unit eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition backed by faer; only the lower triangle is read.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let f = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = f
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let values = DVector::from_fn(n, |i, _| s[i]);
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Outcome of solving `H b = r` for a Gram matrix `H`.
#[derive(Debug, Clone)]
pub struct NormalSolve {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// True when the pseudoinverse (minimum-norm) branch produced `solution`.
    pub min_norm: bool,
}

/// Numerical rank cutoff for a Gram matrix built from `n_obs` rows.
pub fn rank_tolerance(n_obs: usize, largest: f64) -> f64 {
    n_obs.max(1) as f64 * f64::EPSILON * largest
}

/// Solves the normal equations `h b = rhs` for symmetric PSD `h`.
///
/// Full rank goes through a Cholesky solve; otherwise the minimum-norm
/// solution `h⁺ rhs` is returned and flagged.
pub fn solve_normal_equations(
    h: &DMatrix<f64>,
    rhs: &DVector<f64>,
    n_obs: usize,
) -> Result<NormalSolve> {
    let p = h.nrows();
    if h.ncols() != p || rhs.len() != p {
        return Err(Error::Dimension(format!(
            "normal equations: H is {}x{}, rhs has {}",
            h.nrows(),
            h.ncols(),
            rhs.len()
        )));
    }
    let eig = symmetric_eigen(h)?;
    let largest = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = rank_tolerance(n_obs, largest);
    let rank = eig.values.iter().filter(|&&v| v > tol).count();
    if rank == p && p > 0 {
        if let Some(chol) = h.clone().cholesky() {
            return Ok(NormalSolve {
                solution: chol.solve(rhs),
                rank,
                min_norm: false,
            });
        }
    }
    Ok(NormalSolve {
        solution: pinv_apply(&eig, tol, rhs),
        rank,
        min_norm: true,
    })
}

fn pinv_apply(eig: &SymmetricEigen, tol: f64, rhs: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(rhs.len());
    for (idx, &lambda) in eig.values.iter().enumerate() {
        if lambda > tol {
            let u = eig.vectors.column(idx);
            let coef = u.dot(rhs) / lambda;
            out.axpy(coef, &u, 1.0);
        }
    }
    out
}

/// Inverse of a symmetric positive-definite matrix, or a rank error.
pub fn spd_inverse(h: &DMatrix<f64>, n_obs: usize) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(h)?;
    let largest = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = rank_tolerance(n_obs, largest);
    if h.nrows() == 0 || eig.values.iter().any(|&v| v <= tol) {
        return Err(Error::Rank(format!(
            "matrix of order {} is numerically singular",
            h.nrows()
        )));
    }
    match h.clone().cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => Err(Error::Rank("Cholesky factorization failed".into())),
    }
}

/// Largest-magnitude symmetric difference; zero for exactly symmetric input.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netreg::community::Membership;
use netreg::graph::AdjacencyMatrix;
use netreg::regression::Structure;
use netreg::sim::{gen_instance, GeneratorOptions, Instance};

pub fn instance(n: usize, k: usize, noise_sd: f64, seed: u64) -> Instance {
    gen_instance(
        n,
        k,
        noise_sd,
        Structure::Full,
        &GeneratorOptions::default(),
        seed,
    )
    .unwrap()
}

/// `Σ_{j ∈ c} A_ij x_j` by direct summation.
pub fn block_sum(a: &AdjacencyMatrix, x: &DVector<f64>, z: &Membership, i: usize, c: usize) -> f64 {
    (0..a.n())
        .filter(|&j| z.label(j) == c)
        .map(|j| a.matrix()[(i, j)] * x[j])
        .sum()
}

/// Community `c`'s rows `[Σ_{j∈0} A_ij x_j, …]` and responses.
pub fn community_system(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
    c: usize,
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let rows = z.members(c);
    let k = z.k();
    let m = DMatrix::from_fn(rows.len(), k, |r, c2| block_sum(a, x, z, rows[r], c2));
    let yy = DVector::from_fn(rows.len(), |r, _| y[rows[r]]);
    (m, yy, rows)
}

/// Least squares by Householder QR; `None` when the design is numerically
/// rank deficient.
pub fn qr_solve(m: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let sv = m.singular_values();
    if m.ncols() > m.nrows() || sv.min() <= 1e-8 * sv.max() {
        return None;
    }
    let qr = m.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty)
}

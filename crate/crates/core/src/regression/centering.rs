use super::clse::finish;
use super::design::{block_degrees, neighborhood_sums, DesignMatrix};
use super::{check_inputs, CoefficientMatrix, FitResult, SolveSummary};
use crate::community::Membership;
use crate::error::{dim, Result};
use crate::graph::AdjacencyMatrix;
use crate::linalg::solve_normal_equations;
use nalgebra::{DMatrix, DVector};

/// Data centered so that per-community intercepts vanish.
#[derive(Debug, Clone)]
pub struct CenteredData {
    /// `y_i - ȳ^(ψ_i)`.
    pub y_tilde: DVector<f64>,
    /// K×n; row `k` holds `x_j - μ_{k,ψ_j}`, the covariates as seen by
    /// responses in community `k`.
    pub x_tilde: DMatrix<f64>,
    /// `μ_{k,k'}`: mean of `x` over community `k'`, each node weighted by its
    /// number of edges into community `k`.
    pub covariate_means: DMatrix<f64>,
    /// `ȳ^(k)`.
    pub response_means: Vec<f64>,
    /// `(k, k')` blocks without edges; their `μ` is set to 0.
    pub empty_blocks: Vec<(usize, usize)>,
}

pub fn center_data(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<CenteredData> {
    check_inputs(a, x, z)?;
    if y.len() != a.n() {
        return Err(dim("response length differs from node count"));
    }
    let n = a.n();
    let k = z.k();
    let labels = z.labels();
    let sizes = z.sizes();

    let mut response_means = vec![0.0; k];
    for i in 0..n {
        response_means[labels[i]] += y[i];
    }
    for (m, &s) in response_means.iter_mut().zip(&sizes) {
        *m /= s as f64;
    }
    let y_tilde = DVector::from_fn(n, |i, _| y[i] - response_means[labels[i]]);

    // w[k][j] = Σ_{i ∈ k} A_ij, the weight node j carries for response community k
    let adj = a.matrix();
    let mut weights = DMatrix::<f64>::zeros(k, n);
    for j in 0..n {
        for (i, &aij) in adj.column(j).iter().enumerate() {
            if aij != 0.0 {
                weights[(labels[i], j)] += 1.0;
            }
        }
    }
    let mut num = DMatrix::<f64>::zeros(k, k);
    let mut den = DMatrix::<f64>::zeros(k, k);
    for c in 0..k {
        for j in 0..n {
            num[(c, labels[j])] += weights[(c, j)] * x[j];
            den[(c, labels[j])] += weights[(c, j)];
        }
    }
    let mut covariate_means = DMatrix::zeros(k, k);
    let mut empty_blocks = Vec::new();
    for c in 0..k {
        for c2 in 0..k {
            if den[(c, c2)] > 0.0 {
                covariate_means[(c, c2)] = num[(c, c2)] / den[(c, c2)];
            } else {
                empty_blocks.push((c, c2));
            }
        }
    }
    let x_tilde = DMatrix::from_fn(k, n, |c, j| x[j] - covariate_means[(c, labels[j])]);
    Ok(CenteredData {
        y_tilde,
        x_tilde,
        covariate_means,
        response_means,
        empty_blocks,
    })
}

/// CLSE with one intercept per response community.
#[derive(Debug, Clone)]
pub struct CenteredFit {
    /// Slopes from the centered problems; `fitted` and `residuals` are on the
    /// original scale and include the intercepts.
    pub fit: FitResult,
    pub intercepts: Vec<f64>,
    pub centered: CenteredData,
}

/// Fits each community on its own centered covariates (row `k` of
/// `x_tilde`) and the centered responses, then recovers
/// `β₀^(k) = ȳ^(k) - (1/n_k) Σ_{k'} β_{k,k'} Σ_{i∈k} Σ_{j∈k'} A_ij x_j`.
pub fn fit_clse_centered(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &Membership,
) -> Result<CenteredFit> {
    let centered = center_data(a, x, y, z)?;
    let n = a.n();
    let k = z.k();
    let sums = neighborhood_sums(a, x, z)?;
    let degrees = block_degrees(a, z)?;
    let mut beta = DMatrix::zeros(k, k);
    let mut designs = Vec::with_capacity(k);
    let mut solves = Vec::with_capacity(k);
    for c in 0..k {
        let rows = z.members(c);
        let mut matrix = DMatrix::zeros(n, k);
        for &i in &rows {
            for c2 in 0..k {
                matrix[(i, c2)] =
                    sums[(i, c2)] - centered.covariate_means[(c, c2)] * degrees[(i, c2)];
            }
        }
        let design = DesignMatrix {
            community: c,
            matrix,
            rows,
        };
        let hessian = design.gram();
        let solve = solve_normal_equations(&hessian, &design.cross(&centered.y_tilde), n)?;
        beta.row_mut(c).copy_from(&solve.solution.transpose());
        solves.push(SolveSummary {
            community: Some(c),
            hessian,
            rank: solve.rank,
            min_norm: solve.min_norm,
        });
        designs.push(design);
    }

    let sizes = z.sizes();
    let labels = z.labels();
    let mut block_totals = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        for c2 in 0..k {
            block_totals[(labels[i], c2)] += sums[(i, c2)];
        }
    }
    let intercepts: Vec<f64> = (0..k)
        .map(|c| {
            let shift: f64 = (0..k).map(|c2| beta[(c, c2)] * block_totals[(c, c2)]).sum();
            centered.response_means[c] - shift / sizes[c] as f64
        })
        .collect();

    let beta_hat = CoefficientMatrix::full(beta)?;
    let mut fit = finish(a, x, y, z, beta_hat, designs, solves)?;
    for i in 0..n {
        fit.fitted[i] += intercepts[labels[i]];
    }
    fit.residuals = y - &fit.fitted;
    Ok(CenteredFit {
        fit,
        intercepts,
        centered,
    })
}

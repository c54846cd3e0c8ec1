use super::check_inputs;
use crate::community::Membership;
use crate::error::{param, Result};
use crate::graph::AdjacencyMatrix;
use nalgebra::{DMatrix, DVector};

/// Design matrix `M_k = diag(Z_{·,k}) (1 xᵀ ∗ A) Z` for response community `k`.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub community: usize,
    /// n×K; rows of nodes outside community `k` are zero.
    pub matrix: DMatrix<f64>,
    /// Nodes of community `k`, increasing.
    pub rows: Vec<usize>,
}

impl DesignMatrix {
    /// `M_kᵀ M_k`, summed over the community's rows only.
    pub fn gram(&self) -> DMatrix<f64> {
        let kk = self.matrix.ncols();
        let mut h = DMatrix::zeros(kk, kk);
        for &i in &self.rows {
            let r = self.matrix.row(i);
            for a in 0..kk {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in 0..kk {
                    h[(a, b)] += ra * r[b];
                }
            }
        }
        h
    }

    /// `M_kᵀ y`.
    pub fn cross(&self, y: &DVector<f64>) -> DVector<f64> {
        let kk = self.matrix.ncols();
        let mut out = DVector::zeros(kk);
        for &i in &self.rows {
            for a in 0..kk {
                out[a] += self.matrix[(i, a)] * y[i];
            }
        }
        out
    }
}

/// `S[i][k'] = Σ_{j : ψ_j = k'} A_ij x_j`, the community-aggregated
/// neighborhood covariates. Equals `A diag(x) Z`.
pub fn neighborhood_sums(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    z: &Membership,
) -> Result<DMatrix<f64>> {
    check_inputs(a, x, z)?;
    let n = a.n();
    let adj = a.matrix();
    let labels = z.labels();
    let mut s = DMatrix::zeros(n, z.k());
    for j in 0..n {
        let (lj, xj) = (labels[j], x[j]);
        // column-major storage: walk column j of A
        for (i, &aij) in adj.column(j).iter().enumerate() {
            if aij != 0.0 {
                s[(i, lj)] += xj;
            }
        }
    }
    Ok(s)
}

/// `D[i][k'] = Σ_{j : ψ_j = k'} A_ij`, edges from each node into each community.
pub fn block_degrees(a: &AdjacencyMatrix, z: &Membership) -> Result<DMatrix<f64>> {
    neighborhood_sums(a, &DVector::from_element(a.n(), 1.0), z)
}

pub(crate) fn design_from_sums(sums: &DMatrix<f64>, z: &Membership, k: usize) -> DesignMatrix {
    let rows = z.members(k);
    let mut matrix = DMatrix::zeros(sums.nrows(), sums.ncols());
    for &i in &rows {
        matrix.row_mut(i).copy_from(&sums.row(i));
    }
    DesignMatrix {
        community: k,
        matrix,
        rows,
    }
}

pub fn build_design(
    a: &AdjacencyMatrix,
    x: &DVector<f64>,
    z: &Membership,
    k: usize,
) -> Result<DesignMatrix> {
    if k >= z.k() {
        return Err(param(format!(
            "community {k} out of range for K = {}",
            z.k()
        )));
    }
    let sums = neighborhood_sums(a, x, z)?;
    Ok(design_from_sums(&sums, z, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_network_design() {
        let a = AdjacencyMatrix::identity(5);
        let z = Membership::new(vec![0, 1, 1, 0, 1], 2).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        for k in 0..2 {
            let m = build_design(&a, &x, &z, k).unwrap();
            for i in 0..5 {
                for c in 0..2 {
                    let expected = if z.label(i) == k && c == k { x[i] } else { 0.0 };
                    assert_eq!(m.matrix[(i, c)], expected);
                }
            }
        }
    }

    #[test]
    fn hand_computed_complete_network() {
        let a = AdjacencyMatrix::complete(3);
        let z = Membership::new(vec![0, 0, 1], 2).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m1 = build_design(&a, &x, &z, 0).unwrap();
        assert_eq!(
            m1.matrix,
            DMatrix::from_row_slice(3, 2, &[3.0, 3.0, 3.0, 3.0, 0.0, 0.0])
        );
        let m2 = build_design(&a, &x, &z, 1).unwrap();
        assert_eq!(
            m2.matrix,
            DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 3.0, 3.0])
        );
    }

    #[test]
    fn zero_covariates_give_zero_design() {
        let a = AdjacencyMatrix::complete(4);
        let z = Membership::new(vec![0, 1, 0, 1], 2).unwrap();
        let m = build_design(&a, &DVector::zeros(4), &z, 1).unwrap();
        assert_eq!(m.matrix, DMatrix::zeros(4, 2));
    }

    #[test]
    fn dimension_errors() {
        let a = AdjacencyMatrix::identity(3);
        let z = Membership::new(vec![0, 1, 0], 2).unwrap();
        assert!(build_design(&a, &DVector::zeros(4), &z, 0).is_err());
        assert!(build_design(&a, &DVector::zeros(3), &z, 2).is_err());
    }

    #[test]
    fn gram_matches_matrix_product() {
        let a = AdjacencyMatrix::from_edges(6, [(0, 1), (1, 2), (2, 5), (3, 4), (0, 5)]).unwrap();
        let z = Membership::new(vec![0, 1, 0, 1, 2, 2], 3).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, 1.1, -0.4]);
        for k in 0..3 {
            let m = build_design(&a, &x, &z, k).unwrap();
            let dense = m.matrix.transpose() * &m.matrix;
            assert!((m.gram() - dense).amax() < 1e-14);
        }
    }
}

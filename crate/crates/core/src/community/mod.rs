//! Community memberships, spectral detection, and label alignment.

mod alignment;
mod kmeans;

pub use alignment::{
    agreement_counts, align_exhaustive, align_hungarian, align_permutation, PermutationMatrix,
};
pub use kmeans::{kmeans, kmeans_points, KMeansFit, DEFAULT_RESTARTS};

use crate::error::{dim, param, Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::linalg::symmetric_eigen;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Hard assignment of `n` nodes to `k` non-empty communities (0-based labels).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    labels: Vec<usize>,
    k: usize,
}

impl Membership {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(param("membership needs at least one community"));
        }
        let mut sizes = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(param(format!("node {i} has label {l} but k = {k}")));
            }
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(param(format!("community {empty} is empty")));
        }
        Ok(Self { labels, k })
    }

    /// Infers `k` as one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(labels, k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Community sizes `n_k`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Nodes of community `k` in increasing order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == k).then_some(i))
            .collect()
    }

    /// The n×K one-hot matrix Z.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n(), self.k);
        for (i, &l) in self.labels.iter().enumerate() {
            z[(i, l)] = 1.0;
        }
        z
    }

    /// Membership whose one-hot matrix is `Z Q`: label `a` becomes `perm.image(a)`.
    pub fn relabel(&self, perm: &PermutationMatrix) -> Result<Self> {
        if perm.k() != self.k {
            return Err(dim(format!(
                "permutation of order {} applied to {} communities",
                perm.k(),
                self.k
            )));
        }
        Ok(Self {
            labels: self.labels.iter().map(|&l| perm.image(l)).collect(),
            k: self.k,
        })
    }

    /// Writes `node_id,label` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node_id", "label"])?;
        for (i, l) in self.labels.iter().enumerate() {
            out.write_record([i.to_string(), l.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `node_id,label` rows; every node in `0..n` must appear exactly once.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = idx + 2;
            if rec.len() != 2 {
                return Err(Error::Format {
                    line,
                    message: format!("expected node_id,label, found {} fields", rec.len()),
                });
            }
            let parse = |s: &str| -> Result<usize> {
                s.trim().parse().map_err(|_| Error::Format {
                    line,
                    message: format!("`{s}` is not a non-negative integer"),
                })
            };
            pairs.push((parse(&rec[0])?, parse(&rec[1])?));
        }
        let n = pairs.len();
        let mut labels = vec![usize::MAX; n];
        for (node, label) in pairs {
            if node >= n || labels[node] != usize::MAX {
                return Err(param(format!(
                    "node id {node} missing, repeated, or out of range"
                )));
            }
            labels[node] = label;
        }
        Self::from_labels(labels)
    }
}

/// Row-normalized leading eigenvectors of the adjacency matrix.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// n×K, rows unit-norm except those listed in `zero_rows`.
    pub rows: DMatrix<f64>,
    /// The K leading singular values (absolute eigenvalues), descending.
    pub singular_values: Vec<f64>,
    /// Rows whose norm was numerically zero; left unnormalized.
    pub zero_rows: Vec<usize>,
}

const ZERO_ROW_TOL: f64 = 1e-12;

/// Eigen-pairs of `A` ordered by decreasing absolute eigenvalue.
fn leading_pairs(a: &AdjacencyMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = symmetric_eigen(a.matrix())?;
    let n = eig.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.values[j]
            .abs()
            .total_cmp(&eig.values[i].abs())
            .then(i.cmp(&j))
    });
    let sv = order.iter().map(|&i| eig.values[i].abs()).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.vectors[(r, order[c])]);
    Ok((sv, vecs))
}

/// Spectral embedding used for SCORE-style detection.
///
/// Each eigenvector column is sign-fixed so that its largest-magnitude entry
/// is positive, then rows are scaled to unit Euclidean norm.
pub fn spectral_embed(a: &AdjacencyMatrix, k: usize) -> Result<SpectralEmbedding> {
    let n = a.n();
    if k == 0 || k > n {
        return Err(param(format!("need 1 <= K <= n, got K = {k}, n = {n}")));
    }
    let (sv, vecs) = leading_pairs(a)?;
    let mut rows = vecs.columns(0, k).into_owned();
    for mut col in rows.column_iter_mut() {
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    let mut zero_rows = Vec::new();
    for (i, mut row) in rows.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm <= ZERO_ROW_TOL {
            zero_rows.push(i);
        } else {
            row /= norm;
        }
    }
    Ok(SpectralEmbedding {
        rows,
        singular_values: sv[..k].to_vec(),
        zero_rows,
    })
}

/// Scree values and the largest-gap elbow suggestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreeSummary {
    pub singular_values: Vec<f64>,
    pub suggested_k: usize,
    /// No gap stands out; the suggestion falls back to 1.
    pub flat: bool,
}

impl ScreeSummary {
    /// Writes `index,sigma` rows (1-based index).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "sigma"])?;
        for (i, s) in self.singular_values.iter().enumerate() {
            out.write_record([(i + 1).to_string(), crate::io::fmt_f64(*s)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Leading `k_max` singular values of `A` and the K maximizing `σ_k - σ_{k+1}`.
pub fn estimate_k(a: &AdjacencyMatrix, k_max: usize) -> Result<ScreeSummary> {
    let n = a.n();
    if k_max == 0 || k_max > n {
        return Err(param(format!(
            "need 1 <= k_max <= n, got {k_max} with n = {n}"
        )));
    }
    let (sv, _) = leading_pairs(a)?;
    let singular_values = sv[..k_max].to_vec();
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 1..k_max {
        let gap = singular_values[k - 1] - singular_values[k];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    let scale = singular_values[0].abs().max(f64::MIN_POSITIVE);
    let flat = k_max < 2 || best_gap <= 1e-10 * scale;
    Ok(ScreeSummary {
        singular_values,
        suggested_k: if flat { 1 } else { best_k },
        flat,
    })
}

/// Spectral embedding followed by k-means.
pub fn detect_communities(
    a: &AdjacencyMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Membership> {
    let emb = spectral_embed(a, k)?;
    kmeans(&emb, k, seed, restarts)
}

/// Nodes whose label disagrees with `truth` after optimal alignment.
pub fn misclustering_count(estimate: &Membership, truth: &Membership) -> Result<usize> {
    let perm = align_permutation(estimate, truth)?;
    let aligned = estimate.relabel(&perm)?;
    Ok(aligned
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a != b)
        .count())
}

const PERTURB_ATTEMPTS: usize = 1000;

/// Moves `alpha_n` distinct, uniformly chosen nodes to a uniformly chosen
/// different community, redrawing whenever a community would become empty.
pub fn perturb_membership(z: &Membership, alpha_n: usize, seed: u64) -> Result<Membership> {
    let n = z.n();
    let k = z.k();
    if alpha_n > n {
        return Err(param(format!("cannot perturb {alpha_n} of {n} nodes")));
    }
    if k < 2 {
        return Err(param("perturbation needs at least two communities"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PERTURB_ATTEMPTS {
        let mut labels = z.labels().to_vec();
        for node in rand::seq::index::sample(&mut rng, n, alpha_n) {
            let old = labels[node];
            let draw = rng.random_range(0..k - 1);
            labels[node] = if draw >= old { draw + 1 } else { draw };
        }
        if let Ok(m) = Membership::new(labels, k) {
            return Ok(m);
        }
    }
    Err(Error::Degenerate(format!(
        "no perturbation of {alpha_n} nodes kept all {k} communities non-empty"
    )))
}

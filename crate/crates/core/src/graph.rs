//! Undirected networks with forced self-loops and the stochastic block model.

use crate::community::Membership;
use crate::error::{dim, param, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Symmetric 0/1 adjacency matrix whose diagonal is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: DMatrix<f64>,
}

impl AdjacencyMatrix {
    /// Validates a dense 0/1 symmetric matrix and forces the diagonal to 1.
    pub fn from_dense(mut entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(dim(format!(
                "adjacency must be square, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(param(format!("adjacency entry ({i},{j}) = {v} is not 0/1")));
                }
                if j < i && v != entries[(j, i)] {
                    return Err(param(format!("adjacency is not symmetric at ({i},{j})")));
                }
            }
        }
        entries.fill_diagonal(1.0);
        Ok(Self { entries })
    }

    /// Network with self-loops only.
    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    /// Every pair connected.
    pub fn complete(n: usize) -> Self {
        Self {
            entries: DMatrix::from_element(n, n, 1.0),
        }
    }

    /// Builds the network from undirected edges; each pair may appear in either order.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut entries = DMatrix::identity(n, n);
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(param(format!("edge ({i},{j}) out of range for n = {n}")));
            }
            entries[(i, j)] = 1.0;
            entries[(j, i)] = 1.0;
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.entries[(i, j)] == 1.0
    }

    /// Dense 0/1 view.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Row sums, self-loop included.
    pub fn degrees(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    /// Off-diagonal edges as `(i, j)` with `i < j`, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Graph Laplacian `diag(A 1) - A`. Self-loops cancel on the diagonal.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let deg = self.degrees();
        let mut l = -self.entries.clone();
        for (i, d) in deg.into_iter().enumerate() {
            l[(i, i)] += d;
        }
        l
    }

    /// True when symmetry and the unit diagonal hold.
    pub fn satisfies_invariants(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            self.entries[(i, i)] == 1.0
                && (0..i).all(|j| {
                    let v = self.entries[(i, j)];
                    (v == 0.0 || v == 1.0) && v == self.entries[(j, i)]
                })
        })
    }

    /// Reads a whitespace-separated, 0-based edge list.
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read_edge_list<R: BufRead>(reader: R, n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("expected two node indices, found {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("`{s}` is not a node index"),
                })?;
                if v >= n {
                    return Err(Error::Format {
                        line: line_no,
                        message: format!("node index {v} out of range for n = {n}"),
                    });
                }
                Ok(v)
            };
            let i = parse(fields[0])?;
            let j = parse(fields[1])?;
            edges.push((i, j));
        }
        Self::from_edges(n, edges)
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    /// Writes the full 0/1 matrix as comma-separated rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.entries.row_iter() {
            let line: Vec<&str> = row
                .iter()
                .map(|&v| if v == 1.0 { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

pub fn load_edge_list(path: impl AsRef<Path>, n: usize) -> Result<AdjacencyMatrix> {
    let file = File::open(path)?;
    AdjacencyMatrix::read_edge_list(BufReader::new(file), n)
}

pub fn save_edge_list(adjacency: &AdjacencyMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    adjacency.write_edge_list(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Checks that `b` is a symmetric matrix with entries in `[0, 1]`.
pub fn validate_block_probs(b: &DMatrix<f64>) -> Result<()> {
    let k = b.nrows();
    if b.ncols() != k || k == 0 {
        return Err(param(format!(
            "block probability matrix must be square and non-empty, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    for i in 0..k {
        for j in 0..k {
            let v = b[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                return Err(param(format!(
                    "block probability B[{i}][{j}] = {v} outside [0, 1]"
                )));
            }
            if v != b[(j, i)] {
                return Err(param(format!(
                    "block probabilities not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Maximum entry of the block probability matrix.
pub fn network_sparsity(b: &DMatrix<f64>) -> Result<f64> {
    validate_block_probs(b)?;
    Ok(b.max())
}

/// Stochastic block model parameters.
#[derive(Debug, Clone)]
pub struct SbmParams {
    membership: Membership,
    block_probs: DMatrix<f64>,
}

impl SbmParams {
    pub fn new(membership: Membership, block_probs: DMatrix<f64>) -> Result<Self> {
        validate_block_probs(&block_probs)?;
        if block_probs.nrows() != membership.k() {
            return Err(param(format!(
                "block matrix is {}x{} but membership has {} communities",
                block_probs.nrows(),
                block_probs.ncols(),
                membership.k()
            )));
        }
        if let Some(k) = membership.sizes().iter().position(|&s| s == 0) {
            return Err(param(format!("community {k} is empty")));
        }
        Ok(Self {
            membership,
            block_probs,
        })
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn block_probs(&self) -> &DMatrix<f64> {
        &self.block_probs
    }
}

/// Draws an SBM network.
///
/// Row `i` uses its own ChaCha stream (stream id `i`) and consumes one
/// uniform per `j > i` in increasing order, so the result depends only on
/// `(params, seed)` and not on the order rows are visited.
pub fn sample_sbm(params: &SbmParams, seed: u64) -> AdjacencyMatrix {
    let labels = params.membership.labels();
    let n = labels.len();
    let b = &params.block_probs;
    let mut entries = DMatrix::identity(n, n);
    let base = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        let li = labels[i];
        for j in (i + 1)..n {
            let p = b[(li, labels[j])];
            let u: f64 = rng.random();
            if u < p {
                entries[(i, j)] = 1.0;
                entries[(j, i)] = 1.0;
            }
        }
    }
    AdjacencyMatrix { entries }
}

use super::{Membership, SpectralEmbedding};
use crate::error::{param, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_ITERATIONS: usize = 300;

/// Best Lloyd run over all restarts.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub membership: Membership,
    /// K×d centroids, rows indexed by the canonical labels of `membership`.
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
    pub restart: usize,
}

/// k-means on the rows of a spectral embedding.
pub fn kmeans(
    embedding: &SpectralEmbedding,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Membership> {
    Ok(kmeans_points(&embedding.rows, k, seed, restarts)?.membership)
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
///
/// Restart `r` draws from ChaCha stream `r` of `seed`; ties on the objective
/// go to the lowest restart index. Labels are renumbered by first appearance.
pub fn kmeans_points(
    points: &DMatrix<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansFit> {
    if k == 0 {
        return Err(param("k-means needs k >= 1"));
    }
    if restarts == 0 {
        return Err(param("k-means needs at least one restart"));
    }
    let distinct = count_distinct_rows(points);
    if distinct < k {
        return Err(Error::Degenerate(format!(
            "{distinct} distinct points cannot form {k} clusters"
        )));
    }
    let mut best: Option<(Vec<usize>, DMatrix<f64>, f64, Vec<f64>, usize)> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (labels, centroids, obj, trace) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| obj < b.2) {
            best = Some((labels, centroids, obj, trace, r));
        }
    }
    let (labels, centroids, objective, trace, restart) = best.expect("at least one restart");

    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    let canonical: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();
    let mut ordered = DMatrix::zeros(k, points.ncols());
    for (old, &new) in remap.iter().enumerate() {
        ordered.row_mut(new).copy_from(&centroids.row(old));
    }
    Ok(KMeansFit {
        membership: Membership::new(canonical, k)?,
        centroids: ordered,
        objective,
        trace,
        restart,
    })
}

fn count_distinct_rows(points: &DMatrix<f64>) -> usize {
    let mut rows: Vec<Vec<f64>> = points
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    rows.len()
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|d| {
            let diff = points[(i, d)] - centroids[(c, d)];
            diff * diff
        })
        .sum()
}

fn kmeans_plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("a point with positive distance exists");
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd(
    points: &DMatrix<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, DMatrix<f64>, f64, Vec<f64>) {
    let n = points.nrows();
    let dims = points.ncols();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut next = vec![0usize; n];
        let mut dist = vec![0.0f64; n];
        for i in 0..n {
            let (mut best_c, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(points, i, &centroids, c);
                if d < best_d {
                    best_c = c;
                    best_d = d;
                }
            }
            next[i] = best_c;
            dist[i] = best_d;
        }

        // empty clusters take the point farthest from its centroid
        let mut sizes = vec![0usize; k];
        for &l in &next {
            sizes[l] += 1;
        }
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let donor = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                .expect("n >= k guarantees a donor cluster");
            sizes[next[donor]] -= 1;
            next[donor] = empty;
            sizes[empty] += 1;
            dist[donor] = 0.0;
            centroids.row_mut(empty).copy_from(&points.row(donor));
        }

        centroids.fill(0.0);
        for i in 0..n {
            for d in 0..dims {
                centroids[(next[i], d)] += points[(i, d)];
            }
        }
        for c in 0..k {
            let s = sizes[c] as f64;
            centroids.row_mut(c).scale_mut(1.0 / s);
        }
        let obj: f64 = (0..n)
            .map(|i| sq_dist(points, i, &centroids, next[i]))
            .sum();
        if let Some(&prev) = trace.last() {
            debug_assert!(obj <= prev + 1e-9 * prev.max(1.0), "k-means objective rose");
        }
        trace.push(obj);
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }
    let obj = *trace.last().expect("at least one iteration");
    (labels, centroids, obj, trace)
}

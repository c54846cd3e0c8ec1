use super::Membership;
use crate::error::{dim, param, Result};
use nalgebra::DMatrix;

/// K×K permutation matrix stored as the image of each row index:
/// `Q[a][image(a)] = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    map: Vec<usize>,
}

impl PermutationMatrix {
    pub fn identity(k: usize) -> Self {
        Self {
            map: (0..k).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let k = map.len();
        let mut seen = vec![false; k];
        for &m in &map {
            if m >= k || seen[m] {
                return Err(param(format!("{map:?} is not a permutation of 0..{k}")));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    /// Reads a 0/1 matrix with exactly one 1 per row and column.
    pub fn from_matrix(q: &DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(dim("permutation matrix must be square"));
        }
        let mut map = Vec::with_capacity(q.nrows());
        for row in q.row_iter() {
            if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.sum() != 1.0 {
                return Err(param("rows of a permutation matrix hold a single 1"));
            }
            map.push(row.iter().position(|&v| v == 1.0).unwrap_or(0));
        }
        Self::from_map(map)
    }

    pub fn k(&self) -> usize {
        self.map.len()
    }

    pub fn image(&self, a: usize) -> usize {
        self.map[a]
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut q = DMatrix::zeros(k, k);
        for (a, &b) in self.map.iter().enumerate() {
            q[(a, b)] = 1.0;
        }
        q
    }

    /// Qᵀ, which is also the inverse.
    pub fn transpose(&self) -> Self {
        let mut inv = vec![0; self.k()];
        for (a, &b) in self.map.iter().enumerate() {
            inv[b] = a;
        }
        Self { map: inv }
    }

    /// `Qᵀ B Q` for a K×K matrix `B`.
    pub fn conjugate(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = self.k();
        if b.nrows() != k || b.ncols() != k {
            return Err(dim(format!(
                "cannot conjugate a {}x{} matrix by a {k}-permutation",
                b.nrows(),
                b.ncols()
            )));
        }
        let mut out = DMatrix::zeros(k, k);
        for a in 0..k {
            for c in 0..k {
                out[(self.map[a], self.map[c])] = b[(a, c)];
            }
        }
        Ok(out)
    }

    /// `‖Ẑ Q - Z‖_F²`.
    pub fn objective(&self, estimate: &Membership, truth: &Membership) -> Result<f64> {
        check_pair(estimate, truth)?;
        let agree = estimate
            .labels()
            .iter()
            .zip(truth.labels())
            .filter(|(&a, &b)| self.map[a] == b)
            .count();
        Ok(2.0 * (estimate.n() - agree) as f64)
    }
}

fn check_pair(estimate: &Membership, truth: &Membership) -> Result<()> {
    if estimate.n() != truth.n() || estimate.k() != truth.k() {
        return Err(param(format!(
            "memberships differ in shape: (n={}, K={}) vs (n={}, K={})",
            estimate.n(),
            estimate.k(),
            truth.n(),
            truth.k()
        )));
    }
    Ok(())
}

/// `C[a][b]` = number of nodes with estimated label `a` and true label `b`.
pub fn agreement_counts(estimate: &Membership, truth: &Membership) -> Result<DMatrix<f64>> {
    check_pair(estimate, truth)?;
    let k = truth.k();
    let mut c = DMatrix::zeros(k, k);
    for (&a, &b) in estimate.labels().iter().zip(truth.labels()) {
        c[(a, b)] += 1.0;
    }
    Ok(c)
}

const EXHAUSTIVE_MAX_K: usize = 8;

/// Permutation minimizing `‖Ẑ Q - Z‖_F²`.
///
/// Enumerates all K! permutations for K <= 8 and solves the assignment
/// problem on the agreement counts otherwise.
pub fn align_permutation(estimate: &Membership, truth: &Membership) -> Result<PermutationMatrix> {
    let counts = agreement_counts(estimate, truth)?;
    if counts.nrows() <= EXHAUSTIVE_MAX_K {
        Ok(align_exhaustive(&counts))
    } else {
        Ok(align_hungarian(&counts))
    }
}

/// Maximum-agreement permutation by enumeration; first maximum in
/// lexicographic order wins.
pub fn align_exhaustive(counts: &DMatrix<f64>) -> PermutationMatrix {
    let k = counts.nrows();
    let mut perm: Vec<usize> = (0..k).collect();
    let score = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(a, &b)| counts[(a, b)]).sum() };
    let mut best = perm.clone();
    let mut best_score = score(&perm);
    while next_permutation(&mut perm) {
        let s = score(&perm);
        if s > best_score {
            best_score = s;
            best.clone_from(&perm);
        }
    }
    PermutationMatrix { map: best }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Maximum-agreement permutation via the O(K³) Hungarian method with
/// row/column potentials.
pub fn align_hungarian(counts: &DMatrix<f64>) -> PermutationMatrix {
    let k = counts.nrows();
    let top = counts.max();
    // minimize top - C; 1-based bookkeeping with index 0 as the virtual column
    let cost = |i: usize, j: usize| top - counts[(i - 1, j - 1)];
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut map = vec![0; k];
    for j in 1..=k {
        map[owner[j] - 1] = j - 1;
    }
    PermutationMatrix { map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_perms(k: usize) -> Vec<Vec<usize>> {
        let mut p: Vec<usize> = (0..k).collect();
        let mut out = vec![p.clone()];
        while next_permutation(&mut p) {
            out.push(p.clone());
        }
        out
    }

    #[test]
    fn identical_memberships_align_to_identity() {
        let z = Membership::new(vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        assert!(align_permutation(&z, &z).unwrap().is_identity());
    }

    #[test]
    fn swapped_labels() {
        let z = Membership::new(vec![0, 0, 1, 1, 1], 2).unwrap();
        let zh = Membership::new(vec![1, 1, 0, 0, 0], 2).unwrap();
        let q = align_permutation(&zh, &z).unwrap();
        assert_eq!(q.map(), &[1, 0]);
        assert_eq!(q.objective(&zh, &z).unwrap(), 0.0);
        let product = zh.one_hot() * q.matrix();
        assert_eq!(product, z.one_hot());
    }

    #[test]
    fn recovers_random_relabeling_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let z = loop {
                let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
                if let Ok(m) = Membership::new(labels, 4) {
                    break m;
                }
            };
            let mut map: Vec<usize> = (0..4).collect();
            map.shuffle(&mut rng);
            let q0 = PermutationMatrix::from_map(map).unwrap();
            let zh = z.relabel(&q0).unwrap();
            assert_eq!(zh.one_hot(), z.one_hot() * q0.matrix());
            let q = align_permutation(&zh, &z).unwrap();
            assert_eq!(zh.one_hot() * q.matrix(), z.one_hot());
            assert_eq!(q, q0.transpose());
            // brute force over all 24 permutations agrees
            let best = all_perms(4)
                .into_iter()
                .map(|p| PermutationMatrix::from_map(p).unwrap())
                .filter(|p| p.objective(&zh, &z).unwrap() == 0.0)
                .collect::<Vec<_>>();
            assert_eq!(best, vec![q]);
        }
    }

    #[test]
    fn conjugation_matches_matrix_product() {
        let q = PermutationMatrix::from_map(vec![2, 0, 1]).unwrap();
        let b = DMatrix::from_fn(3, 3, |i, j| (3 * i + j) as f64);
        let direct = q.matrix().transpose() * &b * q.matrix();
        assert_eq!(q.conjugate(&b).unwrap(), direct);
    }

    #[test]
    fn hungarian_on_large_k() {
        let k = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut map: Vec<usize> = (0..k).collect();
        map.shuffle(&mut rng);
        let z = Membership::new((0..240).map(|i| i % k).collect(), k).unwrap();
        let q0 = PermutationMatrix::from_map(map).unwrap();
        let zh = z.relabel(&q0).unwrap();
        let q = align_permutation(&zh, &z).unwrap();
        assert_eq!(q, q0.transpose());
    }

    proptest! {
        #[test]
        fn alignment_is_globally_optimal(
            k in 1usize..=5,
            raw in proptest::collection::vec((0usize..5, 0usize..5), 5..60),
        ) {
            let est: Vec<usize> = (0..k).chain(raw.iter().map(|p| p.0 % k)).collect();
            let tru: Vec<usize> = (0..k).rev().chain(raw.iter().map(|p| p.1 % k)).collect();
            let zh = Membership::new(est, k).unwrap();
            let z = Membership::new(tru, k).unwrap();
            let q = align_permutation(&zh, &z).unwrap();
            let qm = q.matrix();
            prop_assert_eq!(qm.transpose() * &qm, DMatrix::identity(k, k));
            let obj = q.objective(&zh, &z).unwrap();
            for p in all_perms(k) {
                let other = PermutationMatrix::from_map(p).unwrap();
                prop_assert!(obj <= other.objective(&zh, &z).unwrap());
            }
            let counts = agreement_counts(&zh, &z).unwrap();
            let h = align_hungarian(&counts);
            prop_assert_eq!(h.objective(&zh, &z).unwrap(), obj);
        }
    }
}

use super::config::GeneratorOptions;
use crate::community::Membership;
use crate::error::{param, Error, Result};
use crate::graph::{sample_sbm, AdjacencyMatrix, SbmParams};
use crate::regression::{predict, CoefficientMatrix, Structure};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use sha2::{Digest, Sha256};

const MEMBERSHIP_ATTEMPTS: usize = 1000;

fn hash_to_u64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Per-replicate seed, a pure function of its arguments.
pub fn derive_seed(base_seed: u64, experiment: &str, n: usize, k: usize, replicate: usize) -> u64 {
    hash_to_u64(format!("{base_seed}|{experiment}|{n}|{k}|{replicate}").as_bytes())
}

/// Independent seed for one stage of a replicate (network, detection, ...).
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    hash_to_u64(format!("{seed}|{tag}").as_bytes())
}

/// One simulated data set with its generating parameters.
#[derive(Debug, Clone)]
pub struct Instance {
    pub a: AdjacencyMatrix,
    pub z: Membership,
    pub block_probs: DMatrix<f64>,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub beta_star: CoefficientMatrix,
}

/// Memberships drawn uniformly over `K` labels, redrawn while any is empty.
pub fn uniform_membership<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Membership> {
    for _ in 0..MEMBERSHIP_ATTEMPTS {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        if let Ok(z) = Membership::new(labels, k) {
            return Ok(z);
        }
    }
    Err(Error::Degenerate(format!(
        "{MEMBERSHIP_ATTEMPTS} membership draws with n = {n}, K = {k} all left a community empty"
    )))
}

/// Symmetric block probabilities with `U(0, offdiag_high)` entries and
/// `diag_shift` added on the diagonal.
pub fn random_block_probs<R: Rng>(k: usize, opts: &GeneratorOptions, rng: &mut R) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = rng.random::<f64>() * opts.offdiag_high
                + if i == j { opts.diag_shift } else { 0.0 };
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

pub fn random_coefficients<R: Rng>(
    k: usize,
    structure: Structure,
    sd: f64,
    rng: &mut R,
) -> CoefficientMatrix {
    let mut draw = || sd * rng.sample::<f64, _>(StandardNormal);
    match structure {
        Structure::Full => {
            CoefficientMatrix::full(DMatrix::from_fn(k, k, |_, _| draw())).expect("square matrix")
        }
        Structure::Row => CoefficientMatrix::row(&DVector::from_fn(k, |_, _| draw())),
        Structure::Singleton => CoefficientMatrix::singleton(k, draw()),
    }
}

/// Draws `(A, Z, x, y, β*)`: uniform memberships, random block matrix, SBM
/// network, Gaussian covariates and coefficients, and
/// `y = (Zβ*Zᵀ ∗ A)x + ε` with `ε ~ N(0, noise_sd²)`.
pub fn gen_instance(
    n: usize,
    k: usize,
    noise_sd: f64,
    structure: Structure,
    opts: &GeneratorOptions,
    seed: u64,
) -> Result<Instance> {
    if k == 0 || n < k {
        return Err(param(format!("need n >= K >= 1, got n = {n}, K = {k}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(param("noise sd must be finite and non-negative"));
    }
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = uniform_membership(n, k, &mut rng)?;
    let block_probs = random_block_probs(k, opts, &mut rng);
    let x = DVector::from_fn(n, |_, _| opts.x_sd * rng.sample::<f64, _>(StandardNormal));
    let beta_star = random_coefficients(k, structure, opts.beta_sd, &mut rng);
    let a = sample_sbm(
        &SbmParams::new(z.clone(), block_probs.clone())?,
        rng.random(),
    );
    let signal = predict(&a, &x, &z, &beta_star)?;
    let y = if noise_sd == 0.0 {
        signal
    } else {
        let noise = Normal::new(0.0, noise_sd).map_err(|e| param(e.to_string()))?;
        signal + DVector::from_fn(n, |_, _| noise.sample(&mut rng))
    };
    Ok(Instance {
        a,
        z,
        block_probs,
        x,
        y,
        beta_star,
    })
}

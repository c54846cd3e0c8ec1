use super::config::GeneratorOptions;
use super::generate::{gen_instance, sub_seed};
use crate::community::Membership;
use crate::error::{dim, param, Result};
use crate::graph::{sample_sbm, SbmParams};
use crate::inference::homoskedastic_covariance;
use crate::linalg::symmetric_eigen;
use crate::regression::{build_design, fit_clse, Structure};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    pub n: usize,
    pub k: usize,
    /// Block probabilities for the eigenvalue-bound draws.
    pub block_probs: Vec<Vec<f64>>,
    pub eigen_draws: usize,
    pub safety_factor: f64,
    pub required_fraction: f64,
    pub mc_replicates: usize,
    pub noise_sd: f64,
    pub bias_tolerance_se: f64,
    pub coverage_range: (f64, f64),
    /// Allowed deviation of the empirical covariance, relative to
    /// `sqrt(Σ_aa Σ_bb)` of the theoretical one.
    pub covariance_tolerance: f64,
    pub base_seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            n: 500,
            k: 2,
            block_probs: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
            eigen_draws: 500,
            safety_factor: 0.5,
            required_fraction: 0.95,
            mc_replicates: 2000,
            noise_sd: 0.5,
            bias_tolerance_se: 3.0,
            coverage_range: (0.93, 0.97),
            covariance_tolerance: 0.1,
            base_seed: 0,
        }
    }
}

impl TheoryConfig {
    fn block_matrix(&self) -> Result<DMatrix<f64>> {
        let k = self.k;
        if self.block_probs.len() != k || self.block_probs.iter().any(|r| r.len() != k) {
            return Err(dim(format!("block probabilities must be {k}x{k}")));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| self.block_probs[i][j]))
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n < 2 * self.k {
            return Err(param("theory checks need n >= 2K and K >= 1"));
        }
        if self.eigen_draws == 0 || self.mc_replicates < 2 {
            return Err(param(
                "theory checks need draws and at least two replicates",
            ));
        }
        Ok(())
    }
}

/// `min_{k'} B_{k',k} (1 - B_{k',k}) (n_k - 1) ‖x^{(k')}‖²`, a lower bound on
/// the smallest eigenvalue of `E H_k`.
pub fn eigen_bound(b: &DMatrix<f64>, z: &Membership, x: &DVector<f64>, k: usize) -> Result<f64> {
    if x.len() != z.n() || b.nrows() != z.k() || b.ncols() != z.k() || k >= z.k() {
        return Err(dim("eigen bound inputs do not conform"));
    }
    let sizes = z.sizes();
    let mut norms = vec![0.0; z.k()];
    for (i, &l) in z.labels().iter().enumerate() {
        norms[l] += x[i] * x[i];
    }
    Ok((0..z.k())
        .map(|kp| b[(kp, k)] * (1.0 - b[(kp, k)]) * (sizes[k] as f64 - 1.0) * norms[kp])
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenBoundCheck {
    pub draws: usize,
    pub passes: usize,
    pub fraction: f64,
    /// Smallest `λ_min(H_k) / bound` seen over all draws and communities.
    pub min_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloEntry {
    pub k1: usize,
    pub k2: usize,
    pub truth: f64,
    pub mean: f64,
    pub mc_se: f64,
    pub deviation_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageEntry {
    pub k1: usize,
    pub k2: usize,
    pub rate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub eigen_bound: EigenBoundCheck,
    pub unbiasedness: Vec<MonteCarloEntry>,
    pub unbiasedness_pass: bool,
    pub coverage: Vec<CoverageEntry>,
    pub coverage_pass: bool,
    pub covariance_max_deviation: f64,
    pub covariance_pass: bool,
    pub pass: bool,
}

fn balanced(n: usize, k: usize) -> Result<Membership> {
    Membership::new((0..n).map(|i| i * k / n).collect(), k)
}

fn check_eigen_bound(cfg: &TheoryConfig) -> Result<EigenBoundCheck> {
    let b = cfg.block_matrix()?;
    let z = balanced(cfg.n, cfg.k)?;
    let params = SbmParams::new(z.clone(), b.clone())?;
    let ratios: Vec<Result<f64>> = (0..cfg.eigen_draws)
        .into_par_iter()
        .map(|d| {
            let seed = sub_seed(cfg.base_seed, &format!("eigen:{d}"));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DVector::from_fn(cfg.n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = sample_sbm(&params, rng.random());
            let mut worst = f64::INFINITY;
            for k in 0..cfg.k {
                let h = build_design(&a, &x, &z, k)?.gram();
                let lam = symmetric_eigen(&h)?.values[0];
                worst = worst.min(lam / eigen_bound(&b, &z, &x, k)?);
            }
            Ok(worst)
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<f64>>>()?;
    let passes = ratios.iter().filter(|&&r| r >= cfg.safety_factor).count();
    let fraction = passes as f64 / cfg.eigen_draws as f64;
    Ok(EigenBoundCheck {
        draws: cfg.eigen_draws,
        passes,
        fraction,
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        pass: fraction >= cfg.required_fraction,
    })
}

/// Empirical covariance of the replicate rows, `(R-1)` denominator.
fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let r = samples.len() as f64;
    let mean = samples
        .iter()
        .fold(DVector::zeros(samples[0].len()), |acc, s| acc + s)
        / r;
    let mut cov = DMatrix::zeros(mean.len(), mean.len());
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov / (r - 1.0)
}

/// Eigenvalue bound, unbiasedness, interval coverage and covariance checks.
///
/// The Monte Carlo parts hold `(A, x, Z)` fixed and redraw only the noise.
pub fn run_theory_checks(cfg: &TheoryConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let eigen = check_eigen_bound(cfg)?;

    let k = cfg.k;
    let fixed = gen_instance(
        cfg.n,
        k,
        0.0,
        Structure::Full,
        &GeneratorOptions::default(),
        sub_seed(cfg.base_seed, "fixed-design"),
    )?;
    let signal = fixed.y.clone();
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| param(e.to_string()))?;
    let noise_seed = sub_seed(cfg.base_seed, "noise");
    let fits: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = (0..cfg.mc_replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            rng.set_stream(r as u64);
            let y = &signal + DVector::from_fn(cfg.n, |_, _| noise.sample(&mut rng));
            let fit = fit_clse(&fixed.a, &fixed.x, &y, &fixed.z)?;
            let mut se = DMatrix::zeros(k, k);
            for c in 0..k {
                let cov = homoskedastic_covariance(
                    c,
                    &fit.designs[c].gram(),
                    &fit.community_residuals(&fixed.z, c),
                    true,
                )?;
                for c2 in 0..k {
                    se[(c, c2)] = cov.matrix[(c2, c2)].max(0.0).sqrt();
                }
            }
            Ok((fit.beta_hat.values().clone(), se))
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let reps = fits.len() as f64;
    let truth = fixed.beta_star.values();

    let mut unbiasedness = Vec::new();
    let mut coverage = Vec::new();
    for k1 in 0..k {
        for k2 in 0..k {
            let vals: Vec<f64> = fits.iter().map(|(b, _)| b[(k1, k2)]).collect();
            let mean = vals.iter().sum::<f64>() / reps;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0);
            let mc_se = (var / reps).sqrt();
            let deviation_se = (mean - truth[(k1, k2)]).abs() / mc_se;
            unbiasedness.push(MonteCarloEntry {
                k1,
                k2,
                truth: truth[(k1, k2)],
                mean,
                mc_se,
                deviation_se,
                pass: deviation_se < cfg.bias_tolerance_se,
            });
            let covered = fits
                .iter()
                .filter(|(b, se)| (b[(k1, k2)] - truth[(k1, k2)]).abs() <= Z_975 * se[(k1, k2)])
                .count();
            let rate = covered as f64 / reps;
            coverage.push(CoverageEntry {
                k1,
                k2,
                rate,
                pass: rate >= cfg.coverage_range.0 && rate <= cfg.coverage_range.1,
            });
        }
    }

    let mut covariance_max_deviation: f64 = 0.0;
    for c in 0..k {
        let rows: Vec<DVector<f64>> = fits.iter().map(|(b, _)| b.row(c).transpose()).collect();
        let empirical = sample_covariance(&rows);
        let h = build_design(&fixed.a, &fixed.x, &fixed.z, c)?.gram();
        let theory = crate::linalg::spd_inverse(&h, cfg.n)? * cfg.noise_sd.powi(2);
        for i in 0..k {
            for j in 0..k {
                let scale = (theory[(i, i)] * theory[(j, j)]).sqrt();
                covariance_max_deviation = covariance_max_deviation
                    .max((empirical[(i, j)] - theory[(i, j)]).abs() / scale);
            }
        }
    }

    let unbiasedness_pass = unbiasedness.iter().all(|e| e.pass);
    let coverage_pass = coverage.iter().all(|e| e.pass);
    let covariance_pass = covariance_max_deviation <= cfg.covariance_tolerance;
    Ok(TheoryReport {
        config: cfg.clone(),
        pass: eigen.pass && unbiasedness_pass && coverage_pass && covariance_pass,
        eigen_bound: eigen,
        unbiasedness,
        unbiasedness_pass,
        coverage,
        coverage_pass,
        covariance_max_deviation,
        covariance_pass,
    })
}

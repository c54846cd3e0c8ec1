use crate::error::{param, Result};
use crate::regression::Structure;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    NetworkAblation,
    CoefStructure,
    Misspecification,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::NetworkAblation => "network_ablation",
            ExperimentKind::CoefStructure => "coef_structure",
            ExperimentKind::Misspecification => "misspecification",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network_ablation" => Ok(ExperimentKind::NetworkAblation),
            "coef_structure" => Ok(ExperimentKind::CoefStructure),
            "misspecification" => Ok(ExperimentKind::Misspecification),
            other => Err(param(format!("unknown experiment `{other}`"))),
        }
    }
}

/// Estimators compared by the experiments. `Clse` is the full-structure
/// estimator on the observed network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Clse,
    ClseIdentity,
    ClseComplete,
    Netcoh,
    Row,
    Singleton,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Clse => "clse",
            Estimator::ClseIdentity => "clse_identity",
            Estimator::ClseComplete => "clse_complete",
            Estimator::Netcoh => "netcoh",
            Estimator::Row => "row",
            Estimator::Singleton => "singleton",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clse" | "full" => Ok(Estimator::Clse),
            "clse_identity" => Ok(Estimator::ClseIdentity),
            "clse_complete" => Ok(Estimator::ClseComplete),
            "netcoh" => Ok(Estimator::Netcoh),
            "row" => Ok(Estimator::Row),
            "singleton" => Ok(Estimator::Singleton),
            other => Err(param(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Where the fitted memberships come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipSource {
    /// Spectral detection on the sampled network.
    Estimated,
    /// The generating memberships.
    Oracle,
}

/// Laws of the random instance: `B_{k1,k2} ~ U(0, offdiag_high)` plus
/// `diag_shift` on the diagonal, `x ~ N(0, x_sd²)`, `β ~ N(0, beta_sd²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorOptions {
    pub offdiag_high: f64,
    pub diag_shift: f64,
    pub x_sd: f64,
    pub beta_sd: f64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        Self {
            offdiag_high: 0.5,
            diag_shift: 0.5,
            x_sd: 1.0,
            beta_sd: 1.0,
        }
    }
}

impl GeneratorOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.offdiag_high >= 0.0
            && self.diag_shift >= 0.0
            && self.offdiag_high + self.diag_shift <= 1.0
            && self.x_sd >= 0.0
            && self.beta_sd >= 0.0;
        if !ok {
            return Err(param(
                "generator options give probabilities outside [0,1] or negative scales",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub k_grid: Option<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub generator: GeneratorOptions,
    #[serde(default)]
    pub estimators: Option<Vec<Estimator>>,
    /// Generating structures for `coef_structure`.
    #[serde(default)]
    pub truths: Option<Vec<Structure>>,
    /// Misclustering counts for `misspecification`; defaults to
    /// `0, 1, 2, 4, ...` up to `n/10`, with `n/10` itself included.
    #[serde(default)]
    pub alpha_grid: Option<Vec<usize>>,
    #[serde(default = "default_membership")]
    pub membership: MembershipSource,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
    #[serde(default = "default_folds")]
    pub netcoh_folds: usize,
    /// Choose λ once per (n, K) cell from replicate 0 instead of per replicate.
    #[serde(default)]
    pub netcoh_reuse_lambda: bool,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_replicates() -> usize {
    200
}

fn default_noise_sd() -> f64 {
    0.5
}

fn default_membership() -> MembershipSource {
    MembershipSource::Estimated
}

fn default_restarts() -> usize {
    crate::community::DEFAULT_RESTARTS
}

fn default_folds() -> usize {
    crate::baseline::DEFAULT_FOLDS
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            n_grid: None,
            k_grid: None,
            replicates: default_replicates(),
            noise_sd: default_noise_sd(),
            generator: GeneratorOptions::default(),
            estimators: None,
            truths: None,
            alpha_grid: None,
            membership: default_membership(),
            kmeans_restarts: default_restarts(),
            netcoh_folds: default_folds(),
            netcoh_reuse_lambda: false,
            base_seed: 0,
            output: None,
        }
    }

    pub fn n_grid(&self) -> Vec<usize> {
        self.n_grid
            .clone()
            .unwrap_or_else(|| match self.experiment {
                ExperimentKind::Misspecification => vec![500],
                _ => (1..=10).map(|i| 100 * i).collect(),
            })
    }

    pub fn k_grid(&self) -> Vec<usize> {
        self.k_grid
            .clone()
            .unwrap_or_else(|| match self.experiment {
                ExperimentKind::NetworkAblation => vec![2, 3, 4],
                ExperimentKind::CoefStructure => vec![4],
                ExperimentKind::Misspecification => vec![2],
            })
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        self.estimators
            .clone()
            .unwrap_or_else(|| match self.experiment {
                ExperimentKind::NetworkAblation => vec![
                    Estimator::Clse,
                    Estimator::ClseIdentity,
                    Estimator::ClseComplete,
                    Estimator::Netcoh,
                ],
                ExperimentKind::CoefStructure => {
                    vec![Estimator::Clse, Estimator::Row, Estimator::Singleton]
                }
                ExperimentKind::Misspecification => vec![Estimator::Clse],
            })
    }

    pub fn truths(&self) -> Vec<Structure> {
        self.truths
            .clone()
            .unwrap_or_else(|| match self.experiment {
                ExperimentKind::CoefStructure => {
                    vec![Structure::Full, Structure::Row, Structure::Singleton]
                }
                _ => vec![Structure::Full],
            })
    }

    pub fn alpha_grid(&self, n: usize) -> Vec<usize> {
        self.alpha_grid
            .clone()
            .unwrap_or_else(|| default_alpha_grid(n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(param("replicate count must be at least 1"));
        }
        let ns = self.n_grid();
        if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(param("n grid must be non-empty and strictly ascending"));
        }
        let ks = self.k_grid();
        if ks.is_empty() || ks.contains(&0) {
            return Err(param("K grid must be non-empty with positive entries"));
        }
        if ks.iter().any(|&k| k > ns[0]) {
            return Err(param("every K must be at most the smallest n"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(param("noise sd must be finite and non-negative"));
        }
        self.generator.validate()?;
        if self.estimators().is_empty() {
            return Err(param("no estimators selected"));
        }
        if self.kmeans_restarts == 0 {
            return Err(param("k-means needs at least one restart"));
        }
        if self.experiment == ExperimentKind::Misspecification {
            if ks.contains(&1) {
                return Err(param("misspecification needs K >= 2"));
            }
            if let Some(g) = &self.alpha_grid {
                if g.iter().any(|&a| a > ns[0]) {
                    return Err(param("alpha grid exceeds the smallest n"));
                }
            }
        }
        if self.estimators().contains(&Estimator::Netcoh) && self.netcoh_folds < 2 {
            return Err(param("netcoh cross-validation needs at least two folds"));
        }
        Ok(())
    }
}

/// `0, 1, 2, 4, ...` below `n/10`, then `n/10`.
pub fn default_alpha_grid(n: usize) -> Vec<usize> {
    let top = n / 10;
    let mut grid = vec![0];
    let mut a = 1;
    while a < top {
        grid.push(a);
        a *= 2;
    }
    if top > 0 {
        grid.push(top);
    }
    grid
}

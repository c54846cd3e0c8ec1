//! Simulation studies: network ablation, coefficient structure and
//! membership misspecification, plus Monte Carlo checks of the theory.

mod config;
mod generate;
mod output;
mod theory;

pub use config::{
    default_alpha_grid, Estimator, ExperimentConfig, ExperimentKind, GeneratorOptions,
    MembershipSource,
};
pub use generate::{
    derive_seed, gen_instance, random_block_probs, random_coefficients, sub_seed,
    uniform_membership, Instance,
};
pub use output::{
    config_hash, read_raw_csv, summarize, write_metadata, write_outputs, write_raw_csv,
    write_summary_csv, write_timings_csv, SummaryRow,
};
pub use theory::{
    eigen_bound, run_theory_checks, CoverageEntry, EigenBoundCheck, MonteCarloEntry, TheoryConfig,
    TheoryReport,
};

use crate::baseline::{
    ablation_network, cv_select_lambda, fit_netcoh, predict_netcoh, NetworkAblation,
};
use crate::community::{
    align_permutation, detect_communities, perturb_membership, Membership, PermutationMatrix,
};
use crate::error::{Error, Result};
use crate::metrics::{err_est, err_pred};
use crate::regression::{fit_clse, fit_row, fit_singleton, Structure};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::time::Instant;

/// One estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub experiment: ExperimentKind,
    pub estimator: Estimator,
    /// Generating coefficient structure.
    pub truth: Structure,
    pub n: usize,
    pub k: usize,
    /// Number of perturbed memberships (misspecification only).
    pub alpha_n: Option<usize>,
    pub replicate: usize,
    pub err_est: Option<f64>,
    pub err_pred: Option<f64>,
    pub seed: u64,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl ExperimentRow {
    fn sort_key(&self) -> (usize, usize, Structure, Option<usize>, Estimator, usize) {
        (
            self.n,
            self.k,
            self.truth,
            self.alpha_n,
            self.estimator,
            self.replicate,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<SummaryRow>,
}

struct Task {
    n: usize,
    k: usize,
    truth: Structure,
    replicate: usize,
    seed: u64,
}

fn seed_label(kind: ExperimentKind, truth: Structure) -> String {
    match kind {
        ExperimentKind::CoefStructure => format!("{}:{}", kind.as_str(), truth.as_str()),
        _ => kind.as_str().to_string(),
    }
}

fn tasks(config: &ExperimentConfig) -> Vec<Task> {
    let mut out = Vec::new();
    for n in config.n_grid() {
        for k in config.k_grid() {
            for truth in config.truths() {
                let label = seed_label(config.experiment, truth);
                for replicate in 0..config.replicates {
                    out.push(Task {
                        n,
                        k,
                        truth,
                        replicate,
                        seed: derive_seed(config.base_seed, &label, n, k, replicate),
                    });
                }
            }
        }
    }
    out
}

fn memberships(
    config: &ExperimentConfig,
    inst: &Instance,
    seed: u64,
) -> Result<(Membership, PermutationMatrix)> {
    match config.membership {
        MembershipSource::Oracle => Ok((inst.z.clone(), PermutationMatrix::identity(inst.z.k()))),
        MembershipSource::Estimated => {
            let z_hat = detect_communities(
                &inst.a,
                inst.z.k(),
                sub_seed(seed, "detect"),
                config.kmeans_restarts,
            )?;
            let q = align_permutation(&z_hat, &inst.z)?;
            Ok((z_hat, q))
        }
    }
}

struct Outcome {
    err_est: Option<f64>,
    err_pred: Option<f64>,
}

fn evaluate_estimator(
    estimator: Estimator,
    inst: &Instance,
    z_hat: &Membership,
    q: &PermutationMatrix,
    netcoh: NetcohPlan,
    seed: u64,
) -> Result<Outcome> {
    let coef = |fit: crate::regression::FitResult| -> Result<Outcome> {
        Ok(Outcome {
            err_est: Some(err_est(fit.beta_hat.values(), inst.beta_star.values(), q)?),
            err_pred: Some(err_pred(&fit.fitted, &inst.y)?),
        })
    };
    let n = inst.a.n();
    match estimator {
        Estimator::Clse => coef(fit_clse(&inst.a, &inst.x, &inst.y, z_hat)?),
        Estimator::Row => coef(fit_row(&inst.a, &inst.x, &inst.y, z_hat)?),
        Estimator::Singleton => coef(fit_singleton(&inst.a, &inst.x, &inst.y, z_hat)?),
        Estimator::ClseIdentity => {
            let a = ablation_network(NetworkAblation::Identity, n)?;
            coef(fit_clse(&a, &inst.x, &inst.y, z_hat)?)
        }
        Estimator::ClseComplete => {
            let a = ablation_network(NetworkAblation::Complete, n)?;
            coef(fit_clse(&a, &inst.x, &inst.y, z_hat)?)
        }
        Estimator::Netcoh => {
            let fit = match netcoh {
                NetcohPlan::CrossValidate { folds } => {
                    cv_select_lambda(&inst.a, &inst.x, &inst.y, folds, sub_seed(seed, "netcoh"))?
                }
                NetcohPlan::Fixed(lambda) => fit_netcoh(&inst.a, &inst.x, &inst.y, lambda)?,
            };
            let yhat = predict_netcoh(&fit, &inst.x)?;
            Ok(Outcome {
                err_est: None,
                err_pred: Some(err_pred(&yhat, &inst.y)?),
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum NetcohPlan {
    CrossValidate { folds: usize },
    Fixed(f64),
}

fn make_row(
    config: &ExperimentConfig,
    task: &Task,
    estimator: Estimator,
    alpha_n: Option<usize>,
    outcome: Result<Outcome>,
    started: Instant,
) -> ExperimentRow {
    let wall_time = started.elapsed().as_secs_f64();
    let (err_est, err_pred, error) = match outcome {
        Ok(o) => (o.err_est, o.err_pred, None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    ExperimentRow {
        experiment: config.experiment,
        estimator,
        truth: task.truth,
        n: task.n,
        k: task.k,
        alpha_n,
        replicate: task.replicate,
        err_est,
        err_pred,
        seed: task.seed,
        wall_time,
        error,
    }
}

fn failed_rows(
    config: &ExperimentConfig,
    task: &Task,
    estimators: &[Estimator],
    err: &Error,
) -> Vec<ExperimentRow> {
    estimators
        .iter()
        .map(|&e| ExperimentRow {
            experiment: config.experiment,
            estimator: e,
            truth: task.truth,
            n: task.n,
            k: task.k,
            alpha_n: None,
            replicate: task.replicate,
            err_est: None,
            err_pred: None,
            seed: task.seed,
            wall_time: 0.0,
            error: Some(err.to_string()),
        })
        .collect()
}

fn instance_for(config: &ExperimentConfig, task: &Task) -> Result<Instance> {
    gen_instance(
        task.n,
        task.k,
        config.noise_sd,
        task.truth,
        &config.generator,
        sub_seed(task.seed, "instance"),
    )
}

/// λ per (n, K) cell chosen by cross-validation on replicate 0.
fn shared_lambdas(
    config: &ExperimentConfig,
    all: &[Task],
) -> Result<BTreeMap<(usize, usize), f64>> {
    all.par_iter()
        .filter(|t| t.replicate == 0)
        .map(|t| {
            let inst = instance_for(config, t)?;
            let fit = cv_select_lambda(
                &inst.a,
                &inst.x,
                &inst.y,
                config.netcoh_folds,
                sub_seed(t.seed, "netcoh"),
            )?;
            Ok(((t.n, t.k), fit.lambda))
        })
        .collect()
}

fn run_replicate(
    config: &ExperimentConfig,
    task: &Task,
    estimators: &[Estimator],
    lambdas: &BTreeMap<(usize, usize), f64>,
) -> Vec<ExperimentRow> {
    let inst = match instance_for(config, task) {
        Ok(i) => i,
        Err(e) => return failed_rows(config, task, estimators, &e),
    };
    let (z_hat, q) = match memberships(config, &inst, task.seed) {
        Ok(m) => m,
        Err(e) => return failed_rows(config, task, estimators, &e),
    };
    let plan = match lambdas.get(&(task.n, task.k)) {
        Some(&l) => NetcohPlan::Fixed(l),
        None => NetcohPlan::CrossValidate {
            folds: config.netcoh_folds,
        },
    };
    estimators
        .iter()
        .map(|&e| {
            let start = Instant::now();
            let outcome = evaluate_estimator(e, &inst, &z_hat, &q, plan, task.seed);
            make_row(config, task, e, None, outcome, start)
        })
        .collect()
}

fn run_misspecified_replicate(config: &ExperimentConfig, task: &Task) -> Vec<ExperimentRow> {
    let inst = match instance_for(config, task) {
        Ok(i) => i,
        Err(e) => return failed_rows(config, task, &[Estimator::Clse], &e),
    };
    config
        .alpha_grid(task.n)
        .into_iter()
        .map(|alpha| {
            let start = Instant::now();
            let outcome = perturb_membership(
                &inst.z,
                alpha,
                sub_seed(task.seed, &format!("perturb:{alpha}")),
            )
            .and_then(|z_hat| {
                let q = align_permutation(&z_hat, &inst.z)?;
                evaluate_estimator(
                    Estimator::Clse,
                    &inst,
                    &z_hat,
                    &q,
                    NetcohPlan::CrossValidate {
                        folds: config.netcoh_folds,
                    },
                    task.seed,
                )
            });
            make_row(config, task, Estimator::Clse, Some(alpha), outcome, start)
        })
        .collect()
}

/// Runs the configured experiment. Rows are sorted by
/// `(n, K, truth, alpha_n, estimator, replicate)` whatever the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let all = tasks(config);
    let estimators = config.estimators();
    let mut rows: Vec<ExperimentRow> = match config.experiment {
        ExperimentKind::Misspecification => all
            .par_iter()
            .flat_map_iter(|t| run_misspecified_replicate(config, t))
            .collect(),
        _ => {
            let lambdas = if config.netcoh_reuse_lambda && estimators.contains(&Estimator::Netcoh) {
                shared_lambdas(config, &all)?
            } else {
                BTreeMap::new()
            };
            all.par_iter()
                .flat_map_iter(|t| run_replicate(config, t, &estimators, &lambdas))
                .collect()
        }
    };
    rows.sort_by_key(|r| r.sort_key());
    let summary = summarize(&rows);
    Ok(ExperimentOutput {
        config: config.clone(),
        rows,
        summary,
    })
}

pub fn run_network_ablation(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect_kind(config, ExperimentKind::NetworkAblation)?;
    run_experiment(config)
}

pub fn run_coef_structure(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect_kind(config, ExperimentKind::CoefStructure)?;
    run_experiment(config)
}

pub fn run_misspecification(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect_kind(config, ExperimentKind::Misspecification)?;
    run_experiment(config)
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != kind {
        return Err(crate::error::param(format!(
            "config describes `{}`, expected `{}`",
            config.experiment.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

use super::{Estimator, ExperimentConfig, ExperimentKind, ExperimentOutput, ExperimentRow};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::regression::Structure;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

/// Mean and standard error of the recorded errors in one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: ExperimentKind,
    pub estimator: Estimator,
    pub truth: Structure,
    pub n: usize,
    pub k: usize,
    pub alpha_n: Option<usize>,
    pub rows: usize,
    pub failures: usize,
    pub err_est_mean: Option<f64>,
    pub err_est_se: Option<f64>,
    pub err_pred_mean: Option<f64>,
    pub err_pred_se: Option<f64>,
}

/// `(mean, sd/√m)` with the `m - 1` sample variance; the error is 0 when m = 1.
fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let m = values.len();
    if m == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (Some(mean), Some((var / m as f64).sqrt()))
}

type CellKey = (
    ExperimentKind,
    usize,
    usize,
    Structure,
    Option<usize>,
    Estimator,
);

pub fn summarize(rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<CellKey, Vec<&ExperimentRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.experiment, r.n, r.k, r.truth, r.alpha_n, r.estimator))
            .or_default()
            .push(r);
    }
    cells
        .into_iter()
        .map(|((experiment, n, k, truth, alpha_n, estimator), rs)| {
            let est: Vec<f64> = rs.iter().filter_map(|r| r.err_est).collect();
            let pred: Vec<f64> = rs.iter().filter_map(|r| r.err_pred).collect();
            let (err_est_mean, err_est_se) = mean_se(&est);
            let (err_pred_mean, err_pred_se) = mean_se(&pred);
            SummaryRow {
                experiment,
                estimator,
                truth,
                n,
                k,
                alpha_n,
                rows: rs.len(),
                failures: rs.iter().filter(|r| r.error.is_some()).count(),
                err_est_mean,
                err_est_se,
                err_pred_mean,
                err_pred_se,
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

const RAW_HEADER: [&str; 11] = [
    "experiment",
    "estimator",
    "truth",
    "n",
    "k",
    "alpha_n",
    "replicate",
    "err_est",
    "err_pred",
    "seed",
    "error",
];

/// Raw rows without timing, so reruns reproduce the file byte for byte.
pub fn write_raw_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RAW_HEADER)?;
    for r in rows {
        out.write_record([
            r.experiment.as_str().to_string(),
            r.estimator.as_str().to_string(),
            r.truth.as_str().to_string(),
            r.n.to_string(),
            r.k.to_string(),
            opt(r.alpha_n),
            r.replicate.to_string(),
            opt_f64(r.err_est),
            opt_f64(r.err_pred),
            r.seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            line,
            message: format!("bad value in column `{}`", RAW_HEADER[idx]),
        })
}

fn parse_opt<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
) -> Result<Option<T>> {
    match rec.get(idx) {
        Some("") => Ok(None),
        _ => parse_field(rec, idx, line).map(Some),
    }
}

/// Reads a raw CSV written by [`write_raw_csv`]; wall times come back as 0.
pub fn read_raw_csv<R: Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let experiment = parse_field::<String>(&rec, 0, line)?.parse()?;
        let estimator = parse_field::<String>(&rec, 1, line)?.parse()?;
        let truth = parse_field::<String>(&rec, 2, line)?.parse()?;
        rows.push(ExperimentRow {
            experiment,
            estimator,
            truth,
            n: parse_field(&rec, 3, line)?,
            k: parse_field(&rec, 4, line)?,
            alpha_n: parse_opt(&rec, 5, line)?,
            replicate: parse_field(&rec, 6, line)?,
            err_est: parse_opt(&rec, 7, line)?,
            err_pred: parse_opt(&rec, 8, line)?,
            seed: parse_field(&rec, 9, line)?,
            wall_time: 0.0,
            error: rec.get(10).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok(rows)
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "experiment",
        "estimator",
        "truth",
        "n",
        "k",
        "alpha_n",
        "rows",
        "failures",
        "err_est_mean",
        "err_est_se",
        "err_pred_mean",
        "err_pred_se",
    ])?;
    for s in summary {
        out.write_record([
            s.experiment.as_str().to_string(),
            s.estimator.as_str().to_string(),
            s.truth.as_str().to_string(),
            s.n.to_string(),
            s.k.to_string(),
            opt(s.alpha_n),
            s.rows.to_string(),
            s.failures.to_string(),
            opt_f64(s.err_est_mean),
            opt_f64(s.err_est_se),
            opt_f64(s.err_pred_mean),
            opt_f64(s.err_pred_se),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timings_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "experiment",
        "estimator",
        "truth",
        "n",
        "k",
        "alpha_n",
        "replicate",
        "wall_time",
    ])?;
    for r in rows {
        out.write_record([
            r.experiment.as_str().to_string(),
            r.estimator.as_str().to_string(),
            r.truth.as_str().to_string(),
            r.n.to_string(),
            r.k.to_string(),
            opt(r.alpha_n),
            r.replicate.to_string(),
            fmt_f64(r.wall_time),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// SHA-256 of the config's canonical JSON, hex encoded.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn write_metadata<W: Write>(output: &ExperimentOutput, w: W) -> Result<()> {
    let c = &output.config;
    let meta = serde_json::json!({
        "experiment": c.experiment.as_str(),
        "config": c,
        "config_hash": config_hash(c)?,
        "base_seed": c.base_seed,
        "version": env!("CARGO_PKG_VERSION"),
        "rows": output.rows.len(),
        "failures": output.rows.iter().filter(|r| r.error.is_some()).count(),
        "netcoh": {
            "held_out_rule": crate::baseline::HELD_OUT_RULE,
            "folds": c.netcoh_folds,
            "lambda_grid_size": crate::baseline::GRID_SIZE,
            "reuse_lambda": c.netcoh_reuse_lambda,
        },
    });
    serde_json::to_writer_pretty(w, &meta)?;
    Ok(())
}

/// Writes `raw.csv`, `summary.csv`, `timings.csv` and `metadata.json` into `dir`.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_raw_csv(&output.rows, File::create(dir.join("raw.csv"))?)?;
    write_summary_csv(&output.summary, File::create(dir.join("summary.csv"))?)?;
    write_timings_csv(&output.rows, File::create(dir.join("timings.csv"))?)?;
    let mut meta = File::create(dir.join("metadata.json"))?;
    write_metadata(output, &mut meta)?;
    meta.write_all(b"\n")?;
    Ok(())
}

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use netreg::baseline::{cv_select_lambda, fit_netcoh, predict_netcoh, DEFAULT_FOLDS};
use netreg::community::{detect_communities, estimate_k, Membership, DEFAULT_RESTARTS};
use netreg::graph::{load_edge_list, save_edge_list, AdjacencyMatrix};
use netreg::inference::{fit_covariances, wald_table, CovarianceKind};
use netreg::io::{load_vector, save_vector, write_fitted};
use netreg::regression::{
    fit_clse, fit_clse_centered, fit_row, fit_singleton, FitResult, Structure,
};
use netreg::sim::{
    gen_instance, run_experiment, run_theory_checks, write_outputs, Estimator, ExperimentConfig,
    ExperimentKind, GeneratorOptions, MembershipSource, TheoryConfig,
};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Network neighborhood regression with community-level coefficients.
#[derive(Parser)]
#[command(name = "netreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random instance (network, memberships, x, y, coefficients).
    SimulateSbm(SimulateArgs),
    /// Spectral community detection on an edge list.
    Detect(DetectArgs),
    /// Community-wise least squares fit.
    Fit(FitArgs),
    /// Wald tests of every coefficient.
    Infer(InferArgs),
    /// Network-cohesion baseline.
    Netcoh(NetcohArgs),
    /// Run a simulation study from a JSON config.
    Experiment(ExperimentArgs),
    /// Monte Carlo checks of unbiasedness, coverage and the eigenvalue bound.
    TheoryCheck(TheoryArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    #[arg(long, default_value = "full")]
    structure: Structure,
    /// Directory receiving network.edges, membership.csv, x.csv, y.csv, truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NetworkInput {
    /// Edge list, one `i j` pair per line (0-based).
    #[arg(long)]
    network: PathBuf,
    /// Node count; defaults to the length of the covariate file when one is given.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: NetworkInput,
    /// Number of communities; estimated from the scree when omitted.
    #[arg(long)]
    k: Option<usize>,
    /// Largest K considered by the scree estimate.
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    /// Membership CSV output (node_id,label).
    #[arg(long)]
    out: PathBuf,
    /// Optional scree CSV output (index,sigma).
    #[arg(long)]
    scree: Option<PathBuf>,
}

#[derive(Args)]
struct DataInput {
    #[command(flatten)]
    network: NetworkInput,
    /// Single-column covariate CSV.
    #[arg(long)]
    x: PathBuf,
    /// Single-column response CSV.
    #[arg(long)]
    y: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataInput,
    /// Membership CSV (node_id,label).
    #[arg(long)]
    membership: PathBuf,
    #[arg(long, default_value = "full")]
    structure: Structure,
    /// Add per-community intercepts (full structure only).
    #[arg(long)]
    intercept: bool,
    /// Directory receiving fit.json and fitted.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    data: DataInput,
    #[arg(long)]
    membership: PathBuf,
    /// homoskedastic, hc0, hc1 or hc3.
    #[arg(long, default_value = "hc1")]
    variant: CovarianceKind,
    /// CSV output of the table; the aligned text table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NetcohArgs {
    #[command(flatten)]
    data: DataInput,
    /// Fixed penalty; cross-validated over the default grid when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<ExperimentKind>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Estimator>>,
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit with the generating memberships instead of detected ones.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    netcoh_folds: Option<usize>,
    #[arg(long)]
    reuse_lambda: bool,
    /// Output directory; falls back to the config's `output` field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// JSON config with any TheoryConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::SimulateSbm(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Fit(a) => fit(a),
        Command::Infer(a) => infer(a),
        Command::Netcoh(a) => netcoh(a),
        Command::Experiment(a) => experiment(a),
        Command::TheoryCheck(a) => theory(a),
    }
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let inst = gen_instance(
        a.n,
        a.k,
        a.noise_sd,
        a.structure,
        &GeneratorOptions::default(),
        a.seed,
    )?;
    fs::create_dir_all(&a.out)?;
    save_edge_list(&inst.a, a.out.join("network.edges"))?;
    inst.z
        .write_csv(File::create(a.out.join("membership.csv"))?)?;
    save_vector(a.out.join("x.csv"), "x", &inst.x)?;
    save_vector(a.out.join("y.csv"), "y", &inst.y)?;
    let rows = |m: &netreg::regression::CoefficientMatrix| m.to_rows();
    let b: Vec<Vec<f64>> = inst
        .block_probs
        .row_iter()
        .map(|r| r.iter().copied().collect())
        .collect();
    write_json(
        Some(&a.out.join("truth.json")),
        &serde_json::json!({
            "n": a.n,
            "k": a.k,
            "seed": a.seed,
            "noise_sd": a.noise_sd,
            "structure": a.structure.as_str(),
            "beta": rows(&inst.beta_star),
            "block_probs": b,
        }),
    )
}

fn load_network(input: &NetworkInput, fallback_n: Option<usize>) -> Result<AdjacencyMatrix> {
    let n = match (input.n, fallback_n) {
        (Some(n), _) | (None, Some(n)) => n,
        (None, None) => bail!("--n is required when no covariate file fixes the node count"),
    };
    load_edge_list(&input.network, n)
        .with_context(|| format!("reading {}", input.network.display()))
}

struct Data {
    a: AdjacencyMatrix,
    x: netreg::nalgebra::DVector<f64>,
    y: netreg::nalgebra::DVector<f64>,
}

fn load_data(d: &DataInput) -> Result<Data> {
    let x = load_vector(&d.x).with_context(|| format!("reading {}", d.x.display()))?;
    let y = load_vector(&d.y).with_context(|| format!("reading {}", d.y.display()))?;
    if x.len() != y.len() {
        bail!("x has {} values but y has {}", x.len(), y.len());
    }
    let a = load_network(&d.network, Some(x.len()))?;
    if a.n() != x.len() {
        bail!("network has {} nodes but x has {} values", a.n(), x.len());
    }
    Ok(Data { a, x, y })
}

fn load_membership(path: &Path) -> Result<Membership> {
    Membership::read_csv(File::open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn detect(a: DetectArgs) -> Result<()> {
    let net = load_network(&a.input, None)?;
    let scree = estimate_k(&net, a.k_max.min(net.n()))?;
    let k = a.k.unwrap_or(scree.suggested_k);
    if let Some(p) = &a.scree {
        scree.write_csv(File::create(p)?)?;
    }
    let z = detect_communities(&net, k, a.seed, a.restarts)?;
    z.write_csv(File::create(&a.out)?)?;
    eprintln!(
        "K = {k}{}; community sizes {:?}",
        if a.k.is_none() {
            " (scree estimate)"
        } else {
            ""
        },
        z.sizes()
    );
    Ok(())
}

fn fit_any(
    d: &Data,
    z: &Membership,
    structure: Structure,
    intercept: bool,
) -> Result<(FitResult, Option<Vec<f64>>)> {
    if intercept {
        if structure != Structure::Full {
            bail!("intercepts are only supported for the full structure");
        }
        let c = fit_clse_centered(&d.a, &d.x, &d.y, z)?;
        return Ok((c.fit, Some(c.intercepts)));
    }
    let fit = match structure {
        Structure::Full => fit_clse(&d.a, &d.x, &d.y, z)?,
        Structure::Row => fit_row(&d.a, &d.x, &d.y, z)?,
        Structure::Singleton => fit_singleton(&d.a, &d.x, &d.y, z)?,
    };
    Ok((fit, None))
}

fn fit(a: FitArgs) -> Result<()> {
    let d = load_data(&a.data)?;
    let z = load_membership(&a.membership)?;
    let (fit, intercepts) = fit_any(&d, &z, a.structure, a.intercept)?;
    fs::create_dir_all(&a.out)?;
    let mut summary = fit.summary_json();
    if let Some(b0) = intercepts {
        summary["intercepts"] = serde_json::json!(b0);
    }
    write_json(Some(&a.out.join("fit.json")), &summary)?;
    write_fitted(
        BufWriter::new(File::create(a.out.join("fitted.csv"))?),
        &d.y,
        &fit.fitted,
    )?;
    if fit.min_norm_used() {
        eprintln!("warning: a singular Hessian was solved by its minimum-norm solution");
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let d = load_data(&a.data)?;
    let z = load_membership(&a.membership)?;
    let fit = fit_clse(&d.a, &d.x, &d.y, &z)?;
    let covs = fit_covariances(&fit, &z, a.variant)?;
    let table = wald_table(&fit, &covs)?;
    print!("{}", table.render_text());
    if let Some(p) = &a.out {
        table.write_csv(File::create(p)?)?;
    }
    Ok(())
}

fn netcoh(a: NetcohArgs) -> Result<()> {
    let d = load_data(&a.data)?;
    let fit = match a.lambda {
        Some(l) => fit_netcoh(&d.a, &d.x, &d.y, l)?,
        None => cv_select_lambda(&d.a, &d.x, &d.y, a.folds, a.seed)?,
    };
    let yhat = predict_netcoh(&fit, &d.x)?;
    let mut value = serde_json::to_value(&fit)?;
    value["err_pred"] = serde_json::json!((&yhat - &d.y).norm_squared() / d.y.len() as f64);
    write_json(a.out.as_deref(), &value)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut c = match (&a.config, a.kind) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        (None, Some(kind)) => ExperimentConfig::new(kind),
        (None, None) => bail!("give --config or --kind"),
    };
    if let Some(kind) = a.kind {
        c.experiment = kind;
    }
    if a.n_grid.is_some() {
        c.n_grid = a.n_grid;
    }
    if a.k_grid.is_some() {
        c.k_grid = a.k_grid;
    }
    if let Some(r) = a.replicates {
        c.replicates = r;
    }
    if let Some(s) = a.noise_sd {
        c.noise_sd = s;
    }
    if a.estimators.is_some() {
        c.estimators = a.estimators;
    }
    if a.alpha_grid.is_some() {
        c.alpha_grid = a.alpha_grid;
    }
    if let Some(s) = a.seed {
        c.base_seed = s;
    }
    if a.oracle {
        c.membership = MembershipSource::Oracle;
    }
    if let Some(r) = a.restarts {
        c.kmeans_restarts = r;
    }
    if let Some(f) = a.netcoh_folds {
        c.netcoh_folds = f;
    }
    if a.reuse_lambda {
        c.netcoh_reuse_lambda = true;
    }
    if a.out.is_some() {
        c.output = a.out;
    }
    let out_dir = c
        .output
        .clone()
        .context("no output directory: use --out or the config's `output`")?;
    let output = run_experiment(&c)?;
    write_outputs(&output, &out_dir)?;
    let failures = output.rows.iter().filter(|r| r.error.is_some()).count();
    eprintln!(
        "{}: {} rows ({failures} failed) written to {}",
        c.experiment.as_str(),
        output.rows.len(),
        out_dir.display()
    );
    Ok(())
}

fn theory(a: TheoryArgs) -> Result<()> {
    let mut c = match &a.config {
        Some(p) => serde_json::from_str::<TheoryConfig>(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TheoryConfig::default(),
    };
    if let Some(n) = a.n {
        c.n = n;
    }
    if let Some(r) = a.replicates {
        c.mc_replicates = r;
    }
    if let Some(d) = a.draws {
        c.eigen_draws = d;
    }
    if let Some(s) = a.seed {
        c.base_seed = s;
    }
    let report = run_theory_checks(&c)?;
    write_json(a.out.as_deref(), &serde_json::to_value(&report)?)?;
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    eprintln!(
        "unbiasedness {}, coverage {}, eigenvalue bound {}, covariance {} (max deviation {:.3})",
        mark(report.unbiasedness_pass),
        mark(report.coverage_pass),
        mark(report.eigen_bound.pass),
        mark(report.covariance_pass),
        report.covariance_max_deviation
    );
    eprintln!(
        "theory checks {}",
        if report.pass { "passed" } else { "FAILED" }
    );
    Ok(())
}

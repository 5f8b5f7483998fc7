use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use arhmc::covariance::{covariance_report, CovarianceMethod, DEFAULT_R1, DEFAULT_R2, GAUSSIAN_MU4};
use arhmc::estimate::{estimate, SolverMethod, SolverOptions};
use arhmc::io::{read_series_csv, to_json_string, write_series_csv};
use arhmc::model::{parse_model_json, theta_to_model, validate, ThetaVector, DEFAULT_BETAS};
use arhmc::moments::{default_n_lags, empirical_moments, jacobian_psi, model_autocovs, numerical_rank, DEFAULT_RANK_TOL};
use arhmc::montecarlo::{
    coverage_study, run_replications, summarize, write_coverage_csv, write_replications_csv, write_summary_csv, StudyConfig,
};
use arhmc::simulate::{preprocess_series, simulate_arhmc, NoiseSpec, DEFAULT_BURNIN};
use arhmc::workflow::{fit_series, FitOptions};
use arhmc::{ArhmcError, Result};

#[derive(Parser)]
#[command(name = "arhmc", version, about = "Markov-switching AR(1) simulation, moment estimation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path and write it as CSV.
    Simulate(SimulateArgs),
    /// Theoretical (and optionally empirical) autocovariances and the moment Jacobian.
    Moments(MomentsArgs),
    /// Estimate the parameters of a series.
    Estimate(EstimateArgs),
    /// Sandwich covariance and Wald statistics at a parameter value.
    Covariance(CovarianceArgs),
    /// Replication study from a JSON configuration.
    Montecarlo(MontecarloArgs),
    /// Full fit of an observed series: preprocessing, estimation, diagnostics, inference.
    Fit(FitArgs),
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct SimulateArgs {
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Model as JSON text, a JSON file, or comma-separated values (with --k).
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// strong, weak1, weak2, weak3, garch or garch:omega,alpha,beta
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the hidden states and the noise.
    #[arg(long)]
    keep_latent: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct MomentsArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    n_lags: Option<usize>,
    /// Series whose empirical autocovariances are reported alongside.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default)]
struct SolverArgs {
    /// newton or broyden
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed coordinates, e.g. "a2=0,p1_1=0.5".
    #[arg(long, allow_hyphen_values = true)]
    mask: Option<String>,
    /// Additional starting point (model JSON or file).
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    #[arg(long)]
    gauss_newton: bool,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct EstimateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_lags: Option<usize>,
    #[arg(long)]
    difference: bool,
    #[arg(long)]
    demean: bool,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct CovarianceArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    /// spectral, strong or mc-oracle
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    n_lags: Option<usize>,
    /// VAR order for the spectral method, or "auto".
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    r1: Option<usize>,
    #[arg(long)]
    r2: Option<usize>,
    #[arg(long)]
    mu4: Option<f64>,
    /// Noise of the Monte Carlo oracle.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct MontecarloArgs {
    /// StudyConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also run the coverage study and write coverage.csv.
    #[arg(long)]
    coverage: bool,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default)]
struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_lags: Option<usize>,
    #[arg(long)]
    difference: bool,
    /// Subtract the sample mean (on by default; see --no-demean).
    #[arg(long)]
    demean: bool,
    #[arg(long)]
    no_demean: bool,
    /// spectral or strong
    #[arg(long)]
    covariance: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Overlays the flags onto the config file: a flag wins whenever it is set.
fn merge<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(flags) };
    let text = std::fs::read_to_string(path).map_err(|e| ArhmcError::Io(format!("{}: {e}", path.display())))?;
    let mut base: Value = serde_json::from_str(&text)?;
    let over = serde_json::to_value(&flags)?;
    let (Some(b), Value::Object(o)) = (base.as_object_mut(), over) else {
        return Err(ArhmcError::Structural("config file must hold a JSON object".into()));
    };
    for (key, v) in o {
        match v {
            Value::Null | Value::Bool(false) => {
                b.entry(key).or_insert(v);
            }
            _ => {
                b.insert(key, v);
            }
        }
    }
    Ok(serde_json::from_value(base)?)
}

fn require<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| ArhmcError::Structural(format!("missing required option --{name}")))
}

/// Model from JSON text, a JSON file, a JSON array or comma-separated values.
fn parse_theta(text: &str, k: Option<usize>) -> Result<ThetaVector> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return parse_model_json(trimmed);
    }
    let values: Option<Vec<f64>> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).ok()
    } else {
        trimmed.split(',').map(|s| s.trim().parse().ok()).collect()
    };
    if let Some(values) = values {
        let k = k.or_else(|| (1..=16).find(|k| k * k + k == values.len()));
        let k = require(k, "k")?;
        return ThetaVector::new(k, values);
    }
    let path = Path::new(trimmed);
    let content = std::fs::read_to_string(path).map_err(|e| ArhmcError::Io(format!("{}: {e}", path.display())))?;
    parse_theta(&content, k)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| ArhmcError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solver_options(args: &SolverArgs, k: usize) -> Result<SolverOptions> {
    let mut o = SolverOptions::default();
    if let Some(m) = &args.method {
        o.method = m.parse::<SolverMethod>()?;
    }
    if let Some(t) = args.tol {
        o.tol = t;
    }
    if let Some(m) = args.max_iter {
        o.max_iter = m;
    }
    if let Some(s) = args.starts {
        o.n_starts = s;
    }
    if let Some(s) = args.seed {
        o.seed = s;
    }
    if let Some(m) = &args.mask {
        o.mask = SolverOptions::parse_mask(k, m)?;
    }
    if let Some(i) = &args.init {
        o.init = Some(parse_theta(i, Some(k))?);
    }
    o.gauss_newton = args.gauss_newton;
    o.validate()?;
    Ok(o)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref())?;
    let theta = parse_theta(&require(a.theta, "theta")?, a.k)?;
    let model = theta_to_model(&theta)?;
    let noise = NoiseSpec::parse(a.noise.as_deref().unwrap_or("strong"))?;
    let n = require(a.n, "n")?;
    let path = simulate_arhmc(&model, &noise, n, a.burnin.unwrap_or(DEFAULT_BURNIN), a.seed.unwrap_or(0), a.keep_latent)?;
    let mut buf = Vec::new();
    write_series_csv(&path.x, path.states.as_deref(), path.eta.as_deref(), &mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn cmd_moments(args: MomentsArgs) -> Result<()> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref())?;
    let theta = parse_theta(&require(a.theta, "theta")?, a.k)?;
    let n_lags = a.n_lags.unwrap_or_else(|| default_n_lags(theta.k));
    let model = theta_to_model(&theta)?;
    let report = validate(&theta, &DEFAULT_BETAS);
    let autocov = model_autocovs(&model, n_lags)?;
    let jac = jacobian_psi(&theta, n_lags)?;
    let rank = numerical_rank(&jac, DEFAULT_RANK_TOL);
    let empirical = match &a.input {
        Some(p) => Some(empirical_moments(&read_series_csv(p, a.column.as_deref())?, n_lags)?),
        None => None,
    };
    let jac_rows: Vec<Vec<f64>> = (0..jac.nrows()).map(|i| jac.row(i).iter().copied().collect()).collect();
    let out = json!({
        "theta": theta,
        "n_lags": n_lags,
        "validation": report,
        "stationary_distribution": model.stationary_distribution()?.iter().copied().collect::<Vec<f64>>(),
        "autocovariances": autocov,
        "psi": &autocov[1..],
        "empirical": empirical,
        "jacobian": jac_rows,
        "jacobian_rank": rank,
    });
    emit(a.out.as_deref(), &to_json_string(&out)?)
}

fn load_series(path: &Path, column: Option<&str>, difference: bool, demean: bool) -> Result<Vec<f64>> {
    let raw = read_series_csv(path, column)?;
    preprocess_series(&raw, difference, demean)
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref())?;
    let k = require(a.k, "k")?;
    let x = load_series(&require(a.input, "input")?, a.column.as_deref(), a.difference, a.demean)?;
    let n_lags = a.n_lags.unwrap_or_else(|| default_n_lags(k));
    let opts = solver_options(&a.solver, k)?;
    let result = estimate(&x, k, n_lags, &opts)?;
    emit(a.out.as_deref(), &to_json_string(&result)?)
}

fn cmd_covariance(args: CovarianceArgs) -> Result<()> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref())?;
    let theta = parse_theta(&require(a.theta, "theta")?, a.k)?;
    let n_lags = a.n_lags.unwrap_or_else(|| default_n_lags(theta.k));
    let method = match a.method.as_deref().unwrap_or("spectral") {
        "spectral" => {
            let r = match a.r.as_deref() {
                None | Some("auto") => None,
                Some(v) => Some(v.parse().map_err(|_| ArhmcError::Structural(format!("--r must be an integer or auto, got `{v}`")))?),
            };
            CovarianceMethod::Spectral { r }
        }
        "strong" => CovarianceMethod::Strong {
            r1: a.r1.unwrap_or(DEFAULT_R1),
            r2: a.r2.unwrap_or(DEFAULT_R2),
            mu4: a.mu4.unwrap_or(GAUSSIAN_MU4),
        },
        "mc-oracle" => CovarianceMethod::McOracle {
            noise: NoiseSpec::parse(a.noise.as_deref().unwrap_or("strong"))?,
            n_batches: a.batches.unwrap_or(200),
            batch_len: a.batch_len.unwrap_or(10_000),
            seed: a.seed.unwrap_or(0),
        },
        other => return Err(ArhmcError::Structural(format!("unknown covariance method `{other}`"))),
    };
    let x = match &a.input {
        Some(p) => read_series_csv(p, a.column.as_deref())?,
        None if matches!(method, CovarianceMethod::Spectral { .. }) => return Err(ArhmcError::Structural("the spectral method needs --input".into())),
        None => vec![0.0; n_lags + 1],
    };
    let report = covariance_report(&x, &theta, n_lags, &method)?;
    emit(a.out.as_deref(), &to_json_string(&report)?)
}

fn cmd_montecarlo(args: MontecarloArgs) -> Result<()> {
    let path = require(args.config, "config")?;
    let text = std::fs::read_to_string(&path).map_err(|e| ArhmcError::Io(format!("{}: {e}", path.display())))?;
    let cfg: StudyConfig = serde_json::from_str(&text)?;
    let dir = args.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let reps = run_replications(&cfg)?;
    let mut rep_csv = Vec::new();
    write_replications_csv(&reps, cfg.theta0.k, &mut rep_csv)?;
    std::fs::write(dir.join("replications.csv"), rep_csv)?;
    let summary = summarize(&reps, &cfg.theta0)?;
    let mut sum_csv = Vec::new();
    write_summary_csv(&summary, &mut sum_csv)?;
    std::fs::write(dir.join("summary.csv"), &sum_csv)?;
    std::fs::write(dir.join("summary.json"), to_json_string(&summary)?)?;
    if args.coverage {
        let cov = coverage_study(&cfg)?;
        let mut cov_csv = Vec::new();
        write_coverage_csv(&cov, cfg.theta0.k, &mut cov_csv)?;
        std::fs::write(dir.join("coverage.csv"), cov_csv)?;
    }
    print!("{}", String::from_utf8_lossy(&sum_csv));
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let config = args.config.clone();
    let a = merge(args, config.as_deref())?;
    let k = require(a.k, "k")?;
    let raw = read_series_csv(&require(a.csv, "csv")?, a.column.as_deref())?;
    let covariance = match a.covariance.as_deref().unwrap_or("spectral") {
        "spectral" => CovarianceMethod::Spectral { r: None },
        "strong" => CovarianceMethod::Strong { r1: DEFAULT_R1, r2: DEFAULT_R2, mu4: GAUSSIAN_MU4 },
        other => return Err(ArhmcError::Structural(format!("unknown covariance method `{other}`"))),
    };
    let opts = FitOptions {
        difference: a.difference,
        demean: !a.no_demean,
        n_lags: a.n_lags,
        solver: solver_options(&a.solver, k)?,
        covariance,
    };
    let report = fit_series(&raw, k, &opts)?;
    emit(a.out.as_deref(), &to_json_string(&report)?)
}

fn configure_threads() {
    if let Some(n) = std::env::var("RM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let (name, result) = match cli.command {
        Command::Simulate(a) => ("simulate", cmd_simulate(a)),
        Command::Moments(a) => ("moments", cmd_moments(a)),
        Command::Estimate(a) => ("estimate", cmd_estimate(a)),
        Command::Covariance(a) => ("covariance", cmd_covariance(a)),
        Command::Montecarlo(a) => ("montecarlo", cmd_montecarlo(a)),
        Command::Fit(a) => ("fit", cmd_fit(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"code": e.code(), "message": e.to_string(), "context": {"subcommand": name}});
            eprintln!("{body}");
            ExitCode::from(1)
        }
    }
}

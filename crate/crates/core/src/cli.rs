//! Command-line interface: `simulate`, `fit`, `predict`, `bootstrap`, `study`.
//!
//! Every subcommand accepts `--config FILE`, a JSON object using the same
//! option names as the flags; flags win over file values. The resolved
//! configuration and the crate version are written into every output file.
//!
//! Exit codes: 0 success, 1 usage or I/O, 2 data validation, 3 numerical
//! failure. Failures print one JSON object on stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::compare::{
    fit_no_stayer, fit_static, no_stayer_cumulative_curve, no_stayer_log_likelihood_and_gradient,
    static_cumulative_curve, static_log_likelihood_and_gradient, with_time_columns, with_time_polynomial,
    NoStayerParams, StaticParams,
};
use crate::error::Error;
use crate::estimate::{bootstrap_se_with, fit_direct, resample_indices, warp_speed_coverage, FitConfig, FitResult};
use crate::io::{read_panel_file, write_panel_csv, IngestError, Panel, VERSION};
use crate::likelihood::log_likelihood_and_gradient;
use crate::metrics::{run_replication_study, ModelKind, StudyOptions};
use crate::model::{cumulative_curve, ModelParams, PanelDataset};
use crate::simulate::{builtin_setting, occupancy_table, simulate_dataset, Setting, SimulationConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error("{0}")]
    Data(Error),

    #[error("{0}")]
    Numerical(Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => CliError::Usage(m),
            Error::DimensionMismatch { .. }
            | Error::NonFinite(_)
            | Error::InsufficientHistory { .. }
            | Error::EmptyDataset
            | Error::Misaligned(_) => CliError::Data(e),
            Error::EnumerationBound { .. }
            | Error::FitFailure { .. }
            | Error::InnerOptimizer { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::BootstrapFailures { .. } => CliError::Numerical(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Ingest(IngestError::Io(_)) => 1,
            CliError::Ingest(_) | CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } | CliError::Ingest(IngestError::Io(_)) => "io",
            CliError::Ingest(_) | CliError::Data(_) => "data_validation",
            CliError::Numerical(_) => "numerical_failure",
        }
    }

    /// The structured message printed on stderr.
    pub fn to_json(&self) -> Value {
        let line = match self {
            CliError::Ingest(e) => e.line(),
            _ => None,
        };
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
                "line": line,
            }
        })
    }
}

fn io_error(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Parser, Debug)]
#[command(name = "mover-stayer", version, about = "Dynamic mover-stayer model for discrete-time panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a panel dataset with its latent truth and occupancy table
    Simulate(SimulateArgs),
    /// Fit the dynamic, static or no-stayer model to a panel CSV
    Fit(FitArgs),
    /// Cumulative stayer and mover probabilities per subject
    Predict(PredictArgs),
    /// Bootstrap standard errors and Wald intervals for a dynamic fit
    Bootstrap(BootstrapArgs),
    /// Replication study over simulated datasets
    Study(StudyArgs),
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// JSON file with option values; may carry a full `simulation` block
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Built-in setting: s1, s2 or s3
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Number of subjects
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// JSON file with option values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Panel CSV in long format
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// dynamic, static or nostayer [default: dynamic]
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Random starts in addition to the zero vector or --init [default: 1]
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Degree of the time polynomial appended to the time-varying covariates [default: 0]
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Convergence tolerance on the log-likelihood change [default: 1e-8]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Starting point: JSON with a `theta` array (such as estimates.json) or a bare array
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Start at the true parameters of a built-in setting (dynamic model)
    #[arg(long)]
    pub init_setting: Option<Setting>,
    /// Output file [default: estimates.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictArgs {
    /// JSON file with option values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Panel CSV in long format
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// estimates.json written by `fit`
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Times as `A..B` (inclusive) or `T` for `0..T` [default: 0..K]
    #[arg(long)]
    pub times: Option<String>,
    /// Output file [default: predictions.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapArgs {
    /// JSON file with option values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Panel CSV in long format
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// estimates.json of a dynamic fit
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Bootstrap replicates [default: 200]
    #[arg(long)]
    pub nboot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output file [default: inference.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyArgs {
    /// JSON file with option values; may carry a full `simulation` block
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Built-in setting: s1, s2 or s3
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Replications [default: 100]
    #[arg(long)]
    pub nreps: Option<usize>,
    /// Subjects per replication
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated models [default: dynamic,static,nostayer]
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Time polynomial degree for the comparators [default: 0]
    #[arg(long)]
    pub degree: Option<usize>,
    /// Random starts for the comparators [default: 2]
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Also run the Hessian / warp-speed bootstrap coverage study (needs nreps >= 100)
    #[arg(long)]
    pub coverage: bool,
    /// Output directory [default: study]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub simulation: Option<SimulationConfig>,
}

fn load_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(io_error(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    fs::write(path, text).map_err(io_error(format!("writing {}", path.display())))
}

fn comments(config: &Value) -> Vec<String> {
    vec![format!("mover-stayer {VERSION}"), format!("config: {config}")]
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_csv<I>(path: &Path, config: &Value, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let err = || io_error(format!("writing {}", path.display()));
    let file = File::create(path).map_err(err())?;
    let mut out = BufWriter::new(file);
    for c in comments(config) {
        writeln!(out, "# {c}").map_err(err())?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e.into(),
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(err())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_error(format!("creating {}", dir.display())))
}

fn resolve_simulation(
    simulation: Option<SimulationConfig>,
    setting: Option<Setting>,
    n: Option<usize>,
    seed: Option<u64>,
) -> Result<SimulationConfig, CliError> {
    let mut sim = match (simulation, setting) {
        (_, Some(s)) => builtin_setting(s),
        (Some(sim), None) => sim,
        (None, None) => return Err(CliError::Usage("either --setting or a config file with `simulation` is required".into())),
    };
    if let Some(n) = n {
        sim.n = n;
    }
    if let Some(seed) = seed {
        sim.seed = seed;
    }
    sim.validate()?;
    Ok(sim)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file: SimulateArgs = load_file(args.config.as_deref())?;
    let setting = args.setting.or(file.setting);
    let sim = resolve_simulation(args.simulation.or(file.simulation), setting, args.n.or(file.n), args.seed.or(file.seed))?;
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    let config = json!({ "command": "simulate", "setting": setting, "simulation": sim });

    let (data, latent) = simulate_dataset(&sim)?;
    let ids: Vec<String> = (1..=data.len()).map(|i| i.to_string()).collect();
    let path = out.join("data.csv");
    let file = File::create(&path).map_err(io_error(format!("writing {}", path.display())))?;
    write_panel_csv(BufWriter::new(file), &ids, &data, &comments(&config))
        .map_err(io_error(format!("writing {}", path.display())))?;

    write_csv(
        &out.join("latent.csv"),
        &config,
        &["id", "b0", "r", "event_time", "censoring_time", "final_state"],
        ids.iter().zip(&latent).map(|(id, l)| {
            vec![
                id.clone(),
                u8::from(l.b0).to_string(),
                l.r.map_or_else(String::new, |r| r.to_string()),
                l.event_time.map_or_else(String::new, |t| t.to_string()),
                l.censoring_time.to_string(),
                l.final_state().to_string(),
            ]
        }),
    )?;
    let table = occupancy_table(&latent, &data)?;
    write_csv(
        &out.join("occupancy.csv"),
        &config,
        &["t", "state1", "state2", "state3", "observed_movers", "censored"],
        table.iter().map(|r| {
            vec![
                r.t.to_string(),
                r.state1.to_string(),
                r.state2.to_string(),
                r.state3.to_string(),
                fmt_opt(r.observed_movers),
                fmt_opt(r.censored),
            ]
        }),
    )?;
    println!("simulated {} subjects into {}", data.len(), out.display());
    Ok(())
}

/// Contents of estimates.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesFile {
    pub version: String,
    pub config: Value,
    pub model: ModelKind,
    pub degree: usize,
    /// Fixed covariates.
    pub d: usize,
    /// Time-varying covariates in the data, before the time polynomial.
    pub q: usize,
    pub theta_order: Vec<String>,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub n_subjects: usize,
    pub converged: bool,
    pub iterations: usize,
    pub n_evaluations: usize,
    pub start_index: usize,
    pub separation_flags: Vec<bool>,
    pub grad_max_norm: f64,
}

/// Contents of inference.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceFile {
    pub version: String,
    pub config: Value,
    pub method: crate::estimate::InferenceMethod,
    pub theta_order: Vec<String>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub n_boot: usize,
    pub n_failed: usize,
    pub n_separated: usize,
}

fn read_init(path: &Path) -> Result<Vec<f64>, CliError> {
    let value: Value = load_file::<Option<Value>>(Some(path))?.unwrap_or(Value::Null);
    let theta = value.get("theta").unwrap_or(&value);
    serde_json::from_value(theta.clone())
        .map_err(|_| CliError::Usage(format!("{}: expected a `theta` array or a bare array", path.display())))
}

fn load_panel(path: Option<PathBuf>) -> Result<Panel, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("--data is required".into()))?;
    Ok(read_panel_file(&path)?)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fit(args: FitArgs) -> Result<(), CliError> {
    let file: FitArgs = load_file(args.config.as_deref())?;
    let data_path = args.data.or(file.data);
    let model = args.model.or(file.model).unwrap_or(ModelKind::Dynamic);
    let degree = args.degree.or(file.degree).unwrap_or(0);
    let init_path = args.init.or(file.init);
    let init_setting = args.init_setting.or(file.init_setting);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("estimates.json"));
    let mut fit_config = FitConfig {
        n_starts: args.starts.or(file.starts).unwrap_or(1),
        seed: args.seed.or(file.seed).unwrap_or(0),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(1000),
        tol: args.tol.or(file.tol).unwrap_or(1e-8),
        ..FitConfig::default()
    };
    fit_config.init = match (&init_path, init_setting) {
        (Some(_), Some(_)) => return Err(CliError::Usage("use only one of --init and --init-setting".into())),
        (Some(p), None) => Some(read_init(p)?),
        (None, Some(s)) => {
            if model != ModelKind::Dynamic || degree != 0 {
                return Err(CliError::Usage("--init-setting applies to the dynamic model without time polynomial".into()));
            }
            Some(builtin_setting(s).true_params.to_vec())
        }
        (None, None) => None,
    };
    let config = json!({
        "command": "fit",
        "data": data_path,
        "model": model,
        "degree": degree,
        "fit": fit_config,
    });

    let panel = load_panel(data_path)?;
    let (d, q) = (panel.data.d, panel.data.q);
    if let Some(init) = &fit_config.init {
        let expected = match model {
            ModelKind::Dynamic => ModelParams::n_params(d, q + degree),
            ModelKind::Static => StaticParams::n_params(d, q + degree),
            ModelKind::NoStayer => NoStayerParams::n_params(d, q + degree),
        };
        if init.len() != expected {
            return Err(CliError::Usage(format!(
                "starting point has {} values; the {} model with d = {d}, q = {} needs {expected}",
                init.len(),
                model.name(),
                q + degree
            )));
        }
    }
    let (theta_order, fitted, grad): (Vec<String>, FitResult<()>, Vec<f64>) = match model {
        ModelKind::Dynamic => {
            let data = with_time_polynomial(&panel.data, degree)?;
            let f = fit_direct(&data, &fit_config)?;
            let (_, g) = log_likelihood_and_gradient(&f.theta_hat, &data)?;
            (ModelParams::coordinate_names(d, q + degree), strip(f), g)
        }
        ModelKind::Static => {
            let f = fit_static(&panel.data, degree, &fit_config)?;
            let data = with_time_polynomial(&panel.data, degree)?;
            let (_, g) = static_log_likelihood_and_gradient(&f.theta_hat, &data)?;
            (StaticParams::coordinate_names(d, q + degree), strip(f), g)
        }
        ModelKind::NoStayer => {
            let f = fit_no_stayer(&panel.data, degree, &fit_config)?;
            let data = with_time_polynomial(&panel.data, degree)?;
            let (_, g) = no_stayer_log_likelihood_and_gradient(&f.theta_hat, &data)?;
            (NoStayerParams::coordinate_names(d, q + degree), strip(f), g)
        }
    };
    let estimates = EstimatesFile {
        version: VERSION.into(),
        config,
        model,
        degree,
        d,
        q,
        theta_order,
        n_params: fitted.theta.len(),
        aic: fitted.aic(),
        theta: fitted.theta,
        loglik: fitted.loglik,
        n_subjects: panel.data.len(),
        converged: fitted.converged,
        iterations: fitted.iterations,
        n_evaluations: fitted.n_evaluations,
        start_index: fitted.start_index,
        separation_flags: fitted.separation_flags,
        grad_max_norm: max_abs(&grad),
    };
    write_json(&out, &estimates)?;
    println!(
        "{} model: loglik {:.6}, AIC {:.4}, converged {}; wrote {}",
        model.name(),
        estimates.loglik,
        estimates.aic,
        estimates.converged,
        out.display()
    );
    Ok(())
}

fn strip<P>(f: FitResult<P>) -> FitResult<()> {
    FitResult {
        theta_hat: (),
        theta: f.theta,
        loglik: f.loglik,
        converged: f.converged,
        n_evaluations: f.n_evaluations,
        iterations: f.iterations,
        separation_flags: f.separation_flags,
        start_index: f.start_index,
        trace: f.trace,
        gem_violations: f.gem_violations,
    }
}

fn read_estimates(path: Option<PathBuf>) -> Result<EstimatesFile, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("--params is required".into()))?;
    let text = fs::read_to_string(&path).map_err(io_error(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not an estimates file: {e}", path.display())))
}

fn check_compatible(est: &EstimatesFile, data: &PanelDataset) -> Result<(), CliError> {
    if est.d != data.d || est.q != data.q {
        return Err(CliError::Data(Error::Misaligned(format!(
            "estimates were fitted with d = {}, q = {}; data has d = {}, q = {}",
            est.d, est.q, data.d, data.q
        ))));
    }
    Ok(())
}

fn parse_times(arg: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--times expects A..B or T, got '{arg}'"));
    let (a, b) = match arg.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => (0, arg.trim().parse().map_err(|_| bad())?),
    };
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let file: PredictArgs = load_file(args.config.as_deref())?;
    let data_path = args.data.or(file.data);
    let params_path = args.params.or(file.params);
    let times = args.times.or(file.times);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("predictions.csv"));
    let est = read_estimates(params_path.clone())?;
    let panel = load_panel(data_path.clone())?;
    check_compatible(&est, &panel.data)?;
    let (t_from, t_to) = match &times {
        Some(s) => parse_times(s)?,
        None => (0, panel.data.max_time()),
    };
    let config = json!({
        "command": "predict",
        "data": data_path,
        "params": params_path,
        "times": [t_from, t_to],
    });
    let (d, q) = (est.d, est.q + est.degree);
    let mut rows = Vec::new();
    for (id, s) in panel.ids.iter().zip(&panel.data.subjects) {
        // cumulative probabilities up to t need z_0 .. z_{t-1}
        let t_max = t_to.min(s.y + 1);
        if t_max < t_from {
            continue;
        }
        let zbar = with_time_columns(&s.z, est.degree)?;
        let curve = match est.model {
            ModelKind::Dynamic => cumulative_curve(&ModelParams::from_slice(&est.theta, d, q)?, &s.x, &zbar, t_max)?,
            ModelKind::Static => static_cumulative_curve(&StaticParams::from_slice(&est.theta, d, q)?, &s.x, &zbar, t_max)?,
            ModelKind::NoStayer => no_stayer_cumulative_curve(&NoStayerParams::from_slice(&est.theta, d, q)?, &s.x, &zbar, t_max)?,
        };
        for (t, (stayer, mover)) in curve.iter().enumerate().skip(t_from) {
            rows.push(vec![id.clone(), t.to_string(), stayer.to_string(), mover.to_string()]);
        }
    }
    write_csv(&out, &config, &["id", "t", "p_stayer", "p_mover"], rows)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn bootstrap(args: BootstrapArgs) -> Result<(), CliError> {
    let file: BootstrapArgs = load_file(args.config.as_deref())?;
    let data_path = args.data.or(file.data);
    let params_path = args.params.or(file.params);
    let n_boot = args.nboot.or(file.nboot).unwrap_or(200);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let max_iter = args.max_iter.or(file.max_iter).unwrap_or(1000);
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("inference.json"));
    let est = read_estimates(params_path.clone())?;
    if est.model != ModelKind::Dynamic {
        return Err(CliError::Usage("bootstrap expects estimates of the dynamic model".into()));
    }
    let panel = load_panel(data_path.clone())?;
    check_compatible(&est, &panel.data)?;
    let data = with_time_polynomial(&panel.data, est.degree)?;
    let theta_hat = ModelParams::from_slice(&est.theta, data.d, data.q)?;
    let fit_config = FitConfig {
        seed,
        max_iter,
        ..FitConfig::at(est.theta.clone())
    };
    let config = json!({
        "command": "bootstrap",
        "data": data_path,
        "params": params_path,
        "n_boot": n_boot,
        "seed": seed,
        "fit": fit_config,
    });
    let n = data.len();
    let report = bootstrap_se_with(&data, &theta_hat, n_boot, &fit_config, |b| resample_indices(seed, b, n))?;
    let inference = InferenceFile {
        version: VERSION.into(),
        config,
        method: report.method,
        theta_order: est.theta_order,
        estimate: report.estimate,
        se: report.se,
        ci_lower: report.ci_lower,
        ci_upper: report.ci_upper,
        n_boot: report.n_boot,
        n_failed: report.n_failed,
        n_separated: report.n_separated,
    };
    write_json(&out, &inference)?;
    println!("{} bootstrap replicates ({} failed); wrote {}", n_boot, inference.n_failed, out.display());
    Ok(())
}

fn study(args: StudyArgs) -> Result<(), CliError> {
    let file: StudyArgs = load_file(args.config.as_deref())?;
    let setting = args.setting.or(file.setting);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let sim = resolve_simulation(args.simulation.or(file.simulation), setting, args.n.or(file.n), Some(seed))?;
    let n_reps = args.nreps.or(file.nreps).unwrap_or(100);
    let models = if !args.models.is_empty() {
        args.models
    } else if !file.models.is_empty() {
        file.models
    } else {
        StudyOptions::default().models
    };
    let options = StudyOptions {
        models,
        comparator_starts: args.starts.or(file.starts).unwrap_or(2),
        degree: args.degree.or(file.degree).unwrap_or(0),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(1000),
        ..StudyOptions::default()
    };
    let coverage = args.coverage || file.coverage;
    let out = args.out.or(file.out).unwrap_or_else(|| PathBuf::from("study"));
    ensure_dir(&out)?;
    let config = json!({
        "command": "study",
        "setting": setting,
        "simulation": sim,
        "n_reps": n_reps,
        "seed": seed,
        "options": options,
        "coverage": coverage,
    });

    let report = run_replication_study(&sim, n_reps, &options, seed)?;
    let names: Vec<(ModelKind, Vec<String>)> = report
        .summaries
        .iter()
        .map(|s| (s.model, s.coordinates.iter().map(|c| c.name.clone()).collect()))
        .collect();

    write_csv(
        &out.join("models.csv"),
        &config,
        &["model", "n_success", "n_failed", "n_separated", "extreme_fraction"],
        report.summaries.iter().map(|s| {
            vec![
                s.model.name().into(),
                s.n_success.to_string(),
                s.n_failed.to_string(),
                s.n_separated.to_string(),
                s.extreme_fraction.to_string(),
            ]
        }),
    )?;
    write_csv(
        &out.join("summary.csv"),
        &config,
        &["model", "coordinate", "truth", "mean", "bias", "sd", "mcse", "n"],
        report.summaries.iter().flat_map(|s| {
            s.coordinates.iter().map(move |c| {
                vec![
                    s.model.name().into(),
                    c.name.clone(),
                    fmt_opt(c.truth),
                    c.mean.to_string(),
                    fmt_opt(c.bias),
                    c.sd.to_string(),
                    c.mcse.to_string(),
                    c.n.to_string(),
                ]
            })
        }),
    )?;
    write_csv(
        &out.join("mad.csv"),
        &config,
        &["model", "state", "t", "median_mad"],
        report.summaries.iter().flat_map(|s| {
            let stayer = s.median_mad_stayer.iter().enumerate().map(move |(t, v)| (s.model, "stayer", t, *v));
            let mover = s.median_mad_mover.iter().enumerate().map(move |(t, v)| (s.model, "mover", t, *v));
            stayer.chain(mover).map(|(m, state, t, v)| vec![m.name().into(), state.into(), t.to_string(), v.to_string()])
        }),
    )?;
    let mut estimate_rows = Vec::new();
    let mut failure_rows = Vec::new();
    for rep in &report.replications {
        for outcome in &rep.outcomes {
            match outcome {
                Ok(o) => {
                    let coords = &names.iter().find(|(m, _)| *m == o.model).expect("summarised model").1;
                    for (name, v) in coords.iter().zip(&o.theta) {
                        estimate_rows.push(vec![rep.index.to_string(), o.model.name().into(), name.clone(), v.to_string()]);
                    }
                }
                Err(msg) => failure_rows.push(vec![rep.index.to_string(), msg.clone()]),
            }
        }
    }
    write_csv(&out.join("estimates.csv"), &config, &["replication", "model", "coordinate", "value"], estimate_rows)?;
    write_csv(&out.join("failures.csv"), &config, &["replication", "message"], failure_rows)?;
    write_csv(
        &out.join("occupancy.csv"),
        &config,
        &["t", "state1", "state2", "state3", "observed_movers", "censored"],
        report.occupancy.iter().map(|r| {
            vec![
                r.t.to_string(),
                r.state1.to_string(),
                r.state2.to_string(),
                r.state3.to_string(),
                fmt_opt(r.observed_movers),
                fmt_opt(r.censored),
            ]
        }),
    )?;
    if coverage {
        let table = warp_speed_coverage(
            &sim,
            n_reps,
            seed,
            &FitConfig {
                max_iter: options.max_iter,
                ..FitConfig::default()
            },
        )?;
        write_csv(
            &out.join("coverage.csv"),
            &config,
            &[
                "coordinate",
                "truth",
                "hessian_coverage",
                "hessian_length",
                "hessian_mean_se",
                "warp_coverage",
                "warp_length",
                "warp_sd",
                "deviation_sd",
                "deviation_coverage",
                "replication_sd",
            ],
            table.rows.iter().map(|r| {
                vec![
                    r.name.clone(),
                    r.truth.to_string(),
                    r.hessian_coverage.to_string(),
                    r.hessian_length.to_string(),
                    r.hessian_mean_se.to_string(),
                    r.warp_coverage.to_string(),
                    r.warp_length.to_string(),
                    r.warp_sd.to_string(),
                    r.deviation_sd.to_string(),
                    r.deviation_coverage.to_string(),
                    r.replication_sd.to_string(),
                ]
            }),
        )?;
    }
    write_json(
        &out.join("study.json"),
        &json!({ "version": VERSION, "config": config, "summaries": report.summaries }),
    )?;
    println!("{n_reps} replications; wrote {}", out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::Study(a) => study(a),
    }
}

/// Parse `args`, run, and map the outcome to the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code())
        }
    }
}

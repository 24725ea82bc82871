//! Accuracy metrics and the replication-study harness.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compare::{
    fit_no_stayer, fit_static, no_stayer_cumulative_curve, static_cumulative_curve, with_time_columns,
    NoStayerParams, StaticParams,
};
use crate::error::{Error, Result};
use crate::estimate::{fit_direct, FitConfig};
use crate::model::{cumulative_curve, ModelParams};
use crate::rng::{derived_seed, Purpose};
use crate::simulate::{occupancy_table, simulate_dataset, LatentTrajectory, OccupancyRow, SimulationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    /// State 2.
    Stayer,
    /// State 3.
    Mover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dynamic,
    Static,
    #[serde(rename = "nostayer")]
    NoStayer,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dynamic => "dynamic",
            ModelKind::Static => "static",
            ModelKind::NoStayer => "nostayer",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dynamic" => Ok(ModelKind::Dynamic),
            "static" => Ok(ModelKind::Static),
            "nostayer" => Ok(ModelKind::NoStayer),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Per-subject curves of `(P(S_t = 2), P(S_t = 3))`, indexed by `t`.
pub type ProbabilityCurves = Vec<Vec<(f64, f64)>>;

fn pick(p: (f64, f64), state: StateKind) -> f64 {
    match state {
        StateKind::Stayer => p.0,
        StateKind::Mover => p.1,
    }
}

/// Mean over subjects of `|P(S_t = k; truth) - P(S_t = k; model)|`.
pub fn mad(model: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>], state: StateKind, t: usize) -> Result<f64> {
    if model.len() != truth.len() {
        return Err(Error::Misaligned(format!(
            "{} model curves for {} subjects",
            model.len(),
            truth.len()
        )));
    }
    if model.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for (i, (m, tr)) in model.iter().zip(truth).enumerate() {
        let (Some(&a), Some(&b)) = (m.get(t), tr.get(t)) else {
            return Err(Error::Misaligned(format!("subject {i} has no probability at t = {t}")));
        };
        sum += (pick(a, state) - pick(b, state)).abs();
    }
    Ok(sum / model.len() as f64)
}

/// [`mad`] for every `t` covered by all curves.
pub fn mad_curve(model: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>], state: StateKind) -> Result<Vec<f64>> {
    let len = model.iter().chain(truth).map(Vec::len).min().unwrap_or(0);
    (0..len).map(|t| mad(model, truth, state, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    pub models: Vec<ModelKind>,
    /// Random starts for the comparator fits.
    pub comparator_starts: usize,
    /// Time polynomial degree for the comparators.
    pub degree: usize,
    pub max_iter: usize,
    /// Replications with any `|estimate|` above this are counted as extreme.
    pub extreme_threshold: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            models: vec![ModelKind::Dynamic, ModelKind::Static, ModelKind::NoStayer],
            comparator_starts: 2,
            degree: 0,
            max_iter: 1000,
            extreme_threshold: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub model: ModelKind,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub separated: bool,
    pub extreme: bool,
    pub mad_stayer: Vec<f64>,
    pub mad_mover: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    /// One entry per requested model; `Err` holds the failure message.
    pub outcomes: Vec<std::result::Result<ModelOutcome, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub name: String,
    pub truth: Option<f64>,
    pub mean: f64,
    pub bias: Option<f64>,
    pub sd: f64,
    /// Monte Carlo standard error of the mean.
    pub mcse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub n_success: usize,
    pub n_failed: usize,
    pub n_separated: usize,
    pub extreme_fraction: f64,
    pub coordinates: Vec<CoordinateSummary>,
    /// Median over replications of the MAD at each `t`.
    pub median_mad_stayer: Vec<f64>,
    pub median_mad_mover: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub setting: SimulationConfig,
    pub n_reps: usize,
    pub seed: u64,
    pub options: StudyOptions,
    pub replications: Vec<Replication>,
    pub summaries: Vec<ModelSummary>,
    /// Occupancy percentages averaged over replications.
    pub occupancy: Vec<OccupancyRow>,
}

impl StudyReport {
    pub fn summary(&self, model: ModelKind) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.model == model)
    }
}

fn curves<F>(latent: &[LatentTrajectory], xs: impl Iterator<Item = Vec<f64>>, k: usize, f: F) -> Result<ProbabilityCurves>
where
    F: Fn(&[f64], &[Vec<f64>], usize) -> Result<Vec<(f64, f64)>>,
{
    latent.iter().zip(xs).map(|(l, x)| f(&x, &l.z, k)).collect()
}

fn outcome(
    model: ModelKind,
    fitted: (Vec<f64>, f64, f64, bool, bool),
    model_curves: &ProbabilityCurves,
    truth_curves: &ProbabilityCurves,
    threshold: f64,
) -> Result<ModelOutcome> {
    let (theta, loglik, aic, converged, separated) = fitted;
    Ok(ModelOutcome {
        model,
        extreme: theta.iter().any(|v| v.abs() > threshold),
        theta,
        loglik,
        aic,
        converged,
        separated,
        mad_stayer: mad_curve(model_curves, truth_curves, StateKind::Stayer)?,
        mad_mover: mad_curve(model_curves, truth_curves, StateKind::Mover)?,
    })
}

fn fit_model(
    model: ModelKind,
    setting: &SimulationConfig,
    data: &crate::model::PanelDataset,
    latent: &[LatentTrajectory],
    truth_curves: &ProbabilityCurves,
    options: &StudyOptions,
    seed: u64,
) -> Result<ModelOutcome> {
    let k = setting.k_max;
    let xs = || data.subjects.iter().map(|s| s.x.clone());
    let truth = setting.true_params.to_vec();
    let comparator = FitConfig {
        n_starts: options.comparator_starts.max(1),
        max_iter: options.max_iter,
        seed,
        ..FitConfig::default()
    };
    let degree = options.degree;
    let th = options.extreme_threshold;
    match model {
        ModelKind::Dynamic => {
            let fit = fit_direct(
                data,
                &FitConfig {
                    max_iter: options.max_iter,
                    ..FitConfig::at(truth)
                },
            )?;
            let p: &ModelParams = &fit.theta_hat;
            let c = curves(latent, xs(), k, |x, z, k| cumulative_curve(p, x, z, k))?;
            outcome(model, (fit.theta.clone(), fit.loglik, fit.aic(), fit.converged, fit.separated()), &c, truth_curves, th)
        }
        ModelKind::Static => {
            let fit = fit_static(data, degree, &comparator)?;
            let p: &StaticParams = &fit.theta_hat;
            let c = curves(latent, xs(), k, |x, z, k| static_cumulative_curve(p, x, &with_time_columns(z, degree)?, k))?;
            outcome(model, (fit.theta.clone(), fit.loglik, fit.aic(), fit.converged, fit.separated()), &c, truth_curves, th)
        }
        ModelKind::NoStayer => {
            let fit = fit_no_stayer(data, degree, &comparator)?;
            let p: &NoStayerParams = &fit.theta_hat;
            let c = curves(latent, xs(), k, |x, z, k| no_stayer_cumulative_curve(p, x, &with_time_columns(z, degree)?, k))?;
            outcome(model, (fit.theta.clone(), fit.loglik, fit.aic(), fit.converged, fit.separated()), &c, truth_curves, th)
        }
    }
}

fn run_replication(
    setting: &SimulationConfig,
    index: usize,
    seed: u64,
    options: &StudyOptions,
) -> Result<(Replication, Vec<OccupancyRow>)> {
    let rep_seed = derived_seed(seed, Purpose::Replication, index as u64);
    let sim = SimulationConfig {
        seed: rep_seed,
        ..setting.clone()
    };
    let (data, latent) = simulate_dataset(&sim)?;
    let occupancy = occupancy_table(&latent, &data)?;
    let truth = &setting.true_params;
    let truth_curves = curves(
        &latent,
        data.subjects.iter().map(|s| s.x.clone()),
        setting.k_max,
        |x, z, k| cumulative_curve(truth, x, z, k),
    )?;
    let outcomes = options
        .models
        .iter()
        .map(|&m| {
            fit_model(m, setting, &data, &latent, &truth_curves, options, rep_seed).map_err(|e| e.to_string())
        })
        .collect();
    Ok((
        Replication {
            index,
            seed: rep_seed,
            outcomes,
        },
        occupancy,
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn coordinate_names(model: ModelKind, d: usize, q: usize, degree: usize) -> Vec<String> {
    match model {
        ModelKind::Dynamic => ModelParams::coordinate_names(d, q),
        ModelKind::Static => StaticParams::coordinate_names(d, q + degree),
        ModelKind::NoStayer => NoStayerParams::coordinate_names(d, q + degree),
    }
}

/// Distribution summaries of replicate estimates; `truth` enables bias.
pub fn summarize_estimates(names: &[String], truth: Option<&[f64]>, estimates: &[Vec<f64>]) -> Vec<CoordinateSummary> {
    let n = estimates.len();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
            } else {
                f64::NAN
            };
            let t = truth.map(|t| t[j]);
            CoordinateSummary {
                name: name.clone(),
                truth: t,
                mean,
                bias: t.map(|t| mean - t),
                sd,
                mcse: sd / (n as f64).sqrt(),
                n,
            }
        })
        .collect()
}

fn summarize(model: ModelKind, slot: usize, report_reps: &[Replication], setting: &SimulationConfig, degree: usize) -> ModelSummary {
    let ok: Vec<&ModelOutcome> = report_reps.iter().filter_map(|r| r.outcomes[slot].as_ref().ok()).collect();
    let n_success = ok.len();
    let estimates: Vec<Vec<f64>> = ok.iter().map(|o| o.theta.clone()).collect();
    let names = coordinate_names(model, setting.d(), setting.q(), degree);
    let truth = setting.true_params.to_vec();
    let truth = (model == ModelKind::Dynamic).then_some(&truth[..]);
    let k = setting.k_max + 1;
    let median_at = |f: &dyn Fn(&ModelOutcome) -> &Vec<f64>| -> Vec<f64> {
        (0..k).map(|t| median(ok.iter().map(|o| f(o)[t]).collect())).collect()
    };
    ModelSummary {
        model,
        n_success,
        n_failed: report_reps.len() - n_success,
        n_separated: ok.iter().filter(|o| o.separated).count(),
        extreme_fraction: if n_success == 0 {
            f64::NAN
        } else {
            ok.iter().filter(|o| o.extreme).count() as f64 / n_success as f64
        },
        coordinates: if n_success == 0 {
            Vec::new()
        } else {
            summarize_estimates(&names, truth, &estimates)
        },
        median_mad_stayer: median_at(&|o| &o.mad_stayer),
        median_mad_mover: median_at(&|o| &o.mad_mover),
    }
}

/// Simulate `n_reps` datasets from `setting`, fit each requested model and
/// collect estimates, MAD curves and occupancy. The dynamic model starts at
/// the truth; comparators use multi-start. Replications run in parallel,
/// each from its own seed, and are reported in index order.
pub fn run_replication_study(
    setting: &SimulationConfig,
    n_reps: usize,
    options: &StudyOptions,
    seed: u64,
) -> Result<StudyReport> {
    if n_reps < 2 {
        return Err(Error::InvalidConfig("a study needs at least 2 replications".into()));
    }
    if options.models.is_empty() {
        return Err(Error::InvalidConfig("no models requested".into()));
    }
    setting.validate()?;
    let runs: Vec<(Replication, Vec<OccupancyRow>)> = (0..n_reps)
        .into_par_iter()
        .map(|i| run_replication(setting, i, seed, options))
        .collect::<Result<_>>()?;
    let (replications, tables): (Vec<Replication>, Vec<Vec<OccupancyRow>>) = runs.into_iter().unzip();

    let summaries = options
        .models
        .iter()
        .enumerate()
        .map(|(slot, &m)| summarize(m, slot, &replications, setting, options.degree))
        .collect();
    let occupancy = average_occupancy(&tables);
    Ok(StudyReport {
        setting: setting.clone(),
        n_reps,
        seed,
        options: options.clone(),
        replications,
        summaries,
        occupancy,
    })
}

fn average_occupancy(tables: &[Vec<OccupancyRow>]) -> Vec<OccupancyRow> {
    let n = tables.len() as f64;
    let avg = |f: &dyn Fn(&OccupancyRow) -> f64, t: usize| tables.iter().map(|tab| f(&tab[t])).sum::<f64>() / n;
    (0..tables[0].len())
        .map(|t| {
            let last = tables[0][t].observed_movers.is_none();
            OccupancyRow {
                t,
                state1: avg(&|r| r.state1, t),
                state2: avg(&|r| r.state2, t),
                state3: avg(&|r| r.state3, t),
                observed_movers: (!last).then(|| avg(&|r| r.observed_movers.unwrap_or(0.0), t)),
                censored: (!last).then(|| avg(&|r| r.censored.unwrap_or(0.0), t)),
            }
        })
        .collect()
}

//! Maximum-likelihood fitting (direct and EM) and inference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::likelihood::{
    check_subject, log_likelihood_and_gradient, subject_terms, terms_posterior,
    total_log_likelihood, CompensatedSum,
};
use crate::model::{dot, log_initial_risk, log_softmax3, ModelParams, PanelDataset, Subject};
use crate::optim::{minimize, LbfgsOptions, Minimum};
use crate::rng::{derived_seed, stream, Purpose};
use crate::simulate::{simulate_dataset, SimulationConfig};

/// Normal quantile for two-sided 95% Wald intervals.
pub const WALD_Z: f64 = 1.96;

/// Gradient max-norm the Newton solves inside the M-step must reach.
pub const INNER_TOL: f64 = 1e-8;

/// Tolerated decrease of the observed log-likelihood between EM iterations.
pub const GEM_SLACK: f64 = 1e-8;

const OUTER_GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON: usize = 200;
// accepted when no ascent step exists any more (round-off dominated)
const INNER_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Random starts drawn in addition to the zero vector (or to `init`, which
    /// then counts as one of them).
    pub n_starts: usize,
    pub init_box: f64,
    pub max_iter: usize,
    /// Convergence tolerance on the log-likelihood change per iteration.
    pub tol: f64,
    pub separation_threshold: f64,
    pub seed: u64,
    /// Flattened starting point.
    pub init: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 1,
            init_box: 2.0,
            max_iter: 1000,
            tol: 1e-8,
            separation_threshold: 15.0,
            seed: 0,
            init: None,
        }
    }
}

impl FitConfig {
    /// Single start at `theta`.
    pub fn at(theta: Vec<f64>) -> Self {
        Self {
            init: Some(theta),
            ..Self::default()
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if !(self.init_box > 0.0 && self.init_box.is_finite()) {
            return bad("init_box must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.separation_threshold > 0.0) {
            return bad("separation_threshold must be positive");
        }
        if let Some(init) = &self.init {
            check_len("initial parameter vector", p, init.len())?;
            if init.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial parameter vector"));
            }
        }
        Ok(())
    }

    /// Starting points in order: `init` (or zero), then random draws from
    /// `[-init_box, init_box]^p`, each from its own stream.
    pub fn starting_points(&self, p: usize) -> Vec<Vec<f64>> {
        let first = self.init.clone().unwrap_or_else(|| vec![0.0; p]);
        let extra = if self.init.is_some() {
            self.n_starts - 1
        } else {
            self.n_starts
        };
        let mut starts = vec![first];
        for i in 0..extra {
            let mut rng = stream(self.seed, Purpose::Start, i as u64);
            starts.push(
                (0..p)
                    .map(|_| rng.gen_range(-self.init_box..=self.init_box))
                    .collect(),
            );
        }
        starts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P = ModelParams> {
    pub theta_hat: P,
    /// `theta_hat` flattened.
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    /// Objective evaluations over all starts (E-steps for EM).
    pub n_evaluations: usize,
    /// Iterations of the winning start.
    pub iterations: usize,
    pub separation_flags: Vec<bool>,
    pub start_index: usize,
    /// Log-likelihood after each iteration of the winning start.
    pub trace: Vec<f64>,
    /// EM iterations that decreased the log-likelihood by more than [`GEM_SLACK`].
    pub gem_violations: usize,
}

impl<P> FitResult<P> {
    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn aic(&self) -> f64 {
        2.0 * self.n_params() as f64 - 2.0 * self.loglik
    }

    pub fn separated(&self) -> bool {
        self.separation_flags.iter().any(|&f| f)
    }
}

pub fn separation_flags(theta: &[f64], threshold: f64) -> Vec<bool> {
    theta.iter().map(|v| v.abs() > threshold).collect()
}

/// Multi-start L-BFGS maximization of `objective` (log-likelihood and
/// gradient; `None` where not finite).
pub(crate) fn maximize<P, F, B>(objective: F, build: B, p: usize, config: &FitConfig) -> Result<FitResult<P>>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)> + Sync,
    B: Fn(&[f64]) -> Result<P>,
{
    config.validate(p)?;
    let starts = config.starting_points(p);
    let opts = LbfgsOptions {
        max_iter: config.max_iter,
        f_tol: config.tol,
        g_tol: OUTER_GRAD_TOL,
        memory: 10,
    };
    let runs: Vec<Option<Minimum>> = starts
        .par_iter()
        .map(|x0| {
            minimize(
                |x| objective(x).map(|(f, g)| (-f, g.into_iter().map(|v| -v).collect())),
                x0,
                &opts,
            )
        })
        .collect();

    let n_evaluations = runs
        .iter()
        .map(|r| r.as_ref().map_or(1, |m| m.evaluations))
        .sum();
    let mut best: Option<(usize, &Minimum)> = None;
    for (i, run) in runs.iter().enumerate() {
        if let Some(m) = run {
            if best.is_none_or(|(_, b)| m.f < b.f) {
                best = Some((i, m));
            }
        }
    }
    let (start_index, m) = best.ok_or(Error::FitFailure {
        starts: starts.len(),
    })?;
    Ok(FitResult {
        theta_hat: build(&m.x)?,
        theta: m.x.clone(),
        loglik: -m.f,
        converged: m.converged,
        n_evaluations,
        iterations: m.iterations,
        separation_flags: separation_flags(&m.x, config.separation_threshold),
        start_index,
        trace: m.trace.iter().map(|f| -f).collect(),
        gem_violations: 0,
    })
}

/// Direct maximization of the observed-data log-likelihood.
pub fn fit_direct(data: &PanelDataset, config: &FitConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (d, q) = (data.d, data.q);
    maximize(
        |theta| {
            let params = ModelParams::from_slice(theta, d, q).ok()?;
            log_likelihood_and_gradient(&params, data).ok()
        },
        |theta| ModelParams::from_slice(theta, d, q),
        ModelParams::n_params(d, q),
        config,
    )
}

/// Posterior weights of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// `E[B | O]`, probability of having been at risk at baseline.
    pub w: f64,
    /// `Q(0) ..= Q(y)` then `Q(inf)`; all zero for observed movers.
    pub q: Vec<f64>,
}

impl EStep {
    pub fn q_inf(&self) -> f64 {
        *self.q.last().expect("posterior vector is never empty")
    }
}

pub fn e_step(params: &ModelParams, subject: &Subject) -> Result<EStep> {
    check_subject(params, subject)?;
    let post = terms_posterior(&subject_terms(params, subject), subject);
    Ok(EStep {
        w: post.w,
        q: post.q,
    })
}

fn e_step_all(params: &ModelParams, data: &PanelDataset) -> Result<(Vec<EStep>, f64)> {
    data.check_params(params)?;
    let mut ll = CompensatedSum::default();
    let weights = data
        .subjects
        .iter()
        .map(|s| {
            let post = terms_posterior(&subject_terms(params, s), s);
            ll.add(post.loglik);
            EStep {
                w: post.w,
                q: post.q,
            }
        })
        .collect();
    Ok((weights, ll.value()))
}

/// Destination of a transition out of state 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Destination {
    Remain,
    Stayer,
    Event,
}

/// One weighted row of the extended data used by the M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedRecord {
    pub subject: usize,
    pub t: usize,
    pub destination: Destination,
    pub weight: f64,
}

/// Extended transition records. Observed movers give `1 -> 1` rows for
/// `t < y` and one `1 -> 3` row at `y`, all with weight 1. Censored subjects
/// give, for each `t <= y`, a `1 -> 1` row weighted by `Q(inf) + sum_{r>t} Q(r)`
/// and a `1 -> 2` row weighted by `Q(t)`. Zero-weight rows are kept.
pub fn extended_data(data: &PanelDataset, weights: &[EStep]) -> Result<Vec<ExtendedRecord>> {
    if weights.len() != data.len() {
        return Err(Error::Misaligned(format!(
            "{} posterior weights for {} subjects",
            weights.len(),
            data.len()
        )));
    }
    let mut records = Vec::new();
    for (i, (s, e)) in data.subjects.iter().zip(weights).enumerate() {
        check_len("posterior vector (y + 2)", s.y + 2, e.q.len())?;
        let record = |t, destination, weight| ExtendedRecord {
            subject: i,
            t,
            destination,
            weight,
        };
        if s.delta {
            records.extend((0..s.y).map(|t| record(t, Destination::Remain, 1.0)));
            records.push(record(s.y, Destination::Event, 1.0));
        } else {
            let mut remain = vec![0.0; s.y + 1];
            let mut tail = e.q_inf();
            for t in (0..=s.y).rev() {
                remain[t] = tail;
                tail += e.q[t];
            }
            for t in 0..=s.y {
                records.push(record(t, Destination::Remain, remain[t]));
                records.push(record(t, Destination::Stayer, e.q[t]));
            }
        }
    }
    Ok(records)
}

/// Extended records collapsed to one row per (subject, t).
struct TransitionRow<'a> {
    x: &'a [f64],
    z: &'a [f64],
    /// Weights for destinations 1, 2, 3.
    w: [f64; 3],
}

fn transition_rows<'a>(data: &'a PanelDataset, records: &[ExtendedRecord]) -> Vec<TransitionRow<'a>> {
    let mut rows: Vec<TransitionRow> = Vec::new();
    let mut key = None;
    for r in records {
        if key != Some((r.subject, r.t)) {
            let s = &data.subjects[r.subject];
            rows.push(TransitionRow {
                x: &s.x,
                z: &s.z[r.t],
                w: [0.0; 3],
            });
            key = Some((r.subject, r.t));
        }
        let slot = match r.destination {
            Destination::Remain => 0,
            Destination::Stayer => 1,
            Destination::Event => 2,
        };
        rows.last_mut().expect("row pushed above").w[slot] += r.weight;
    }
    rows
}

type Quadratic = (f64, Vec<f64>, DMatrix<f64>);

/// Weighted Bernoulli log-likelihood of the initial-risk model, its gradient
/// and the negated Hessian.
fn initial_risk_objective(data: &PanelDataset, w: &[f64], alpha: &[f64]) -> Quadratic {
    let m = alpha.len();
    let mut f = CompensatedSum::default();
    let mut grad = vec![0.0; m];
    let mut info = DMatrix::zeros(m, m);
    let mut u = vec![1.0; m];
    for (s, &wi) in data.subjects.iter().zip(w) {
        u[1..].copy_from_slice(&s.x);
        let (lp, lnp) = log_initial_risk(alpha, &s.x);
        if wi > 0.0 {
            f.add(wi * lp);
        }
        if wi < 1.0 {
            f.add((1.0 - wi) * lnp);
        }
        let r = wi - lp.exp();
        let c = (lp + lnp).exp();
        for i in 0..m {
            grad[i] += r * u[i];
            for j in 0..=i {
                info[(i, j)] += c * u[i] * u[j];
            }
        }
    }
    info.fill_upper_triangle_with_lower_triangle();
    (f.value(), grad, info)
}

/// Weighted multinomial-logit log-likelihood over the extended data. The
/// coefficient vector is `(beta12, gamma12, beta13, gamma13)`.
fn transition_objective(rows: &[TransitionRow], d: usize, v: &[f64]) -> Quadratic {
    let m = v.len() / 2;
    let mut f = CompensatedSum::default();
    let mut grad = vec![0.0; 2 * m];
    let mut info = DMatrix::zeros(2 * m, 2 * m);
    let mut u = vec![1.0; m];
    for row in rows {
        let total = row.w[0] + row.w[1] + row.w[2];
        if total == 0.0 {
            continue;
        }
        u[1..=d].copy_from_slice(row.x);
        u[d + 1..].copy_from_slice(row.z);
        let l = log_softmax3(dot(&u, &v[..m]), dot(&u, &v[m..]));
        for k in 0..3 {
            if row.w[k] > 0.0 {
                f.add(row.w[k] * l[k]);
            }
        }
        let (p2, p3) = (l[1].exp(), l[2].exp());
        let (r2, r3) = (row.w[1] - total * p2, row.w[2] - total * p3);
        let a22 = total * p2 * (1.0 - p2);
        let a33 = total * p3 * (1.0 - p3);
        let a23 = -total * p2 * p3;
        for i in 0..m {
            grad[i] += r2 * u[i];
            grad[m + i] += r3 * u[i];
            for j in 0..m {
                let uu = u[i] * u[j];
                if j <= i {
                    info[(i, j)] += a22 * uu;
                    info[(m + i, m + j)] += a33 * uu;
                }
                info[(m + i, j)] += a23 * uu;
            }
        }
    }
    info.fill_upper_triangle_with_lower_triangle();
    (f.value(), grad, info)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve `info * step = grad`, adding a ridge if `info` is not numerically
/// positive definite.
fn newton_direction(info: &DMatrix<f64>, grad: &[f64]) -> Option<Vec<f64>> {
    let g = DVector::from_column_slice(grad);
    let scale = info.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut h = info.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(chol) = h.cholesky() {
            let step = chol.solve(&g);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step.iter().copied().collect());
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 10.0 };
    }
    None
}

/// Damped Newton ascent to gradient max-norm [`INNER_TOL`].
fn newton_ascent<F>(objective: F, start: &[f64], stage: &'static str) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Quadratic,
{
    let mut x = start.to_vec();
    let (mut fx, mut grad, mut info) = objective(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite(stage));
    }
    for iteration in 0..MAX_NEWTON {
        let gmax = max_abs(&grad);
        if gmax <= INNER_TOL {
            return Ok(x);
        }
        let fail = || Error::InnerOptimizer {
            stage,
            iterations: iteration,
            grad_norm: gmax,
        };
        let Some(dir) = newton_direction(&info, &grad) else {
            return if gmax <= INNER_FLOOR { Ok(x) } else { Err(fail()) };
        };
        // Both objectives are concave. Once the predicted gain drops below the
        // resolution of f, comparing f values is noise and the full step is taken.
        let predicted: f64 = grad.iter().zip(&dir).map(|(g, s)| g * s).sum();
        if predicted <= 1e-13 * (1.0 + fx.abs()) {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let (ft, gt, it) = objective(&trial);
            if ft.is_finite() && max_abs(&gt) < gmax {
                x = trial;
                (fx, grad, info) = (ft, gt, it);
                continue;
            }
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let (ft, gt, it) = objective(&trial);
            if ft.is_finite() && ft >= fx {
                x = trial;
                (fx, grad, info) = (ft, gt, it);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return if gmax <= INNER_FLOOR { Ok(x) } else { Err(fail()) };
        }
    }
    let gmax = max_abs(&grad);
    if gmax <= INNER_FLOOR {
        Ok(x)
    } else {
        Err(Error::InnerOptimizer {
            stage,
            iterations: MAX_NEWTON,
            grad_norm: gmax,
        })
    }
}

fn split_transition(params: &ModelParams) -> Vec<f64> {
    [
        &params.beta12[..],
        &params.gamma12,
        &params.beta13,
        &params.gamma13,
    ]
    .concat()
}

fn join_transition(alpha: Vec<f64>, v: &[f64], d: usize) -> Result<ModelParams> {
    let m = v.len() / 2;
    ModelParams::new(
        alpha,
        v[..=d].to_vec(),
        v[m..m + d + 1].to_vec(),
        v[d + 1..m].to_vec(),
        v[m + d + 1..].to_vec(),
    )
}

/// Expected complete-data log-likelihood at `params` under the given
/// posterior weights.
pub fn q_function(data: &PanelDataset, weights: &[EStep], params: &ModelParams) -> Result<f64> {
    data.check_params(params)?;
    let records = extended_data(data, weights)?;
    let rows = transition_rows(data, &records);
    let w: Vec<f64> = weights.iter().map(|e| e.w).collect();
    let (fa, _, _) = initial_risk_objective(data, &w, &params.alpha);
    let (fb, _, _) = transition_objective(&rows, data.d, &split_transition(params));
    Ok(fa + fb)
}

/// One M-step: weighted logistic fit for `alpha` and weighted multinomial
/// fit for the transition coefficients, both by Newton from `start`.
pub fn m_step(data: &PanelDataset, weights: &[EStep], start: &ModelParams) -> Result<ModelParams> {
    data.check_params(start)?;
    let records = extended_data(data, weights)?;
    let rows = transition_rows(data, &records);
    let w: Vec<f64> = weights.iter().map(|e| e.w).collect();
    let alpha = newton_ascent(
        |a| initial_risk_objective(data, &w, a),
        &start.alpha,
        "initial-risk",
    )?;
    let v = newton_ascent(
        |v| transition_objective(&rows, data.d, v),
        &split_transition(start),
        "transition",
    )?;
    join_transition(alpha, &v, data.d)
}

struct EmRun {
    params: ModelParams,
    loglik: f64,
    converged: bool,
    evaluations: usize,
    trace: Vec<f64>,
    violations: usize,
}

fn em_from(data: &PanelDataset, start: &[f64], config: &FitConfig) -> Result<EmRun> {
    let mut params = ModelParams::from_slice(start, data.d, data.q)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut violations = 0;
    let mut converged = false;
    loop {
        let (weights, ll) = e_step_all(&params, data)?;
        if !ll.is_finite() {
            return Err(Error::NonFinite("observed-data log-likelihood"));
        }
        let change = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if let Some(change) = change {
            if change < -GEM_SLACK {
                violations += 1;
            }
            if change.abs() < config.tol {
                converged = true;
                break;
            }
        }
        if trace.len() > config.max_iter {
            break;
        }
        params = m_step(data, &weights, &params)?;
    }
    Ok(EmRun {
        params,
        loglik: *trace.last().expect("at least one E-step"),
        converged,
        evaluations: trace.len(),
        trace,
        violations,
    })
}

/// EM fit from every starting point; the best final log-likelihood wins.
pub fn fit_em(data: &PanelDataset, config: &FitConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = data.n_params();
    config.validate(p)?;
    let starts = config.starting_points(p);
    let runs: Vec<Result<EmRun>> = starts.par_iter().map(|x0| em_from(data, x0, config)).collect();

    let n_evaluations = runs.iter().map(|r| r.as_ref().map_or(0, |e| e.evaluations)).sum();
    let mut best: Option<(usize, &EmRun)> = None;
    let mut first_error = None;
    for (i, run) in runs.iter().enumerate() {
        match run {
            Ok(r) => {
                if best.is_none_or(|(_, b)| r.loglik > b.loglik) {
                    best = Some((i, r));
                }
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    let Some((start_index, run)) = best else {
        return Err(match first_error {
            Some(Error::NonFinite(_)) | None => Error::FitFailure {
                starts: starts.len(),
            },
            Some(e) => e,
        });
    };
    let theta = run.params.to_vec();
    Ok(FitResult {
        theta_hat: run.params.clone(),
        separation_flags: separation_flags(&theta, config.separation_threshold),
        theta,
        loglik: run.loglik,
        converged: run.converged,
        n_evaluations,
        iterations: run.trace.len() - 1,
        start_index,
        trace: run.trace.clone(),
        gem_violations: run.violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    Hessian,
    Bootstrap,
    WarpSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub method: InferenceMethod,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Bootstrap replicates requested (0 for the Hessian method).
    pub n_boot: usize,
    pub n_failed: usize,
    /// Successful replicates with at least one separation flag.
    pub n_separated: usize,
    #[serde(skip)]
    pub replicates: Vec<Vec<f64>>,
}

impl InferenceReport {
    fn wald(method: InferenceMethod, estimate: Vec<f64>, se: Vec<f64>) -> Self {
        let ci_lower = estimate.iter().zip(&se).map(|(e, s)| e - WALD_Z * s).collect();
        let ci_upper = estimate.iter().zip(&se).map(|(e, s)| e + WALD_Z * s).collect();
        Self {
            method,
            estimate,
            se,
            ci_lower,
            ci_upper,
            n_boot: 0,
            n_failed: 0,
            n_separated: 0,
            replicates: Vec::new(),
        }
    }
}

/// Central-difference Hessian with step `1e-4 * max(1, |theta_j|)`.
pub fn numerical_hessian<F>(f: F, theta: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let p = theta.len();
    let h: Vec<f64> = theta.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut x = theta.to_vec();
    let mut at = |moves: &[(usize, f64)]| -> Result<f64> {
        for &(j, s) in moves {
            x[j] = theta[j] + s * h[j];
        }
        let v = f(&x);
        for &(j, _) in moves {
            x[j] = theta[j];
        }
        let v = v?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("log-likelihood near the estimate"))
        }
    };
    let f0 = at(&[])?;
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        let fp = at(&[(i, 1.0)])?;
        let fm = at(&[(i, -1.0)])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = at(&[(i, 1.0), (j, 1.0)])?;
            let fpm = at(&[(i, 1.0), (j, -1.0)])?;
            let fmp = at(&[(i, -1.0), (j, 1.0)])?;
            let fmm = at(&[(i, -1.0), (j, -1.0)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Inverse of an observed information matrix, which must be positive definite.
pub fn invert_information(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (info + info.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("information matrix"));
    }
    let eig = sym.clone().symmetric_eigen();
    let (k, &smallest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let largest = eig.eigenvalues.amax();
    if !(smallest > largest * 1e-14) {
        let index = eig.eigenvectors.column(k).iamax();
        return Err(Error::NotPositiveDefinite {
            index,
            eigenvalue: smallest,
        });
    }
    let chol = sym.cholesky().ok_or(Error::NotPositiveDefinite {
        index: 0,
        eigenvalue: smallest,
    })?;
    Ok(chol.inverse())
}

/// Wald inference from the numerical Hessian of an arbitrary log-likelihood.
pub fn hessian_inference<F>(loglik: F, theta: &[f64]) -> Result<InferenceReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let info = -numerical_hessian(loglik, theta)?;
    let cov = invert_information(&info)?;
    let se = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    Ok(InferenceReport::wald(InferenceMethod::Hessian, theta.to_vec(), se))
}

/// Hessian-based standard errors for the dynamic model at `theta`.
pub fn hessian_se(theta: &ModelParams, data: &PanelDataset) -> Result<InferenceReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(theta)?;
    let (d, q) = (data.d, data.q);
    hessian_inference(
        |t| total_log_likelihood(&ModelParams::from_slice(t, d, q)?, data),
        &theta.to_vec(),
    )
}

/// `n` subject indices drawn with replacement for bootstrap replicate `b`.
pub fn resample_indices(seed: u64, b: usize, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Bootstrap, b as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn sample_sd(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Nonparametric subject-level bootstrap; each replicate is refit by
/// [`fit_direct`] started at `theta_hat`.
pub fn bootstrap_se(
    data: &PanelDataset,
    theta_hat: &ModelParams,
    n_boot: usize,
    seed: u64,
) -> Result<InferenceReport> {
    let config = FitConfig {
        seed,
        ..FitConfig::at(theta_hat.to_vec())
    };
    let n = data.len();
    bootstrap_se_with(data, theta_hat, n_boot, &config, |b| resample_indices(seed, b, n))
}

/// [`bootstrap_se`] with explicit refit settings and resampler.
pub fn bootstrap_se_with<R>(
    data: &PanelDataset,
    theta_hat: &ModelParams,
    n_boot: usize,
    config: &FitConfig,
    resample: R,
) -> Result<InferenceReport>
where
    R: Fn(usize) -> Vec<usize> + Sync,
{
    if n_boot < 2 {
        return Err(Error::InvalidConfig("n_boot must be at least 2".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(theta_hat)?;
    let fits: Vec<Result<FitResult>> = (0..n_boot)
        .into_par_iter()
        .map(|b| fit_direct(&data.select(&resample(b)), config))
        .collect();

    let mut replicates = Vec::with_capacity(n_boot);
    let (mut failed, mut separated) = (0, 0);
    for fit in fits {
        match fit {
            Ok(f) => {
                separated += usize::from(f.separated());
                replicates.push(f.theta);
            }
            Err(_) => failed += 1,
        }
    }
    if 2 * failed > n_boot || replicates.len() < 2 {
        return Err(Error::BootstrapFailures {
            failed,
            total: n_boot,
        });
    }
    let se = (0..theta_hat.to_vec().len())
        .map(|j| sample_sd(replicates.iter().map(|r| r[j])))
        .collect();
    let mut report = InferenceReport::wald(InferenceMethod::Bootstrap, theta_hat.to_vec(), se);
    report.n_boot = n_boot;
    report.n_failed = failed;
    report.n_separated = separated;
    report.replicates = replicates;
    Ok(report)
}

/// Outcome of one coverage-study replication.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpReplicate {
    pub estimate: Vec<f64>,
    /// `None` when the Hessian was not positive definite.
    pub hessian_se: Option<Vec<f64>>,
    /// Estimate on the single bootstrap resample.
    pub resample_estimate: Vec<f64>,
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub name: String,
    pub truth: f64,
    /// Hessian intervals (M1).
    pub hessian_coverage: f64,
    pub hessian_length: f64,
    pub hessian_mean_se: f64,
    /// Warp-speed intervals (M2): SD of the pooled resample estimates.
    pub warp_coverage: f64,
    pub warp_length: f64,
    pub warp_sd: f64,
    /// Alternative M2 scale: SD of resample-minus-estimate deviations.
    pub deviation_sd: f64,
    pub deviation_coverage: f64,
    /// SD of the estimates across replications.
    pub replication_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
    pub n_reps: usize,
    pub n_used: usize,
    pub n_failed: usize,
    pub n_hessian_failed: usize,
    pub n_separated: usize,
}

pub fn wald_covers(estimate: f64, se: f64, truth: f64) -> bool {
    (estimate - truth).abs() <= WALD_Z * se
}

/// Coverage table from finished replications.
pub fn coverage_table(
    names: &[String],
    truth: &[f64],
    reps: &[WarpReplicate],
    n_failed: usize,
) -> Result<CoverageTable> {
    if reps.len() < 2 {
        return Err(Error::InvalidConfig(
            "coverage needs at least 2 successful replications".into(),
        ));
    }
    for r in reps {
        check_len("replicate estimate", truth.len(), r.estimate.len())?;
        check_len("resample estimate", truth.len(), r.resample_estimate.len())?;
    }
    let with_hessian: Vec<(&WarpReplicate, &Vec<f64>)> = reps
        .iter()
        .filter_map(|r| r.hessian_se.as_ref().map(|se| (r, se)))
        .collect();
    let share = |hits: usize, total: usize| {
        if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        }
    };
    let rows = (0..truth.len())
        .map(|j| {
            let t = truth[j];
            let warp_sd = sample_sd(reps.iter().map(|r| r.resample_estimate[j]));
            let deviation_sd =
                sample_sd(reps.iter().map(|r| r.resample_estimate[j] - r.estimate[j]));
            let covered = |sd: f64| reps.iter().filter(|r| wald_covers(r.estimate[j], sd, t)).count();
            let hessian_hits = with_hessian
                .iter()
                .filter(|(r, se)| wald_covers(r.estimate[j], se[j], t))
                .count();
            let hessian_mean_se = with_hessian.iter().map(|(_, se)| se[j]).sum::<f64>()
                / with_hessian.len() as f64;
            CoverageRow {
                name: names[j].clone(),
                truth: t,
                hessian_coverage: share(hessian_hits, with_hessian.len()),
                hessian_length: 2.0 * WALD_Z * hessian_mean_se,
                hessian_mean_se,
                warp_coverage: share(covered(warp_sd), reps.len()),
                warp_length: 2.0 * WALD_Z * warp_sd,
                warp_sd,
                deviation_sd,
                deviation_coverage: share(covered(deviation_sd), reps.len()),
                replication_sd: sample_sd(reps.iter().map(|r| r.estimate[j])),
            }
        })
        .collect();
    Ok(CoverageTable {
        rows,
        n_reps: reps.len() + n_failed,
        n_used: reps.len(),
        n_failed,
        n_hessian_failed: reps.len() - with_hessian.len(),
        n_separated: reps.iter().filter(|r| r.separated).count(),
    })
}

fn warp_replicate(setting: &SimulationConfig, seed: u64, rep: usize, fit: &FitConfig) -> Result<WarpReplicate> {
    let sim = SimulationConfig {
        seed: derived_seed(seed, Purpose::Replication, rep as u64),
        ..setting.clone()
    };
    let (data, _) = simulate_dataset(&sim)?;
    let first = fit_direct(&data, fit)?;
    let hessian_se = hessian_se(&first.theta_hat, &data).ok().map(|r| r.se);
    let resample_seed = derived_seed(seed, Purpose::WarpResample, rep as u64);
    let resampled = data.select(&resample_indices(resample_seed, 0, data.len()));
    let refit = FitConfig {
        init: Some(first.theta.clone()),
        ..fit.clone()
    };
    let second = fit_direct(&resampled, &refit)?;
    Ok(WarpReplicate {
        separated: first.separated(),
        estimate: first.theta,
        hessian_se,
        resample_estimate: second.theta,
    })
}

/// Coverage study comparing Hessian (M1) and warp-speed bootstrap (M2)
/// intervals. Each replication simulates a dataset, fits it (started at the
/// truth unless `fit.init` is set), computes Hessian SEs, and refits one
/// bootstrap resample.
pub fn warp_speed_coverage(
    setting: &SimulationConfig,
    n_reps: usize,
    seed: u64,
    fit: &FitConfig,
) -> Result<CoverageTable> {
    if n_reps < 100 {
        return Err(Error::InvalidConfig("warp-speed coverage needs n_reps >= 100".into()));
    }
    setting.validate()?;
    let truth = setting.true_params.to_vec();
    let fit = FitConfig {
        init: fit.init.clone().or_else(|| Some(truth.clone())),
        ..fit.clone()
    };
    let outcomes: Vec<Result<WarpReplicate>> = (0..n_reps)
        .into_par_iter()
        .map(|r| warp_replicate(setting, seed, r, &fit))
        .collect();
    let n_failed = outcomes.iter().filter(|o| o.is_err()).count();
    let reps: Vec<WarpReplicate> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let names = ModelParams::coordinate_names(setting.d(), setting.q());
    coverage_table(&names, &truth, &reps, n_failed)
}

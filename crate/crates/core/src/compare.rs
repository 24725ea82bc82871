//! Comparator models: the static mover-stayer model, where stayer status is
//! fixed at baseline, and the plain discrete-time hazard model without
//! stayers.
//!
//! Both use a logistic hazard `P_t = logistic(beta' (1, x) + gamma' z_t)`.
//! Time-varying intercepts are obtained by appending raw powers
//! `t, t^2, t^3` to the `z` rows.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::estimate::{maximize, FitConfig, FitResult};
use crate::likelihood::{CompensatedSum, LogSumExp};
use crate::model::{dot, fixed_predictor, log_initial_risk, logistic, softplus, PanelDataset, Subject};

pub const MAX_TIME_DEGREE: usize = 3;

/// Static mover-stayer coefficients; flattened as `(alpha, beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Hazard-only coefficients; flattened as `(beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoStayerParams {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl StaticParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        check_len("static beta", alpha.len(), beta.len())?;
        if alpha.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "static alpha (needs an intercept)",
                expected: 1,
                actual: 0,
            });
        }
        let p = Self { alpha, beta, gamma };
        check_finite(&p.to_vec(), "static model parameters")?;
        Ok(p)
    }

    pub fn n_params(d: usize, q: usize) -> usize {
        2 * (d + 1) + q
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.alpha[..], &self.beta, &self.gamma].concat()
    }

    pub fn from_slice(theta: &[f64], d: usize, q: usize) -> Result<Self> {
        check_len("static parameter vector", Self::n_params(d, q), theta.len())?;
        let p = d + 1;
        Self::new(
            theta[..p].to_vec(),
            theta[p..2 * p].to_vec(),
            theta[2 * p..].to_vec(),
        )
    }

    pub fn coordinate_names(d: usize, q: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=d + 1).map(|i| format!("alpha[{i}]")).collect();
        names.extend((1..=d + 1).map(|i| format!("beta[{i}]")));
        names.extend((1..=q).map(|i| format!("gamma[{i}]")));
        names
    }

    pub fn hazard(&self) -> NoStayerParams {
        NoStayerParams {
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
        }
    }
}

impl NoStayerParams {
    pub fn new(beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "hazard beta (needs an intercept)",
                expected: 1,
                actual: 0,
            });
        }
        let p = Self { beta, gamma };
        check_finite(&p.to_vec(), "hazard model parameters")?;
        Ok(p)
    }

    pub fn n_params(d: usize, q: usize) -> usize {
        d + 1 + q
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.beta[..], &self.gamma].concat()
    }

    pub fn from_slice(theta: &[f64], d: usize, q: usize) -> Result<Self> {
        check_len("hazard parameter vector", Self::n_params(d, q), theta.len())?;
        Self::new(theta[..=d].to_vec(), theta[d + 1..].to_vec())
    }

    pub fn coordinate_names(d: usize, q: usize) -> Vec<String> {
        let mut names: Vec<String> = (1..=d + 1).map(|i| format!("beta[{i}]")).collect();
        names.extend((1..=q).map(|i| format!("gamma[{i}]")));
        names
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if degree <= MAX_TIME_DEGREE {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "time polynomial degree must be at most {MAX_TIME_DEGREE}, got {degree}"
        )))
    }
}

/// Rows `z_t` extended by `t, t^2, ..., t^degree`.
pub fn with_time_columns(zbar: &[Vec<f64>], degree: usize) -> Result<Vec<Vec<f64>>> {
    check_degree(degree)?;
    Ok(zbar
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let mut r = row.clone();
            r.extend((1..=degree).map(|k| (t as f64).powi(k as i32)));
            r
        })
        .collect())
}

/// Dataset with the time polynomial appended to every `z` row.
pub fn with_time_polynomial(data: &PanelDataset, degree: usize) -> Result<PanelDataset> {
    check_degree(degree)?;
    let subjects = data
        .subjects
        .iter()
        .map(|s| Subject::new(s.y, s.delta, s.x.clone(), with_time_columns(&s.z, degree)?))
        .collect::<Result<Vec<_>>>()?;
    PanelDataset::new(data.d, data.q + degree, subjects)
}

/// Contribution of one subject; `alpha = None` means everyone is at risk.
/// Adds the gradient (layout `alpha?, beta, gamma`) into `grad` if given.
fn subject_contribution(
    alpha: Option<&[f64]>,
    beta: &[f64],
    gamma: &[f64],
    s: &Subject,
    grad: Option<&mut [f64]>,
) -> f64 {
    let f = fixed_predictor(beta, &s.x);
    let eta: Vec<f64> = s.z.iter().map(|z| f + dot(gamma, z)).collect();
    let y = s.y;
    let (log_pi, log_not_pi) = alpha.map_or((0.0, f64::NEG_INFINITY), |a| log_initial_risk(a, &s.x));

    let mut log_survive = 0.0;
    let at_risk_until = if s.delta { y } else { y + 1 };
    for &e in &eta[..at_risk_until] {
        log_survive -= softplus(e);
    }
    let (ll, w) = if s.delta {
        (log_pi + log_survive - softplus(-eta[y]), 1.0)
    } else if alpha.is_some() {
        let mut acc = LogSumExp::new();
        acc.push(log_not_pi);
        acc.push(log_pi + log_survive);
        let ll = acc.value();
        (ll, (log_pi + log_survive - ll).exp())
    } else {
        (log_survive, 1.0)
    };

    if let Some(grad) = grad {
        let offset = if let Some(a) = alpha {
            let r = w - log_pi.exp();
            grad[0] += r;
            for (g, x) in grad[1..a.len()].iter_mut().zip(&s.x) {
                *g += r * x;
            }
            a.len()
        } else {
            0
        };
        let p = beta.len();
        let (gb, gg) = grad[offset..].split_at_mut(p);
        for (t, &e) in eta.iter().enumerate().take(y + 1) {
            let c = if s.delta && t == y {
                logistic(-e)
            } else {
                -w * logistic(e)
            };
            gb[0] += c;
            for (g, x) in gb[1..].iter_mut().zip(&s.x) {
                *g += c * x;
            }
            for (g, z) in gg.iter_mut().zip(&s.z[t]) {
                *g += c * z;
            }
        }
    }
    ll
}

fn check_data(data: &PanelDataset, d: usize, q: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("fixed covariates", data.d, d)?;
    check_len("time-varying covariates", data.q, q)
}

fn total(
    alpha: Option<&[f64]>,
    beta: &[f64],
    gamma: &[f64],
    data: &PanelDataset,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let n = alpha.map_or(0, <[f64]>::len) + beta.len() + gamma.len();
    let mut grad = vec![0.0; if with_grad { n } else { 0 }];
    let mut ll = CompensatedSum::default();
    for s in &data.subjects {
        let g = with_grad.then_some(&mut grad[..]);
        ll.add(subject_contribution(alpha, beta, gamma, s, g));
    }
    (ll.value(), grad)
}

pub fn static_log_likelihood(params: &StaticParams, data: &PanelDataset) -> Result<f64> {
    check_data(data, params.alpha.len() - 1, params.gamma.len())?;
    Ok(total(Some(&params.alpha), &params.beta, &params.gamma, data, false).0)
}

/// Log-likelihood and gradient in the `(alpha, beta, gamma)` order.
pub fn static_log_likelihood_and_gradient(
    params: &StaticParams,
    data: &PanelDataset,
) -> Result<(f64, Vec<f64>)> {
    check_data(data, params.alpha.len() - 1, params.gamma.len())?;
    Ok(total(Some(&params.alpha), &params.beta, &params.gamma, data, true))
}

pub fn no_stayer_log_likelihood(params: &NoStayerParams, data: &PanelDataset) -> Result<f64> {
    check_data(data, params.beta.len() - 1, params.gamma.len())?;
    Ok(total(None, &params.beta, &params.gamma, data, false).0)
}

pub fn no_stayer_log_likelihood_and_gradient(
    params: &NoStayerParams,
    data: &PanelDataset,
) -> Result<(f64, Vec<f64>)> {
    check_data(data, params.beta.len() - 1, params.gamma.len())?;
    Ok(total(None, &params.beta, &params.gamma, data, true))
}

/// Fit the static model after appending a time polynomial of `degree` to `z`.
/// The fitted `gamma` has `q + degree` entries.
pub fn fit_static(data: &PanelDataset, degree: usize, config: &FitConfig) -> Result<FitResult<StaticParams>> {
    let data = with_time_polynomial(data, degree)?;
    check_data(&data, data.d, data.q)?;
    let (d, q) = (data.d, data.q);
    let p = d + 1;
    maximize(
        |theta| {
            if theta.iter().any(|v| !v.is_finite()) {
                return None;
            }
            Some(total(Some(&theta[..p]), &theta[p..2 * p], &theta[2 * p..], &data, true))
        },
        |theta| StaticParams::from_slice(theta, d, q),
        StaticParams::n_params(d, q),
        config,
    )
}

/// Fit the hazard model without stayers; see [`fit_static`] for `degree`.
pub fn fit_no_stayer(data: &PanelDataset, degree: usize, config: &FitConfig) -> Result<FitResult<NoStayerParams>> {
    let data = with_time_polynomial(data, degree)?;
    check_data(&data, data.d, data.q)?;
    let (d, q) = (data.d, data.q);
    maximize(
        |theta| {
            if theta.iter().any(|v| !v.is_finite()) {
                return None;
            }
            Some(total(None, &theta[..=d], &theta[d + 1..], &data, true))
        },
        |theta| NoStayerParams::from_slice(theta, d, q),
        NoStayerParams::n_params(d, q),
        config,
    )
}

/// `(p_stayer, p_mover)` for every `s = 0 ..= t_max` under a hazard model
/// with initial-risk probability `pi`.
fn hazard_curve(pi: f64, hazard: &NoStayerParams, x: &[f64], zbar: &[Vec<f64>], t_max: usize) -> Result<Vec<(f64, f64)>> {
    if zbar.len() < t_max {
        return Err(Error::InsufficientHistory {
            t: t_max,
            required: t_max,
            available: zbar.len(),
        });
    }
    check_len("fixed covariates", hazard.beta.len() - 1, x.len())?;
    let f = fixed_predictor(&hazard.beta, x);
    let mut out = Vec::with_capacity(t_max + 1);
    let mut log_survive = 0.0;
    out.push((1.0 - pi, 0.0));
    for z in &zbar[..t_max] {
        check_len("time-varying covariates", hazard.gamma.len(), z.len())?;
        log_survive -= softplus(f + dot(&hazard.gamma, z));
        out.push((1.0 - pi, -pi * log_survive.exp_m1()));
    }
    Ok(out)
}

/// `(P(stayer), P(moved by t))` under the static model:
/// `(1 - pi, pi * (1 - prod_{s<t} (1 - P_s)))`.
pub fn static_cumulative_probs(params: &StaticParams, x: &[f64], zbar: &[Vec<f64>], t: usize) -> Result<(f64, f64)> {
    Ok(static_cumulative_curve(params, x, zbar, t)?[t])
}

pub fn static_cumulative_curve(params: &StaticParams, x: &[f64], zbar: &[Vec<f64>], t_max: usize) -> Result<Vec<(f64, f64)>> {
    check_len("static alpha (d + 1)", x.len() + 1, params.alpha.len())?;
    let pi = logistic(fixed_predictor(&params.alpha, x));
    hazard_curve(pi, &params.hazard(), x, zbar, t_max)
}

/// Same as [`static_cumulative_curve`] with everyone at risk (`pi = 1`).
pub fn no_stayer_cumulative_curve(params: &NoStayerParams, x: &[f64], zbar: &[Vec<f64>], t_max: usize) -> Result<Vec<(f64, f64)>> {
    hazard_curve(1.0, params, x, zbar, t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit_direct, hessian_inference};
    use crate::likelihood::total_log_likelihood;
    use crate::model::ModelParams;
    use crate::simulate::{builtin_setting, simulate_dataset, CovariateProcess, Setting, SimulationConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> PanelDataset {
        simulate_dataset(&SimulationConfig {
            n,
            seed,
            ..builtin_setting(Setting::S1)
        })
        .unwrap()
        .0
    }

    fn random_static(rng: &mut ChaCha8Rng) -> StaticParams {
        let theta: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.5..1.5)).collect();
        StaticParams::from_slice(&theta, 2, 2).unwrap()
    }

    /// Perturbation of the static analogue of Setting 1. Survival stays far
    /// above `exp(-30)`, where pinned intercepts behave as exact nesting.
    fn near_setting1(rng: &mut ChaCha8Rng) -> StaticParams {
        let t = builtin_setting(Setting::S1).true_params;
        let base = [&t.alpha[..], &t.beta13, &t.gamma13].concat();
        let theta: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
        StaticParams::from_slice(&theta, 2, 2).unwrap()
    }

    /// Two-path enumeration in the probability domain.
    fn enumerate(params: &StaticParams, s: &Subject) -> f64 {
        let lin = |c: &[f64]| c[0] + c[1..].iter().zip(&s.x).map(|(a, b)| a * b).sum::<f64>();
        let pi = 1.0 / (1.0 + (-lin(&params.alpha)).exp());
        let hazard: Vec<f64> = s
            .z
            .iter()
            .map(|z| {
                let e = lin(&params.beta) + params.gamma.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
                1.0 / (1.0 + (-e).exp())
            })
            .collect();
        let survive = |k: usize| hazard[..k].iter().map(|h| 1.0 - h).product::<f64>();
        if s.delta {
            pi * survive(s.y) * hazard[s.y]
        } else {
            (1.0 - pi) + pi * survive(s.y + 1)
        }
    }

    #[test]
    fn matches_two_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = data(200, 1);
        for s in &d.subjects {
            let params = random_static(&mut rng);
            let one = PanelDataset::new(2, 2, vec![s.clone()]).unwrap();
            let ll = static_log_likelihood(&params, &one).unwrap();
            assert_relative_eq!(ll.exp(), enumerate(&params, s), max_relative = 1e-12);
        }
    }

    #[test]
    fn one_interval_collapses() {
        let params = StaticParams::new(vec![0.4], vec![-0.3], vec![0.7]).unwrap();
        let s = Subject::new(0, false, vec![], vec![vec![1.5]]).unwrap();
        let one = PanelDataset::new(0, 1, vec![s]).unwrap();
        let pi = logistic(0.4);
        let p0 = logistic(-0.3 + 0.7 * 1.5);
        assert_relative_eq!(
            static_log_likelihood(&params, &one).unwrap(),
            (1.0 - pi * p0).ln(),
            max_relative = 1e-14
        );
        let mover = Subject::new(0, true, vec![], vec![vec![1.5]]).unwrap();
        let one = PanelDataset::new(0, 1, vec![mover]).unwrap();
        assert_relative_eq!(
            no_stayer_log_likelihood(&params.hazard(), &one).unwrap(),
            p0.ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn nesting_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for rep in 0..5 {
            let d = data(300, 10 + rep);
            let s = near_setting1(&mut rng);
            // static with alpha intercept +30 is the hazard model
            let pinned = StaticParams::new(vec![30.0, 0.0, 0.0], s.beta.clone(), s.gamma.clone()).unwrap();
            let a = static_log_likelihood(&pinned, &d).unwrap();
            let b = no_stayer_log_likelihood(&s.hazard(), &d).unwrap();
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            // dynamic with beta12 intercept -30 is the static model
            let dynamic = ModelParams::new(
                s.alpha.clone(),
                vec![-30.0, 0.0, 0.0],
                s.beta.clone(),
                vec![0.0, 0.0],
                s.gamma.clone(),
            )
            .unwrap();
            let c = total_log_likelihood(&dynamic, &d).unwrap();
            let e = static_log_likelihood(&s, &d).unwrap();
            assert!((c - e).abs() <= 1e-6, "{c} vs {e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = data(300, 2);
        for _ in 0..5 {
            let s = random_static(&mut rng);
            let theta = s.to_vec();
            let (_, g) = static_log_likelihood_and_gradient(&s, &d).unwrap();
            for j in 0..theta.len() {
                let h = 1e-6 * theta[j].abs().max(1.0);
                let mut tp = theta.clone();
                tp[j] += h;
                let mut tm = theta.clone();
                tm[j] -= h;
                let fd = (static_log_likelihood(&StaticParams::from_slice(&tp, 2, 2).unwrap(), &d).unwrap()
                    - static_log_likelihood(&StaticParams::from_slice(&tm, 2, 2).unwrap(), &d).unwrap())
                    / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "static {j}: {} vs {fd}", g[j]);
            }
            let hz = s.hazard();
            let theta = hz.to_vec();
            let (_, g) = no_stayer_log_likelihood_and_gradient(&hz, &d).unwrap();
            for j in 0..theta.len() {
                let h = 1e-6 * theta[j].abs().max(1.0);
                let mut tp = theta.clone();
                tp[j] += h;
                let mut tm = theta.clone();
                tm[j] -= h;
                let fd = (no_stayer_log_likelihood(&NoStayerParams::from_slice(&tp, 2, 2).unwrap(), &d).unwrap()
                    - no_stayer_log_likelihood(&NoStayerParams::from_slice(&tm, 2, 2).unwrap(), &d).unwrap())
                    / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "hazard {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn cumulative_probabilities() {
        let params = StaticParams::new(vec![0.2], vec![0.0], vec![]).unwrap();
        let zbar = vec![vec![]; 8];
        let pi = logistic(0.2);
        assert_eq!(static_cumulative_probs(&params, &[], &zbar, 0).unwrap(), (1.0 - pi, 0.0));
        let (stay, mover) = static_cumulative_probs(&params, &[], &zbar, 8).unwrap();
        assert_relative_eq!(stay, 1.0 - pi);
        assert_relative_eq!(mover, pi * (1.0 - 0.5f64.powi(8)), max_relative = 1e-14);
        assert!(static_cumulative_probs(&params, &[], &zbar, 9).is_err());
    }

    #[test]
    fn time_columns_are_raw_powers() {
        let rows = with_time_columns(&[vec![7.0], vec![7.0], vec![7.0]], 3).unwrap();
        assert_eq!(rows[2], vec![7.0, 2.0, 4.0, 8.0]);
        assert!(with_time_columns(&rows, 4).is_err());
    }

    #[test]
    fn static_fit_on_setting1() {
        let d = data(2000, 3);
        let fit = fit_static(&d, 0, &FitConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.aic().is_finite());
        assert_eq!(fit.n_params(), 8);
        let fit3 = fit_no_stayer(&d, 3, &FitConfig::default()).unwrap();
        assert_eq!(fit3.theta_hat.gamma.len(), 5);
        // the dynamic model nests the static one
        let dynamic = fit_direct(&d, &FitConfig::at(builtin_setting(Setting::S1).true_params.to_vec())).unwrap();
        assert!(dynamic.loglik >= fit.loglik);
    }

    fn static_world(n: usize, seed: u64) -> (SimulationConfig, PanelDataset) {
        let mut cfg = SimulationConfig {
            n,
            seed,
            ..builtin_setting(Setting::S1)
        };
        cfg.true_params.beta12 = vec![-60.0, 0.0, 0.0];
        cfg.true_params.gamma12 = vec![0.0, 0.0];
        let d = simulate_dataset(&cfg).unwrap().0;
        (cfg, d)
    }

    #[test]
    fn static_world_recovery() {
        let reps = 30;
        let (cfg, _) = static_world(1, 0);
        let t = &cfg.true_params;
        let truth = StaticParams::new(t.alpha.clone(), t.beta13.clone(), t.gamma13.clone()).unwrap().to_vec();
        let estimates: Vec<Vec<f64>> = (0..reps)
            .map(|r| {
                let (_, d) = static_world(10_000, 100 + r);
                fit_static(&d, 0, &FitConfig::at(truth.clone())).unwrap().theta
            })
            .collect();
        for j in 0..truth.len() {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / reps as f64;
            let sd = (estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
            let mcse = sd / (reps as f64).sqrt();
            assert!((mean - truth[j]).abs() <= 2.0 * mcse, "coordinate {j}: mean {mean} truth {} mcse {mcse}", truth[j]);
        }
    }

    #[test]
    fn aic_prefers_time_varying_intercept_under_trend() {
        // the hazard trends through a deterministic covariate that the fitted
        // model does not see; the time polynomial absorbs it
        let mut cfg = SimulationConfig {
            n: 4000,
            seed: 8,
            ..builtin_setting(Setting::S1)
        };
        cfg.tv_covariates[0] = CovariateProcess::NormalWalk { mean: 1.0, sd: 0.0 };
        cfg.true_params.gamma13 = vec![0.6, 0.3];
        let full = simulate_dataset(&cfg).unwrap().0;
        let hidden = PanelDataset::new(
            2,
            1,
            full.subjects
                .iter()
                .map(|s| Subject::new(s.y, s.delta, s.x.clone(), s.z.iter().map(|z| vec![z[1]]).collect()).unwrap())
                .collect(),
        )
        .unwrap();
        let aic: Vec<f64> = (0..=3)
            .map(|deg| fit_static(&hidden, deg, &FitConfig::default()).unwrap().aic())
            .collect();
        let best = (0..=3).min_by(|&a, &b| aic[a].total_cmp(&aic[b])).unwrap();
        assert!(best >= 1, "{aic:?}");
        assert!(aic[0] > aic[1]);
    }

    #[test]
    fn hessian_of_static_fit_is_positive_definite() {
        let d = data(2000, 4);
        let fit = fit_static(&d, 0, &FitConfig::default()).unwrap();
        let report = hessian_inference(
            |t| static_log_likelihood(&StaticParams::from_slice(t, 2, 2)?, &d),
            &fit.theta,
        )
        .unwrap();
        assert!(report.se.iter().all(|s| *s > 0.0 && s.is_finite()));
    }

    proptest! {
        #[test]
        fn static_total_probability(theta in proptest::collection::vec(-3.0f64..3.0, 5), x in -2.0f64..2.0, zs in proptest::collection::vec(-2.0f64..2.0, 6)) {
            let params = StaticParams::from_slice(&theta, 1, 1).unwrap();
            let zbar: Vec<Vec<f64>> = zs.iter().map(|z| vec![*z]).collect();
            let curve = static_cumulative_curve(&params, &[x], &zbar, 6).unwrap();
            let pi = logistic(theta[0] + theta[1] * x);
            let mut survive = 1.0;
            for (t, (stay, mover)) in curve.iter().enumerate() {
                prop_assert!((stay + mover + pi * survive - 1.0).abs() < 1e-12);
                if t < 6 {
                    survive *= 1.0 - logistic(theta[2] + theta[3] * x + theta[4] * zs[t]);
                }
            }
        }
    }
}

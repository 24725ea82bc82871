//! Observed-data likelihood of the dynamic model, its gradient, and the
//! latent-path enumeration used to verify both.
//!
//! A censored subject can be an initial stayer, at risk throughout, or at risk
//! until an unobserved 1 -> 2 move at some `r <= y`. The censored contribution
//! is accumulated as a log-sum-exp over these `y + 3` scenarios.
//!
//! The gradient uses the posterior over those scenarios: the score of the
//! observed likelihood is the conditional expectation of the complete-data
//! score, so the same quantities also drive the E-step.

use crate::error::{Error, Result};
use crate::model::{
    fixed_predictor, log_initial_risk, log_softmax3, transition_predictors, ModelParams,
    PanelDataset, Subject,
};

/// Largest follow-up accepted by [`enumerate_latent_paths`].
pub const MAX_ENUMERATION_Y: usize = 20;

/// Time of the latent 1 -> 2 transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionTime {
    At(usize),
    Never,
}

/// Latent part of a complete record: initial risk status and 1 -> 2 time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentPath {
    pub b: bool,
    pub r: TransitionTime,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Streaming log-sum-exp.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    pub(crate) fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Per-subject log probabilities, shared by likelihood, gradient and E-step.
pub(crate) struct SubjectTerms {
    pub log_pi: f64,
    pub log_not_pi: f64,
    /// `[log p11, log p12, log p13]` for `t = 0 ..= y`.
    pub logp: Vec<[f64; 3]>,
}

pub(crate) fn subject_terms(params: &ModelParams, subject: &Subject) -> SubjectTerms {
    let (log_pi, log_not_pi) = log_initial_risk(&params.alpha, &subject.x);
    let f12 = fixed_predictor(&params.beta12, &subject.x);
    let f13 = fixed_predictor(&params.beta13, &subject.x);
    let logp = subject.z[..=subject.y]
        .iter()
        .map(|z_t| {
            let (e12, e13) = transition_predictors(params, f12, f13, z_t);
            log_softmax3(e12, e13)
        })
        .collect();
    SubjectTerms {
        log_pi,
        log_not_pi,
        logp,
    }
}

/// Posterior over latent scenarios for one subject.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Posterior {
    pub loglik: f64,
    /// `E[B | O]`.
    pub w: f64,
    /// `Q(0) ..= Q(y)` followed by `Q(inf)`; all zero when the event was observed.
    pub q: Vec<f64>,
}

fn terms_log_likelihood(terms: &SubjectTerms, subject: &Subject) -> f64 {
    let y = subject.y;
    if subject.delta {
        let survive: f64 = terms.logp[..y].iter().map(|l| l[0]).sum();
        return terms.log_pi + survive + terms.logp[y][2];
    }
    let mut acc = LogSumExp::new();
    acc.push(terms.log_not_pi);
    let mut survive = 0.0;
    for l in &terms.logp {
        acc.push(terms.log_pi + survive + l[1]);
        survive += l[0];
    }
    acc.push(terms.log_pi + survive);
    acc.value()
}

pub(crate) fn terms_posterior(terms: &SubjectTerms, subject: &Subject) -> Posterior {
    let y = subject.y;
    if subject.delta {
        return Posterior {
            loglik: terms_log_likelihood(terms, subject),
            w: 1.0,
            q: vec![0.0; y + 2],
        };
    }
    // log weights of the at-risk scenarios: r = 0..=y, then r = inf
    let mut logw = Vec::with_capacity(y + 2);
    let mut survive = 0.0;
    for l in &terms.logp {
        logw.push(terms.log_pi + survive + l[1]);
        survive += l[0];
    }
    logw.push(terms.log_pi + survive);

    let mut at_risk = LogSumExp::new();
    for &v in &logw {
        at_risk.push(v);
    }
    let mut total = at_risk;
    total.push(terms.log_not_pi);
    let loglik = total.value();
    Posterior {
        loglik,
        w: (at_risk.value() - loglik).exp(),
        q: logw.iter().map(|v| (v - loglik).exp()).collect(),
    }
}

/// Log-likelihood contribution of one subject.
pub fn subject_log_likelihood(params: &ModelParams, subject: &Subject) -> Result<f64> {
    check_subject(params, subject)?;
    Ok(terms_log_likelihood(&subject_terms(params, subject), subject))
}

/// Sum of subject contributions, accumulated in subject order with
/// compensated summation.
pub fn total_log_likelihood(params: &ModelParams, data: &PanelDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let mut acc = CompensatedSum::default();
    for s in &data.subjects {
        acc.add(terms_log_likelihood(&subject_terms(params, s), s));
    }
    Ok(acc.value())
}

/// Gradient of [`total_log_likelihood`] in flattening order
/// `(alpha, beta12, beta13, gamma12, gamma13)`.
pub fn gradient(params: &ModelParams, data: &PanelDataset) -> Result<Vec<f64>> {
    Ok(log_likelihood_and_gradient(params, data)?.1)
}

pub fn log_likelihood_and_gradient(
    params: &ModelParams,
    data: &PanelDataset,
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_params(params)?;
    let (d, q) = (data.d, data.q);
    let p = d + 1;
    let mut grad = vec![0.0; ModelParams::n_params(d, q)];
    let mut ll = CompensatedSum::default();
    let mut occupancy = Vec::new();
    for s in &data.subjects {
        let terms = subject_terms(params, s);
        let post = terms_posterior(&terms, s);
        ll.add(post.loglik);

        let ga = post.w - terms.log_pi.exp();
        grad[0] += ga;
        axpy(&mut grad[1..p], ga, &s.x);

        // posterior probability of still being in state 1 at each t
        occupancy.clear();
        if s.delta {
            occupancy.resize(s.y + 1, 1.0);
        } else {
            let mut tail = post.q[s.y + 1];
            occupancy.resize(s.y + 1, 0.0);
            for t in (0..=s.y).rev() {
                tail += post.q[t];
                occupancy[t] = tail;
            }
        }

        let (mut sum12, mut sum13) = (0.0, 0.0);
        let g12 = 3 * p;
        let g13 = 3 * p + q;
        for (t, l) in terms.logp.iter().enumerate() {
            let n_t = occupancy[t];
            let c12 = if s.delta { 0.0 } else { post.q[t] };
            let c13 = if s.delta && t == s.y { 1.0 } else { 0.0 };
            let r12 = c12 - n_t * l[1].exp();
            let r13 = c13 - n_t * l[2].exp();
            sum12 += r12;
            sum13 += r13;
            axpy(&mut grad[g12..g12 + q], r12, &s.z[t]);
            axpy(&mut grad[g13..g13 + q], r13, &s.z[t]);
        }
        grad[p] += sum12;
        axpy(&mut grad[p + 1..2 * p], sum12, &s.x);
        grad[2 * p] += sum13;
        axpy(&mut grad[2 * p + 1..3 * p], sum13, &s.x);
    }
    Ok((ll.value(), grad))
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub(crate) fn check_subject(params: &ModelParams, subject: &Subject) -> Result<()> {
    crate::error::check_len("subject covariate rows", subject.y + 1, subject.z.len())?;
    for z_t in &subject.z {
        params.check_dims(&subject.x, z_t)?;
    }
    Ok(())
}

/// Every latent path consistent with the subject's observation, with its
/// complete-data likelihood. Evaluated directly in the probability domain.
pub fn latent_path_weights(
    params: &ModelParams,
    subject: &Subject,
) -> Result<Vec<(LatentPath, f64)>> {
    check_subject(params, subject)?;
    if subject.y > MAX_ENUMERATION_Y {
        return Err(Error::EnumerationBound {
            y: subject.y,
            max: MAX_ENUMERATION_Y,
        });
    }
    let x = &subject.x;
    let lin = |coef: &[f64]| coef[0] + coef[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let ea = lin(&params.alpha).exp();
    let pi = ea / (1.0 + ea);
    let probs: Vec<(f64, f64, f64)> = subject
        .z
        .iter()
        .map(|z| {
            let e12 = (lin(&params.beta12)
                + params.gamma12.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .exp();
            let e13 = (lin(&params.beta13)
                + params.gamma13.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .exp();
            let den = 1.0 + e12 + e13;
            (1.0 / den, e12 / den, e13 / den)
        })
        .collect();
    let stay = |upto: usize| probs[..upto].iter().map(|p| p.0).product::<f64>();

    let y = subject.y;
    if subject.delta {
        return Ok(vec![(
            LatentPath {
                b: true,
                r: TransitionTime::Never,
            },
            pi * stay(y) * probs[y].2,
        )]);
    }
    let mut paths = vec![
        (
            LatentPath {
                b: false,
                r: TransitionTime::Never,
            },
            1.0 - pi,
        ),
        (
            LatentPath {
                b: true,
                r: TransitionTime::Never,
            },
            pi * stay(y + 1),
        ),
    ];
    for s in 0..=y {
        paths.push((
            LatentPath {
                b: true,
                r: TransitionTime::At(s),
            },
            pi * stay(s) * probs[s].1,
        ));
    }
    Ok(paths)
}

/// Sum of complete-data likelihoods over all consistent latent paths; equals
/// `exp(subject_log_likelihood)`.
pub fn enumerate_latent_paths(params: &ModelParams, subject: &Subject) -> Result<f64> {
    Ok(latent_path_weights(params, subject)?
        .iter()
        .map(|(_, w)| w)
        .sum())
}

//! Parameters, panel records and the probability primitives of the dynamic
//! mover-stayer model.
//!
//! Every subject starts in state 1 (at risk) or state 2 (stayer). From state 1
//! it can stay, move to state 2 (becomes a stayer, never observed) or move to
//! state 3 (the observed event). States 2 and 3 are absorbing.
//!
//! Intercepts are stored as element 0 of `alpha`, `beta12` and `beta13`; the
//! covariate vector `x` never carries the constant. Time-varying intercepts are
//! expressed by appending deterministic columns to the `z` rows.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Regression coefficients of the dynamic model.
///
/// The flattened order used everywhere (optimizers, Hessians, JSON output) is
/// `alpha, beta12, beta13, gamma12, gamma13`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub beta12: Vec<f64>,
    pub beta13: Vec<f64>,
    pub gamma12: Vec<f64>,
    pub gamma13: Vec<f64>,
}

impl ModelParams {
    pub fn new(
        alpha: Vec<f64>,
        beta12: Vec<f64>,
        beta13: Vec<f64>,
        gamma12: Vec<f64>,
        gamma13: Vec<f64>,
    ) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "alpha (needs an intercept)",
                expected: 1,
                actual: 0,
            });
        }
        check_len("beta12", alpha.len(), beta12.len())?;
        check_len("beta13", alpha.len(), beta13.len())?;
        check_len("gamma13", gamma12.len(), gamma13.len())?;
        let params = Self {
            alpha,
            beta12,
            beta13,
            gamma12,
            gamma13,
        };
        if params.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(params)
    }

    pub fn zeros(d: usize, q: usize) -> Self {
        Self {
            alpha: vec![0.0; d + 1],
            beta12: vec![0.0; d + 1],
            beta13: vec![0.0; d + 1],
            gamma12: vec![0.0; q],
            gamma13: vec![0.0; q],
        }
    }

    /// Number of fixed covariates `d` (intercept excluded).
    pub fn fixed_dim(&self) -> usize {
        self.alpha.len() - 1
    }

    /// Number of time-varying covariates `q`.
    pub fn tv_dim(&self) -> usize {
        self.gamma12.len()
    }

    /// Length of the flattened parameter vector, `3(d+1) + 2q`.
    pub fn n_params(d: usize, q: usize) -> usize {
        3 * (d + 1) + 2 * q
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::n_params(self.fixed_dim(), self.tv_dim()));
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.beta12);
        out.extend_from_slice(&self.beta13);
        out.extend_from_slice(&self.gamma12);
        out.extend_from_slice(&self.gamma13);
        out
    }

    pub fn from_slice(theta: &[f64], d: usize, q: usize) -> Result<Self> {
        check_len("flattened parameters", Self::n_params(d, q), theta.len())?;
        let p = d + 1;
        Self::new(
            theta[..p].to_vec(),
            theta[p..2 * p].to_vec(),
            theta[2 * p..3 * p].to_vec(),
            theta[3 * p..3 * p + q].to_vec(),
            theta[3 * p + q..].to_vec(),
        )
    }

    /// Coordinate labels in flattening order, 1-based within each block
    /// (`alpha[1]` is the intercept).
    pub fn coordinate_names(d: usize, q: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(Self::n_params(d, q));
        for (block, len) in [
            ("alpha", d + 1),
            ("beta12", d + 1),
            ("beta13", d + 1),
            ("gamma12", q),
            ("gamma13", q),
        ] {
            names.extend((1..=len).map(|j| format!("{block}[{j}]")));
        }
        names
    }

    pub(crate) fn check_dims(&self, x: &[f64], z_t: &[f64]) -> Result<()> {
        check_len("fixed covariates", self.fixed_dim(), x.len())?;
        check_len("time-varying covariates", self.tv_dim(), z_t.len())
    }
}

/// One observed panel record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Last observation time `Y`.
    pub y: usize,
    /// `true` when the event (1 -> 3) was observed at `y`.
    pub delta: bool,
    /// Time-fixed covariates, intercept not included.
    pub x: Vec<f64>,
    /// Time-varying covariate rows `z_0 ..= z_y`.
    pub z: Vec<Vec<f64>>,
}

impl Subject {
    pub fn new(y: usize, delta: bool, x: Vec<f64>, z: Vec<Vec<f64>>) -> Result<Self> {
        check_len("covariate history rows (y + 1)", y + 1, z.len())?;
        let q = z[0].len();
        for row in &z {
            check_len("time-varying covariate row", q, row.len())?;
        }
        if x.iter().chain(z.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subject covariates"));
        }
        Ok(Self { y, delta, x, z })
    }
}

/// An ordered collection of subjects sharing covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub subjects: Vec<Subject>,
    pub d: usize,
    pub q: usize,
}

impl PanelDataset {
    pub fn new(d: usize, q: usize, subjects: Vec<Subject>) -> Result<Self> {
        for s in &subjects {
            check_len("subject fixed covariates", d, s.x.len())?;
            check_len("subject covariate history rows", s.y + 1, s.z.len())?;
            for row in &s.z {
                check_len("subject time-varying covariates", q, row.len())?;
            }
        }
        Ok(Self { subjects, d, q })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Largest `y + 1` across subjects (the follow-up length `K` seen in the data).
    pub fn max_time(&self) -> usize {
        self.subjects.iter().map(|s| s.y + 1).max().unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        ModelParams::n_params(self.d, self.q)
    }

    /// New dataset made of the subjects at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            d: self.d,
            q: self.q,
        }
    }

    pub(crate) fn check_params(&self, params: &ModelParams) -> Result<()> {
        check_len("fixed covariates", self.d, params.fixed_dim())?;
        check_len("time-varying covariates", self.q, params.tv_dim())
    }
}

/// One-step transition probabilities out of state 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionProbs {
    pub p11: f64,
    pub p12: f64,
    pub p13: f64,
}

/// `log(1 + exp(a))` without overflow.
pub(crate) fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

pub(crate) fn logistic(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `coef[0] + coef[1..] . x`
#[inline]
pub(crate) fn fixed_predictor(coef: &[f64], x: &[f64]) -> f64 {
    coef[0] + dot(&coef[1..], x)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `(log pi, log(1 - pi))` for the initial-risk logit.
#[inline]
pub(crate) fn log_initial_risk(alpha: &[f64], x: &[f64]) -> (f64, f64) {
    let a = fixed_predictor(alpha, x);
    (-softplus(-a), -softplus(a))
}

/// Log transition probabilities `[log p11, log p12, log p13]` given the two
/// linear predictors (baseline category 1 -> 1 has predictor 0).
#[inline]
pub(crate) fn log_softmax3(eta12: f64, eta13: f64) -> [f64; 3] {
    let m = eta12.max(eta13).max(0.0);
    let lse = m + ((-m).exp() + (eta12 - m).exp() + (eta13 - m).exp()).ln();
    [-lse, eta12 - lse, eta13 - lse]
}

/// Linear predictors `(eta12, eta13)` at one time point.
#[inline]
pub(crate) fn transition_predictors(
    params: &ModelParams,
    fixed12: f64,
    fixed13: f64,
    z_t: &[f64],
) -> (f64, f64) {
    (
        fixed12 + dot(&params.gamma12, z_t),
        fixed13 + dot(&params.gamma13, z_t),
    )
}

/// Probability of being at risk at baseline, `pi = logistic(alpha' (1, x))`.
pub fn initial_risk_prob(alpha: &[f64], x: &[f64]) -> Result<f64> {
    check_len("alpha (d + 1)", x.len() + 1, alpha.len())?;
    Ok(logistic(fixed_predictor(alpha, x)))
}

/// Multinomial-logit transition probabilities out of state 1 at one time point.
pub fn transition_probs(params: &ModelParams, x: &[f64], z_t: &[f64]) -> Result<TransitionProbs> {
    params.check_dims(x, z_t)?;
    let (eta12, eta13) = transition_predictors(
        params,
        fixed_predictor(&params.beta12, x),
        fixed_predictor(&params.beta13, x),
        z_t,
    );
    let [l11, l12, l13] = log_softmax3(eta12, eta13);
    Ok(TransitionProbs {
        p11: l11.exp(),
        p12: l12.exp(),
        p13: l13.exp(),
    })
}

/// Cumulative probabilities `(P(S_t = 2), P(S_t = 3))` given the covariate
/// history `zbar` (rows `z_0, z_1, ...`; at least `t` rows are needed).
pub fn cumulative_state_probs(
    params: &ModelParams,
    x: &[f64],
    zbar: &[Vec<f64>],
    t: usize,
) -> Result<(f64, f64)> {
    let curve = cumulative_curve(params, x, zbar, t)?;
    Ok(curve[t])
}

/// `(P(S_s = 2), P(S_s = 3))` for every `s = 0 ..= t_max`, in one pass.
pub fn cumulative_curve(
    params: &ModelParams,
    x: &[f64],
    zbar: &[Vec<f64>],
    t_max: usize,
) -> Result<Vec<(f64, f64)>> {
    if zbar.len() < t_max {
        return Err(Error::InsufficientHistory {
            t: t_max,
            required: t_max,
            available: zbar.len(),
        });
    }
    let pi = initial_risk_prob(&params.alpha, x)?;
    let f12 = fixed_predictor(&params.beta12, x);
    let f13 = fixed_predictor(&params.beta13, x);
    let mut out = Vec::with_capacity(t_max + 1);
    let (mut to_stayer, mut to_mover, mut survive) = (0.0, 0.0, 1.0);
    out.push((1.0 - pi, 0.0));
    for z_t in &zbar[..t_max] {
        params.check_dims(x, z_t)?;
        let (e12, e13) = transition_predictors(params, f12, f13, z_t);
        let [l11, l12, l13] = log_softmax3(e12, e13);
        to_stayer += survive * l12.exp();
        to_mover += survive * l13.exp();
        survive *= l11.exp();
        out.push((1.0 - pi + pi * to_stayer, pi * to_mover));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setting1() -> ModelParams {
        ModelParams::new(
            vec![0.8, 0.5, -1.0],
            vec![-1.0, 0.6, -0.1],
            vec![-2.0, -0.4, 0.1],
            vec![0.11, -0.2],
            vec![-0.5, 0.3],
        )
        .unwrap()
    }

    #[test]
    fn zero_alpha_gives_one_half() {
        assert_eq!(initial_risk_prob(&[0.0, 0.0, 0.0], &[3.0, -7.0]).unwrap(), 0.5);
    }

    #[test]
    fn setting1_baseline_risk() {
        // exp(0.8) / (1 + exp(0.8))
        let pi = initial_risk_prob(&[0.8, 0.5, -1.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(pi, 0.689_974_481_127_612_8, max_relative = 1e-14);
    }

    #[test]
    fn saturated_risk_is_tiny_but_positive() {
        let pi = initial_risk_prob(&[-30.0, 0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(pi > 0.0 && pi < 1e-13);
        let pi = initial_risk_prob(&[-700.0], &[]).unwrap();
        assert!(pi.is_finite() && pi >= 0.0);
        let pi = initial_risk_prob(&[700.0], &[]).unwrap();
        assert_eq!(pi, 1.0);
    }

    #[test]
    fn alpha_dimension_mismatch() {
        assert!(matches!(
            initial_risk_prob(&[0.0, 1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(transition_probs(&setting1(), &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_params_give_uniform_transitions() {
        let p = transition_probs(&ModelParams::zeros(2, 2), &[1.0, 2.0], &[0.5, -1.0]).unwrap();
        for v in [p.p11, p.p12, p.p13] {
            assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn setting1_transition_probs_match_direct_formula() {
        let p = transition_probs(&setting1(), &[0.0, 0.0], &[0.0, 3.0]).unwrap();
        // eta12 = -1 + 3 * (-0.2) = -1.6, eta13 = -2 + 3 * 0.3 = -1.1
        let (e12, e13) = ((-1.6f64).exp(), (-1.1f64).exp());
        let den = 1.0 + e12 + e13;
        assert!((p.p12 - e12 / den).abs() < 1e-12);
        assert!((p.p13 - e13 / den).abs() < 1e-12);
        assert!((p.p11 - 1.0 / den).abs() < 1e-12);
    }

    #[test]
    fn degenerate_logits() {
        let mut params = ModelParams::zeros(0, 0);
        params.beta12[0] = -1e4;
        params.beta13[0] = -1e4;
        let p = transition_probs(&params, &[], &[]).unwrap();
        assert!((p.p11 - 1.0).abs() < 1e-12);
        assert!(p.p12 >= 0.0 && p.p13 >= 0.0);
        params.beta12[0] = 1e4;
        let p = transition_probs(&params, &[], &[]).unwrap();
        assert!((p.p12 - 1.0).abs() < 1e-12 && p.p11 >= 0.0);
    }

    #[test]
    fn cumulative_at_zero() {
        let params = setting1();
        let x = [0.3, 1.0];
        let pi = initial_risk_prob(&params.alpha, &x).unwrap();
        let (p2, p3) = cumulative_state_probs(&params, &x, &[], 0).unwrap();
        assert_eq!(p2, 1.0 - pi);
        assert_eq!(p3, 0.0);
    }

    #[test]
    fn cumulative_needs_history() {
        let err = cumulative_state_probs(&setting1(), &[0.0, 0.0], &[vec![0.0, 1.0]], 2);
        assert!(matches!(err, Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn flatten_roundtrip_and_names() {
        let p = setting1();
        let v = p.to_vec();
        assert_eq!(v.len(), 13);
        assert_eq!(ModelParams::from_slice(&v, 2, 2).unwrap(), p);
        let names = ModelParams::coordinate_names(2, 2);
        assert_eq!(names[0], "alpha[1]");
        assert_eq!(names[12], "gamma13[2]");
    }

    #[test]
    fn subject_requires_full_history() {
        assert!(Subject::new(2, false, vec![], vec![vec![]; 2]).is_err());
        assert!(Subject::new(1, true, vec![0.0], vec![vec![1.0], vec![2.0]]).is_ok());
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        proptest::collection::vec(-4.0f64..4.0, 13)
            .prop_map(|v| ModelParams::from_slice(&v, 2, 2).unwrap())
    }

    fn arb_history(len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), len)
    }

    proptest! {
        #[test]
        fn transition_simplex(params in arb_params(), x in proptest::collection::vec(-50.0f64..50.0, 2),
                              z in proptest::collection::vec(-50.0f64..50.0, 2)) {
            let p = transition_probs(&params, &x, &z).unwrap();
            prop_assert!((p.p11 + p.p12 + p.p13 - 1.0).abs() <= 1e-12);
            for v in [p.p11, p.p12, p.p13] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn risk_monotone_in_positive_coefficient(a0 in -3.0f64..3.0, a1 in 0.01f64..3.0,
                                                  other in -2.0f64..2.0) {
            let grid: Vec<f64> = (0..40).map(|i| -10.0 + 0.5 * i as f64).collect();
            let probs: Vec<f64> = grid.iter()
                .map(|&v| initial_risk_prob(&[a0, a1, 0.7], &[v, other]).unwrap())
                .collect();
            prop_assert!(probs.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn cumulative_total_probability_and_monotone(params in arb_params(),
                                                     x in proptest::collection::vec(-2.0f64..2.0, 2),
                                                     zbar in arb_history(8)) {
            let curve = cumulative_curve(&params, &x, &zbar, 8).unwrap();
            let pi = initial_risk_prob(&params.alpha, &x).unwrap();
            let mut survive = 1.0;
            for (t, &(p2, p3)) in curve.iter().enumerate() {
                prop_assert!((p2 + p3 + pi * survive - 1.0).abs() < 1e-12);
                if t < 8 {
                    survive *= transition_probs(&params, &x, &zbar[t]).unwrap().p11;
                }
                if t > 0 {
                    prop_assert!(p2 >= curve[t - 1].0 - 1e-15);
                    prop_assert!(p3 >= curve[t - 1].1 - 1e-15);
                }
            }
        }

        #[test]
        fn shifting_covariate_is_absorbed_by_intercept(params in arb_params(), c in -3.0f64..3.0,
                                                        x in proptest::collection::vec(-2.0f64..2.0, 2),
                                                        z in proptest::collection::vec(-2.0f64..2.0, 2)) {
            let mut shifted = params.clone();
            shifted.alpha[0] -= c * params.alpha[1];
            shifted.beta12[0] -= c * params.beta12[1];
            shifted.beta13[0] -= c * params.beta13[1];
            let xs = [x[0] + c, x[1]];
            let a = initial_risk_prob(&params.alpha, &x).unwrap();
            let b = initial_risk_prob(&shifted.alpha, &xs).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let p = transition_probs(&params, &x, &z).unwrap();
            let s = transition_probs(&shifted, &xs, &z).unwrap();
            prop_assert!((p.p12 - s.p12).abs() < 1e-12 && (p.p13 - s.p13).abs() < 1e-12);
        }
    }
}

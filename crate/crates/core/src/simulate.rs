//! Simulation of panel datasets with known latent trajectories.
//!
//! Subject `i` draws everything from its own stream (see [`crate::rng`]) in a
//! fixed order: fixed covariates, the full covariate path, the censoring
//! time, the initial status, then one uniform per time step whether or not
//! the subject is still at risk. Covariates are generated before and
//! independently of the states.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{initial_risk_prob, transition_probs, ModelParams, PanelDataset, Subject};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedCovariate {
    StandardNormal,
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateProcess {
    /// Starts at 0, increments `N(mean, sd^2)`.
    NormalWalk { mean: f64, sd: f64 },
    /// Starts uniform on `{1, ..., 5}`, increments `Binomial(2, 0.5) - 1`.
    IntegerWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    /// Maximum follow-up `K`; event and censoring times lie in `0..K`.
    pub k_max: usize,
    pub true_params: ModelParams,
    pub fixed_covariates: Vec<FixedCovariate>,
    pub tv_covariates: Vec<CovariateProcess>,
    /// Rate of the exponential shifted to start at 1; the draw is floored and
    /// truncated at `k_max - 1`.
    pub censoring_rate: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn d(&self) -> usize {
        self.fixed_covariates.len()
    }

    pub fn q(&self) -> usize {
        self.tv_covariates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.k_max < 2 {
            return bad(format!("k_max must be at least 2, got {}", self.k_max));
        }
        if !(self.censoring_rate > 0.0 && self.censoring_rate.is_finite()) {
            return bad(format!("censoring rate must be positive, got {}", self.censoring_rate));
        }
        check_len("fixed covariate generators", self.true_params.fixed_dim(), self.d())?;
        check_len("time-varying covariate generators", self.true_params.tv_dim(), self.q())?;
        for g in &self.fixed_covariates {
            if let FixedCovariate::Bernoulli { p } = g {
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("bernoulli probability {p} outside [0, 1]"));
                }
            }
        }
        for g in &self.tv_covariates {
            if let CovariateProcess::NormalWalk { mean, sd } = g {
                if !(mean.is_finite() && sd.is_finite() && *sd >= 0.0) {
                    return bad(format!("invalid normal walk increment N({mean}, {sd}^2)"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    S1,
    S2,
    S3,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(Setting::S1),
            "s2" | "2" => Ok(Setting::S2),
            "s3" | "3" => Ok(Setting::S3),
            other => Err(Error::InvalidConfig(format!("unknown setting '{other}'"))),
        }
    }
}

/// The three benchmark settings. `n` defaults to 10000 and `seed` to 0.
pub fn builtin_setting(id: Setting) -> SimulationConfig {
    let params = |a: [f64; 3], b12: [f64; 3], b13: [f64; 3], g12: [f64; 2], g13: [f64; 2]| {
        ModelParams::new(a.into(), b12.into(), b13.into(), g12.into(), g13.into())
            .expect("built-in parameters are valid")
    };
    let (true_params, censoring_rate, k_max) = match id {
        Setting::S1 => (
            params(
                [0.8, 0.5, -1.0],
                [-1.0, 0.6, -0.1],
                [-2.0, -0.4, 0.1],
                [0.11, -0.2],
                [-0.5, 0.3],
            ),
            0.03,
            5,
        ),
        Setting::S2 => (
            params(
                [2.3, 0.5, -1.0],
                [-2.0, 0.6, -0.1],
                [-1.5, -0.4, 0.1],
                [0.11, -0.2],
                [-0.5, 0.3],
            ),
            0.05,
            5,
        ),
        Setting::S3 => (
            params(
                [0.8, 0.5, -1.0],
                [-1.0, 0.6, -0.1],
                [-2.0, -0.1, 0.3],
                [0.2, -0.2],
                [-0.1, 0.1],
            ),
            0.03,
            10,
        ),
    };
    SimulationConfig {
        n: 10_000,
        k_max,
        true_params,
        fixed_covariates: vec![
            FixedCovariate::StandardNormal,
            FixedCovariate::Bernoulli { p: 0.4 },
        ],
        tv_covariates: vec![
            CovariateProcess::NormalWalk { mean: 0.5, sd: 1.0 },
            CovariateProcess::IntegerWalk,
        ],
        censoring_rate,
        seed: 0,
    }
}

/// Complete latent history of one simulated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    /// `S_0 ..= S_K`, each in `{1, 2, 3}`.
    pub states: Vec<u8>,
    pub b0: bool,
    /// Time of the latent 1 -> 2 move, if any.
    pub r: Option<usize>,
    /// Time of the 1 -> 3 move, if any (observed or not).
    pub event_time: Option<usize>,
    pub censoring_time: usize,
    /// Full covariate path `z_0 .. z_{K-1}`, beyond the observed part.
    pub z: Vec<Vec<f64>>,
}

impl LatentTrajectory {
    pub fn final_state(&self) -> u8 {
        *self.states.last().expect("states are never empty")
    }
}

fn simulate_subject(config: &SimulationConfig, index: usize) -> Result<(Subject, LatentTrajectory)> {
    let k = config.k_max;
    let mut rng = stream(config.seed, Purpose::Subject, index as u64);

    let x: Vec<f64> = config
        .fixed_covariates
        .iter()
        .map(|g| match g {
            FixedCovariate::StandardNormal => rng.sample(StandardNormal),
            FixedCovariate::Bernoulli { p } => f64::from(u8::from(rng.gen_bool(*p))),
        })
        .collect();

    let mut z: Vec<Vec<f64>> = Vec::with_capacity(k);
    for t in 0..k {
        let row = config
            .tv_covariates
            .iter()
            .enumerate()
            .map(|(j, g)| match (g, t) {
                (CovariateProcess::NormalWalk { .. }, 0) => 0.0,
                (CovariateProcess::NormalWalk { mean, sd }, _) => {
                    let inc = Normal::new(*mean, *sd).expect("validated").sample(&mut rng);
                    z[t - 1][j] + inc
                }
                (CovariateProcess::IntegerWalk, 0) => f64::from(rng.gen_range(1..=5u8)),
                (CovariateProcess::IntegerWalk, _) => {
                    let inc = i32::from(rng.gen_bool(0.5)) + i32::from(rng.gen_bool(0.5)) - 1;
                    z[t - 1][j] + f64::from(inc)
                }
            })
            .collect();
        z.push(row);
    }

    let shifted = 1.0 + Exp::new(config.censoring_rate).expect("validated").sample(&mut rng);
    let censoring_time = (shifted.floor() as usize).min(k - 1);

    let params = &config.true_params;
    let b0 = rng.gen::<f64>() < initial_risk_prob(&params.alpha, &x)?;
    let mut states = Vec::with_capacity(k + 1);
    let mut state = if b0 { 1u8 } else { 2u8 };
    states.push(state);
    let (mut r, mut event_time) = (None, None);
    for (t, z_t) in z.iter().enumerate() {
        let u: f64 = rng.gen();
        if state == 1 {
            let p = transition_probs(params, &x, z_t)?;
            if u >= p.p11 + p.p12 {
                state = 3;
                event_time = Some(t);
            } else if u >= p.p11 {
                state = 2;
                r = Some(t);
            }
        }
        states.push(state);
    }

    let (y, delta) = match event_time {
        Some(t) if t <= censoring_time => (t, true),
        _ => (censoring_time, false),
    };
    let subject = Subject::new(y, delta, x, z[..=y].to_vec())?;
    Ok((
        subject,
        LatentTrajectory {
            states,
            b0,
            r,
            event_time,
            censoring_time,
            z,
        },
    ))
}

/// Simulated dataset and the latent truth behind it, in subject order.
pub fn simulate_dataset(config: &SimulationConfig) -> Result<(PanelDataset, Vec<LatentTrajectory>)> {
    config.validate()?;
    let (subjects, latent): (Vec<Subject>, Vec<LatentTrajectory>) = (0..config.n)
        .map(|i| simulate_subject(config, i))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((PanelDataset::new(config.d(), config.q(), subjects)?, latent))
}

/// One row of the occupancy table; all values in percent of subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub t: usize,
    pub state1: f64,
    pub state2: f64,
    pub state3: f64,
    /// Events observed at `t` (absent for the final time).
    pub observed_movers: Option<f64>,
    /// Subjects censored at `t` (absent for the final time).
    pub censored: Option<f64>,
}

pub fn occupancy_table(latent: &[LatentTrajectory], data: &PanelDataset) -> Result<Vec<OccupancyRow>> {
    if latent.len() != data.len() {
        return Err(Error::Misaligned(format!(
            "{} trajectories for {} subjects",
            latent.len(),
            data.len()
        )));
    }
    if latent.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = latent[0].states.len() - 1;
    if let Some(i) = latent.iter().position(|l| l.states.len() != k + 1) {
        return Err(Error::Misaligned(format!("trajectory {i} has a different length")));
    }
    if let Some(i) = data.subjects.iter().position(|s| s.y >= k) {
        return Err(Error::Misaligned(format!("subject {i} observed beyond the trajectory")));
    }
    let n = latent.len() as f64;
    let pct = |count: usize| count as f64 * 100.0 / n;
    let mut movers = vec![0usize; k];
    let mut censored = vec![0usize; k];
    for s in &data.subjects {
        if s.delta {
            movers[s.y] += 1;
        } else {
            censored[s.y] += 1;
        }
    }
    Ok((0..=k)
        .map(|t| {
            let count = |state| pct(latent.iter().filter(|l| l.states[t] == state).count());
            OccupancyRow {
                t,
                state1: count(1),
                state2: count(2),
                state3: count(3),
                observed_movers: (t < k).then(|| pct(movers[t])),
                censored: (t < k).then(|| pct(censored[t])),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(id: Setting, n: usize, seed: u64) -> SimulationConfig {
        SimulationConfig {
            n,
            seed,
            ..builtin_setting(id)
        }
    }

    #[test]
    fn builtin_values() {
        let s1 = builtin_setting(Setting::S1);
        assert_eq!(s1.true_params.alpha, vec![0.8, 0.5, -1.0]);
        assert_eq!((s1.k_max, s1.censoring_rate), (5, 0.03));
        let s2 = builtin_setting(Setting::S2);
        assert_eq!(s2.true_params.alpha, vec![2.3, 0.5, -1.0]);
        assert_eq!(s2.true_params.beta12, vec![-2.0, 0.6, -0.1]);
        assert_eq!(s2.true_params.beta13, vec![-1.5, -0.4, 0.1]);
        assert_eq!(s2.censoring_rate, 0.05);
        let s3 = builtin_setting(Setting::S3);
        assert_eq!(s3.true_params.beta13, vec![-2.0, -0.1, 0.3]);
        assert_eq!(s3.true_params.gamma12, vec![0.2, -0.2]);
        assert_eq!(s3.true_params.gamma13, vec![-0.1, 0.1]);
        assert_eq!(s3.k_max, 10);
        assert_eq!("S2".parse::<Setting>().unwrap(), Setting::S2);
        assert!("s4".parse::<Setting>().is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = config(Setting::S1, 10, 0);
        c.k_max = 1;
        assert!(simulate_dataset(&c).is_err());
        let mut c = config(Setting::S1, 10, 0);
        c.censoring_rate = 0.0;
        assert!(simulate_dataset(&c).is_err());
        let mut c = config(Setting::S1, 10, 0);
        c.fixed_covariates.pop();
        assert!(simulate_dataset(&c).is_err());
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let (a, la) = simulate_dataset(&config(Setting::S1, 300, 5)).unwrap();
        let (b, lb) = simulate_dataset(&config(Setting::S1, 300, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, lc) = simulate_dataset(&config(Setting::S1, 120, 5)).unwrap();
        assert_eq!(&a.subjects[..120], &c.subjects[..]);
        assert_eq!(&la[..120], &lc[..]);
        let (d, _) = simulate_dataset(&config(Setting::S1, 300, 6)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn no_stayers_when_forced_at_risk() {
        let mut c = config(Setting::S1, 2000, 1);
        c.true_params.alpha = vec![50.0, 0.0, 0.0];
        c.true_params.beta12 = vec![-50.0, 0.0, 0.0];
        c.true_params.gamma12 = vec![0.0, 0.0];
        let (_, latent) = simulate_dataset(&c).unwrap();
        assert!(latent.iter().all(|l| l.states.iter().all(|&s| s != 2)));
    }

    #[test]
    fn all_initial_stayers_table() {
        let mut c = config(Setting::S1, 500, 2);
        c.true_params.alpha = vec![-60.0, 0.0, 0.0];
        let (data, latent) = simulate_dataset(&c).unwrap();
        let table = occupancy_table(&latent, &data).unwrap();
        for row in &table {
            assert_eq!(row.state2, 100.0);
            assert_eq!(row.observed_movers.unwrap_or(0.0), 0.0);
        }
        assert!(occupancy_table(&latent[1..], &data).is_err());
    }

    #[test]
    fn observation_rules() {
        let (data, latent) = simulate_dataset(&config(Setting::S1, 3000, 3)).unwrap();
        for (s, l) in data.subjects.iter().zip(&latent) {
            assert!(matches!(l.states[0], 1 | 2));
            assert_eq!(l.states[0] == 1, l.b0);
            assert!(l.states.windows(2).all(|w| w[0] == w[1] || w[0] == 1));
            assert_eq!(l.z.len(), 5);
            assert_eq!(&l.z[..=s.y], &s.z[..]);
            assert!(l.censoring_time >= 1 && l.censoring_time <= 4);
            match l.event_time {
                Some(t) if t <= l.censoring_time => assert!(s.delta && s.y == t),
                _ => assert!(!s.delta && s.y == l.censoring_time),
            }
            if s.delta {
                assert_eq!(l.final_state(), 3);
            }
            // integer walk stays on the integers, normal walk starts at 0
            assert!(l.z.iter().all(|row| row[1].fract() == 0.0));
            assert_eq!(l.z[0][0], 0.0);
            assert!((1.0..=5.0).contains(&l.z[0][1]));
        }
    }

    /// Exact state marginals for a binary covariate and constant `z`.
    fn exact_marginals(params: &ModelParams, p_x: f64, k: usize) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; k + 1];
        for (x, px) in [(0.0, 1.0 - p_x), (1.0, p_x)] {
            let pi = initial_risk_prob(&params.alpha, &[x]).unwrap();
            let p = transition_probs(params, &[x], &[0.0]).unwrap();
            let mut dist = [pi, 1.0 - pi, 0.0];
            for row in out.iter_mut() {
                for s in 0..3 {
                    row[s] += px * dist[s];
                }
                dist = [dist[0] * p.p11, dist[1] + dist[0] * p.p12, dist[2] + dist[0] * p.p13];
            }
        }
        out
    }

    #[test]
    fn brute_force_small_instance() {
        let params = ModelParams::new(
            vec![0.3, -0.8],
            vec![-0.5, 0.7],
            vec![-1.0, 0.4],
            vec![0.9],
            vec![-0.3],
        )
        .unwrap();
        let c = SimulationConfig {
            n: 40_000,
            k_max: 2,
            true_params: params.clone(),
            fixed_covariates: vec![FixedCovariate::Bernoulli { p: 0.4 }],
            tv_covariates: vec![CovariateProcess::NormalWalk { mean: 0.0, sd: 0.0 }],
            censoring_rate: 0.5,
            seed: 17,
        };
        let (_, latent) = simulate_dataset(&c).unwrap();
        let exact = exact_marginals(&params, 0.4, 2);
        let n = latent.len() as f64;
        for (t, row) in exact.iter().enumerate() {
            for s in 0..3 {
                let freq = latent.iter().filter(|l| l.states[t] == s as u8 + 1).count() as f64 / n;
                let se = (row[s] * (1.0 - row[s]) / n).sqrt().max(1e-12);
                assert!((freq - row[s]).abs() <= 3.0 * se, "t={t} s={s}: {freq} vs {}", row[s]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn occupancy_rows_are_valid(seed in any::<u64>(), setting in 0..3usize) {
            let id = [Setting::S1, Setting::S2, Setting::S3][setting];
            let (data, latent) = simulate_dataset(&config(id, 400, seed)).unwrap();
            let table = occupancy_table(&latent, &data).unwrap();
            let mut moved = 0.0;
            let mut left = 0.0;
            for w in table.windows(2) {
                prop_assert!(w[1].state2 >= w[0].state2);
                prop_assert!(w[1].state3 >= w[0].state3);
            }
            for row in &table {
                prop_assert!((row.state1 + row.state2 + row.state3 - 100.0).abs() < 1e-9);
                moved += row.observed_movers.unwrap_or(0.0);
                left += row.censored.unwrap_or(0.0);
            }
            prop_assert!((moved + left - 100.0).abs() < 1e-9);
        }
    }
}

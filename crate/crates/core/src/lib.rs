//! Dynamic mover-stayer model for discrete-time panel data.
//!
//! Subjects start either at risk of an event (state 1) or as stayers
//! (state 2). While at risk they may, at every time step, remain at risk,
//! become stayers, or experience the event (state 3). The move to the stayer
//! state is never observed, so both the initial state and that move are
//! latent. This crate provides simulation, maximum-likelihood fitting (direct
//! and EM), Hessian and bootstrap inference, cumulative state probabilities,
//! comparator models, replication studies and a CLI.

pub mod cli;
pub mod compare;
pub mod error;
pub mod estimate;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use estimate::{FitConfig, FitResult, InferenceReport};
pub use model::{ModelParams, PanelDataset, Subject, TransitionProbs};
pub use simulate::{builtin_setting, simulate_dataset, Setting, SimulationConfig};

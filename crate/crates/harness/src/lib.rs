//! Experiment driver for the workbench: PID baseline and trained-policy
//! evaluation, the fixed and randomized MAL03 training experiments, CSV and
//! JSON outputs, and the live session engine whose event logs replay
//! bit-for-bit.

pub mod csvio;
pub mod evaluate;
pub mod experiment;
pub mod live;
pub mod metrics;

use procrl_core::envgym::EnvError;
use procrl_core::plantsim::PlantError;
use procrl_core::ppo::PpoError;
use procrl_core::scenario::ScenarioError;
use thiserror::Error;

pub use evaluate::{evaluate_baseline, evaluate_checkpoint, evaluate_policy, evaluate_schedule, EpisodeReport};
pub use experiment::{
    run_fixed_experiment, run_variable_experiment, FixedExperimentConfig, FixedOutcome, FixedReport,
    VariableExperimentConfig, VariableReport,
};
pub use live::{replay, EventLog, Frame, LiveSim, SessionEvent};
pub use metrics::{moving_average, recovery_time, RecoveryBand};

/// Default master seed; `PROCRL_SEED` overrides it.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("procedure rejected: {0}")]
    Procedure(String),
    #[error("bad PROCRL_SEED {0:?}")]
    BadSeed(String),
}

/// Master seed from `PROCRL_SEED`, or `fallback` when unset.
pub fn master_seed(fallback: u64) -> Result<u64, HarnessError> {
    match std::env::var("PROCRL_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| HarnessError::BadSeed(v)),
        Err(_) => Ok(fallback),
    }
}

use std::path::{Path, PathBuf};

use procrl_core::envgym::{EnvConfig, PlantEnv, StepRecord};
use procrl_core::plantsim::{PlantState, SensorVector};
use procrl_core::ppo::{Checkpoint, GreedyPolicy};
use procrl_core::scenario::MalfunctionScenario;
use serde::{Deserialize, Serialize};

use crate::csvio::save_trace;
use crate::metrics::{recovery_time, RecoveryBand};
use crate::HarnessError;

/// One evaluated episode over the 30-minute reward window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: MalfunctionScenario,
    pub seed: u64,
    pub cumulative_reward: f64,
    /// Reward at the end of each action interval.
    pub rewards: Vec<f64>,
    /// Seconds from the first action; `None` when the pressure never settles.
    pub recovery_time: Option<f64>,
    pub actions: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub trace_path: Option<PathBuf>,
    #[serde(skip)]
    pub trace: Vec<PlantState>,
}

impl EpisodeReport {
    /// Writes the physics trace as CSV and remembers where.
    pub fn persist_trace(&mut self, path: &Path) -> Result<(), HarnessError> {
        save_trace(&self.trace, path)?;
        self.trace_path = Some(path.to_path_buf());
        Ok(())
    }
}

/// Runs one episode, asking `policy` for each setpoint.
pub fn run_episode(
    env_config: &EnvConfig,
    scenario: MalfunctionScenario,
    seed: u64,
    band: RecoveryBand,
    mut policy: impl FnMut(usize, &SensorVector) -> Result<f64, HarnessError>,
) -> Result<EpisodeReport, HarnessError> {
    let mut env = PlantEnv::new(env_config.clone(), scenario)?.with_trace(true);
    let mut obs = env.reset_episode()?;
    let mut actions = Vec::with_capacity(env_config.episode.horizon_steps);
    for k in 0..env_config.episode.horizon_steps {
        let a = policy(k, &obs)?;
        let out = env.step_sv(a)?;
        actions.push(env.records()[k].action);
        obs = out.observation;
    }
    let rewards: Vec<f64> = env.records().iter().map(|r| r.reward).collect();
    Ok(EpisodeReport {
        scenario,
        seed,
        cumulative_reward: rewards.iter().sum(),
        rewards,
        recovery_time: recovery_time(env.trace(), env_config.reward.sigma, band),
        actions,
        steps: env.records().to_vec(),
        trace_path: None,
        trace: env.trace().to_vec(),
    })
}

/// Standard PID control: PC130 keeps its setpoint at sigma throughout.
pub fn evaluate_baseline(
    env_config: &EnvConfig,
    scenario: MalfunctionScenario,
    band: RecoveryBand,
) -> Result<EpisodeReport, HarnessError> {
    let sv = env_config.reward.sigma;
    run_episode(env_config, scenario, 0, band, |_, _| Ok(sv))
}

/// Plays a fixed setpoint schedule; the last entry is held if it is short.
pub fn evaluate_schedule(
    env_config: &EnvConfig,
    scenario: MalfunctionScenario,
    schedule: &[f64],
    band: RecoveryBand,
) -> Result<EpisodeReport, HarnessError> {
    if schedule.is_empty() {
        return evaluate_baseline(env_config, scenario, band);
    }
    run_episode(env_config, scenario, 0, band, |k, _| Ok(schedule[k.min(schedule.len() - 1)]))
}

pub fn evaluate_greedy(
    env_config: &EnvConfig,
    policy: &GreedyPolicy,
    scenario: MalfunctionScenario,
    seed: u64,
    band: RecoveryBand,
) -> Result<EpisodeReport, HarnessError> {
    run_episode(env_config, scenario, seed, band, |_, obs| Ok(policy.act(&obs.to_array())?))
}

/// Greedy episode of a checkpointed policy. The checkpoint is validated in
/// full before the plant is touched.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    env_config: &EnvConfig,
    scenario: MalfunctionScenario,
    seed: u64,
) -> Result<EpisodeReport, HarnessError> {
    let policy = checkpoint.policy()?;
    evaluate_greedy(env_config, &policy, scenario, seed, RecoveryBand::default())
}

pub fn evaluate_policy(
    checkpoint_path: &Path,
    env_config: &EnvConfig,
    scenario: MalfunctionScenario,
    seed: u64,
) -> Result<EpisodeReport, HarnessError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    evaluate_checkpoint(&checkpoint, env_config, scenario, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_scenario_constant_sigma_is_thirty() {
        let r = evaluate_baseline(&EnvConfig::default(), MalfunctionScenario::null(), RecoveryBand::default()).unwrap();
        assert_eq!(r.cumulative_reward, 30.0);
        assert_eq!(r.recovery_time, Some(0.0));
        assert_eq!(r.trace.len(), 1801);
    }

    #[test]
    fn baseline_is_deterministic_and_never_recovers_from_step() {
        let cfg = EnvConfig::default();
        let a = evaluate_baseline(&cfg, MalfunctionScenario::fixed_mal03(), RecoveryBand::default()).unwrap();
        let b = evaluate_baseline(&cfg, MalfunctionScenario::fixed_mal03(), RecoveryBand::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.recovery_time, None);
        assert!((a.cumulative_reward - a.rewards.iter().sum::<f64>()).abs() < 1e-9);
        assert_eq!(a.rewards.len(), 30);
    }

    #[test]
    fn short_schedule_holds_last_setpoint() {
        let cfg = EnvConfig::default();
        let r = evaluate_schedule(&cfg, MalfunctionScenario::fixed_mal03(), &[0.76, 0.77], RecoveryBand::default())
            .unwrap();
        assert_eq!(r.actions[0], 0.76);
        assert!(r.actions[1..].iter().all(|a| *a == 0.77));
    }
}

use std::path::Path;

use procrl_core::envgym::{EnvConfig, PlantEnv};
use procrl_core::ppo::{Checkpoint, NetworkConfig, PpoConfig, SeedStreams, Trainer, UpdateReport};
use procrl_core::scenario::{sample_scenario, MalfunctionScenario, ScenarioRanges};
use serde::{Deserialize, Serialize};

use crate::csvio::{save_rows, CurveRow, EpisodeRow};
use crate::evaluate::{evaluate_baseline, evaluate_greedy, EpisodeReport};
use crate::metrics::{moving_average, RecoveryBand};
use crate::{HarnessError, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedExperimentConfig {
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub updates: usize,
    pub master_seed: u64,
    pub scenario: MalfunctionScenario,
    pub band: RecoveryBand,
}

impl Default for FixedExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            updates: 400,
            master_seed: DEFAULT_SEED,
            scenario: MalfunctionScenario::fixed_mal03(),
            band: RecoveryBand::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedReport {
    pub seeds: SeedStreams,
    pub scenario: MalfunctionScenario,
    pub updates: usize,
    pub episodes: usize,
    pub baseline: EpisodeReport,
    pub trained: EpisodeReport,
    /// Trained minus baseline cumulative reward.
    pub improvement: f64,
    #[serde(skip)]
    pub learning_curve: Vec<CurveRow>,
}

#[derive(Debug, Clone)]
pub struct FixedOutcome {
    pub report: FixedReport,
    pub checkpoint: Checkpoint,
}

impl FixedOutcome {
    /// Writes `learning_curve.csv`, `report.json`, `checkpoint.json` and the
    /// two evaluation traces into `dir`.
    pub fn write_to(&mut self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        save_rows(&self.report.learning_curve, &dir.join("learning_curve.csv"))?;
        self.report.baseline.persist_trace(&dir.join("baseline_trace.csv"))?;
        self.report.trained.persist_trace(&dir.join("trained_trace.csv"))?;
        self.checkpoint.save(&dir.join("checkpoint.json"))?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)?)?;
        Ok(())
    }
}

fn curve_rows(report: &UpdateReport, first_episode: usize) -> impl Iterator<Item = CurveRow> + '_ {
    report.episode_rewards.iter().enumerate().map(move |(i, &r)| CurveRow {
        update: report.update,
        episode: first_episode + i,
        cumulative_reward: r,
        policy_loss: report.stats.policy_loss,
        value_loss: report.stats.value_loss,
    })
}

/// Trains on one fixed scenario, then compares the greedy policy with the
/// PID baseline on that scenario.
pub fn run_fixed_experiment(
    cfg: &FixedExperimentConfig,
    mut progress: impl FnMut(&UpdateReport),
) -> Result<FixedOutcome, HarnessError> {
    if cfg.updates == 0 {
        return Err(HarnessError::InvalidConfig("updates must be >= 1".into()));
    }
    cfg.scenario.validate()?;
    let mut trainer = Trainer::new(cfg.network.clone(), cfg.ppo.clone(), cfg.master_seed)?;
    let env_cfg = cfg.env.clone();
    let scenario = cfg.scenario;
    let factory = move |_seed: u64| PlantEnv::new(env_cfg.clone(), scenario);
    let mut curve = Vec::with_capacity(cfg.updates * cfg.ppo.episodes_per_update);
    for _ in 0..cfg.updates {
        let r = trainer.run_update(&factory)?;
        curve.extend(curve_rows(&r, curve.len()));
        progress(&r);
    }
    let bounds = (cfg.env.episode.sv_low, cfg.env.episode.sv_high);
    let policy = trainer.greedy_policy(bounds);
    let trained = evaluate_greedy(&cfg.env, &policy, cfg.scenario, cfg.master_seed, cfg.band)?;
    let baseline = evaluate_baseline(&cfg.env, cfg.scenario, cfg.band)?;
    Ok(FixedOutcome {
        checkpoint: trainer.checkpoint(bounds),
        report: FixedReport {
            seeds: SeedStreams::from_master(cfg.master_seed),
            scenario: cfg.scenario,
            updates: cfg.updates,
            episodes: curve.len(),
            improvement: trained.cumulative_reward - baseline.cumulative_reward,
            baseline,
            trained,
            learning_curve: curve,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariableExperimentConfig {
    pub env: EnvConfig,
    pub network: NetworkConfig,
    pub ppo: PpoConfig,
    pub episodes: usize,
    pub master_seed: u64,
    pub ranges: ScenarioRanges,
    /// Moving-average window.
    pub window: usize,
    /// `false` runs the same rollouts with the policy frozen at its
    /// initialization, as a control.
    pub train: bool,
}

impl Default for VariableExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            network: NetworkConfig::default(),
            ppo: PpoConfig::default(),
            episodes: 1000,
            master_seed: DEFAULT_SEED,
            ranges: ScenarioRanges::default(),
            window: 20,
            train: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub seeds: SeedStreams,
    pub trained: bool,
    pub window: usize,
    pub first_window: f64,
    pub last_window: f64,
    /// `last_window / first_window - 1`.
    pub relative_increase: f64,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRow>,
    #[serde(skip)]
    pub moving_average: Vec<f64>,
}

impl VariableReport {
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        save_rows(&self.episodes, &dir.join("episodes.csv"))?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Trains with a freshly sampled MAL03 scenario in every episode and tracks
/// the moving average of cumulative reward.
pub fn run_variable_experiment(
    cfg: &VariableExperimentConfig,
    mut progress: impl FnMut(&UpdateReport),
) -> Result<(VariableReport, Trainer), HarnessError> {
    if cfg.window == 0 || cfg.episodes < cfg.window {
        return Err(HarnessError::InvalidConfig(format!(
            "need at least window={} episodes, got {}",
            cfg.window, cfg.episodes
        )));
    }
    cfg.ranges.validate()?;
    let mut trainer = Trainer::new(cfg.network.clone(), cfg.ppo.clone(), cfg.master_seed)?;
    let env_cfg = cfg.env.clone();
    let ranges = cfg.ranges;
    let factory = move |seed: u64| PlantEnv::new(env_cfg.clone(), sample_scenario(seed, &ranges));
    let mut rows: Vec<EpisodeRow> = Vec::with_capacity(cfg.episodes);
    while rows.len() < cfg.episodes {
        let r = if cfg.train {
            trainer.run_update(&factory)?
        } else {
            trainer.run_frozen(&factory)?
        };
        for (&reward, &seed) in r.episode_rewards.iter().zip(&r.env_seeds) {
            if rows.len() == cfg.episodes {
                break;
            }
            let s = sample_scenario(seed, &cfg.ranges);
            rows.push(EpisodeRow {
                update: r.update,
                episode: rows.len(),
                env_seed: seed,
                magnitude: s.magnitude,
                t_complete: s.t_complete,
                t_procedure_start: s.t_procedure_start,
                cumulative_reward: reward,
                moving_average: None,
            });
        }
        progress(&r);
    }
    let rewards: Vec<f64> = rows.iter().map(|r| r.cumulative_reward).collect();
    let ma = moving_average(&rewards, cfg.window);
    for (row, m) in rows[cfg.window - 1..].iter_mut().zip(&ma) {
        row.moving_average = Some(*m);
    }
    let first = ma[0];
    let last = ma[ma.len() - 1];
    Ok((
        VariableReport {
            seeds: SeedStreams::from_master(cfg.master_seed),
            trained: cfg.train,
            window: cfg.window,
            first_window: first,
            last_window: last,
            relative_increase: last / first - 1.0,
            episodes: rows,
            moving_average: ma,
        },
        trainer,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_series_lengths_and_scenarios() {
        let cfg = VariableExperimentConfig {
            episodes: 44,
            train: false,
            ..Default::default()
        };
        let (report, _) = run_variable_experiment(&cfg, |_| {}).unwrap();
        assert_eq!(report.episodes.len(), 44);
        assert_eq!(report.moving_average.len(), 44 - 19);
        assert!(report.episodes[..19].iter().all(|r| r.moving_average.is_none()));
        for r in &report.episodes {
            assert!((0.9..=1.2).contains(&r.magnitude));
            assert!((0.0..=1800.0).contains(&r.t_complete));
            assert!((0.0..=3600.0).contains(&r.t_procedure_start));
        }
    }

    #[test]
    fn fixed_experiment_records_seeds_and_curve() {
        let cfg = FixedExperimentConfig {
            updates: 2,
            ..Default::default()
        };
        let out = run_fixed_experiment(&cfg, |_| {}).unwrap();
        assert_eq!(out.report.learning_curve.len(), 16);
        assert_eq!(out.report.seeds, SeedStreams::from_master(DEFAULT_SEED));
        assert_eq!(out.checkpoint.updates, 2);
        let json = serde_json::to_string(&out.report).unwrap();
        assert!(json.contains("\"first_rollout\""));
    }
}

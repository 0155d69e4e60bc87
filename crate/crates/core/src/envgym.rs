//! Episodic RL environment over the feed section: the agent picks the PC130
//! setpoint once per simulated minute for a 30-minute window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plantsim::{PlantConfig, PlantError, PlantState, SensorVector, Simulator};
use crate::scenario::{MalfunctionScenario, ScenarioError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("episode finished after {0} steps; call reset")]
    EpisodeDone(usize),
    #[error("environment not reset")]
    NotReset,
    #[error("non-finite action {0}")]
    NonFiniteAction(f64),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Scale factor per PV unit.
    pub a: f64,
    /// Normal-state value of the target sensor, MPa.
    pub sigma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { a: 50.0, sigma: 0.784 }
    }
}

/// `max(0, 1 - a·|s - sigma|)`.
pub fn reward(s_t: f64, cfg: &RewardConfig) -> f64 {
    (1.0 - cfg.a * (s_t - cfg.sigma).abs()).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub horizon_steps: usize,
    /// Seconds between actions.
    pub action_interval: f64,
    pub sv_low: f64,
    pub sv_high: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            horizon_steps: 30,
            action_interval: 60.0,
            sv_low: 0.70,
            sv_high: 0.88,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self, plant: &PlantConfig) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if (self.horizon_steps as f64 * self.action_interval - 1800.0).abs() > 1e-9 {
            return bad("horizon_steps * action_interval must be 1800 s".into());
        }
        if (self.action_interval - crate::plantsim::CONTROL_INTERVAL).abs() > 1e-12 {
            return bad("action_interval must match the 60 s control interval".into());
        }
        if !(self.sv_low < self.sv_high) {
            return bad("sv_low must be below sv_high".into());
        }
        if self.sv_low < plant.pc130.sv_min || self.sv_high > plant.pc130.sv_max {
            return bad(format!(
                "agent bounds [{}, {}] exceed PC130 setpoint bounds [{}, {}]",
                self.sv_low, self.sv_high, plant.pc130.sv_min, plant.pc130.sv_max
            ));
        }
        Ok(())
    }
}

/// Everything needed to build an environment; cheap to clone into workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnvConfig {
    pub plant: PlantConfig,
    pub reward: RewardConfig,
    pub episode: EpisodeSpec,
}

/// One row of the episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: f64,
    pub sensors: SensorVector,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: SensorVector,
    pub reward: f64,
    pub done: bool,
}

/// Minimal episodic interface consumed by the PPO rollout collector.
pub trait Environment {
    fn reset(&mut self) -> Result<Vec<f64>, EnvError>;
    fn step(&mut self, action: f64) -> Result<(Vec<f64>, f64, bool), EnvError>;
    fn action_bounds(&self) -> (f64, f64);
}

#[derive(Debug, Clone)]
pub struct PlantEnv {
    config: EnvConfig,
    scenario: MalfunctionScenario,
    /// Simulator time at which the scenario clock reads zero.
    scenario_origin: f64,
    initial: Simulator,
    sim: Simulator,
    steps: usize,
    ready: bool,
    clamped_actions: usize,
    records: Vec<StepRecord>,
    record_trace: bool,
    trace: Vec<PlantState>,
}

impl PlantEnv {
    pub fn new(config: EnvConfig, scenario: MalfunctionScenario) -> Result<Self, EnvError> {
        config.plant.validate()?;
        let sim = Simulator::at_steady_state(config.plant.clone())?;
        Self::from_simulator(config, sim, scenario, 0.0)
    }

    /// Starts episodes from an arbitrary simulator snapshot. The scenario
    /// clock is `sim.state.t - scenario_origin`.
    pub fn from_simulator(
        config: EnvConfig,
        sim: Simulator,
        scenario: MalfunctionScenario,
        scenario_origin: f64,
    ) -> Result<Self, EnvError> {
        if !(config.reward.a > 0.0) {
            return Err(EnvError::InvalidConfig("reward scale a must be > 0".into()));
        }
        config.episode.validate(&config.plant)?;
        scenario.validate()?;
        Ok(Self {
            config,
            scenario,
            scenario_origin,
            initial: sim.clone(),
            sim,
            steps: 0,
            ready: false,
            clamped_actions: 0,
            records: Vec::new(),
            record_trace: false,
            trace: Vec::new(),
        })
    }

    /// Keep a per-integration-step physics trace of the reward window.
    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scenario(&self) -> &MalfunctionScenario {
        &self.scenario
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn set_scenario(&mut self, scenario: MalfunctionScenario) -> Result<(), EnvError> {
        scenario.validate()?;
        self.scenario = scenario;
        self.ready = false;
        Ok(())
    }

    fn advance_one(&mut self) -> Result<(), EnvError> {
        let t = self.sim.state.t - self.scenario_origin;
        let nominal = self.config.plant.nominal_feed_pressure;
        let feed = self.scenario.feed_pressure_at(nominal, t);
        self.sim.advance(feed)?;
        Ok(())
    }

    /// Restores the initial snapshot, runs the PID loops alone through the
    /// procedure-start delay and returns the first observation.
    pub fn reset_episode(&mut self) -> Result<SensorVector, EnvError> {
        self.sim = self.initial.clone();
        self.steps = 0;
        self.clamped_actions = 0;
        self.records.clear();
        self.trace.clear();
        let dt = self.config.plant.integration_dt;
        let delay_steps = (self.scenario.t_procedure_start / dt).round() as usize;
        for _ in 0..delay_steps {
            self.advance_one()?;
        }
        if self.record_trace {
            self.trace.push(self.sim.state);
        }
        self.ready = true;
        Ok(self.sim.observe())
    }

    pub fn reset_with(&mut self, scenario: MalfunctionScenario) -> Result<SensorVector, EnvError> {
        self.set_scenario(scenario)?;
        self.reset_episode()
    }

    /// Applies one setpoint and simulates one action interval.
    pub fn step_sv(&mut self, action: f64) -> Result<StepOutcome, EnvError> {
        if !self.ready {
            return Err(EnvError::NotReset);
        }
        if self.steps >= self.config.episode.horizon_steps {
            return Err(EnvError::EpisodeDone(self.steps));
        }
        if !action.is_finite() {
            return Err(EnvError::NonFiniteAction(action));
        }
        let ep = self.config.episode;
        let sv = action.clamp(ep.sv_low, ep.sv_high);
        if sv != action {
            self.clamped_actions += 1;
        }
        self.sim.set_pc130_sv(sv)?;
        for _ in 0..self.config.plant.steps_per_interval() {
            self.advance_one()?;
            if self.record_trace {
                self.trace.push(self.sim.state);
            }
        }
        self.steps += 1;
        let observation = self.sim.observe();
        let r = reward(observation.vaporizer_pressure, &self.config.reward);
        self.records.push(StepRecord {
            step: self.steps,
            action: sv,
            sensors: observation,
            reward: r,
        });
        Ok(StepOutcome {
            observation,
            reward: r,
            done: self.steps == ep.horizon_steps,
        })
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Physics samples of the reward window, starting at the first action.
    pub fn trace(&self) -> &[PlantState] {
        &self.trace
    }

    /// Number of actions that had to be clamped into the SV bounds.
    pub fn clamped_actions(&self) -> usize {
        self.clamped_actions
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }
}

impl Environment for PlantEnv {
    fn reset(&mut self) -> Result<Vec<f64>, EnvError> {
        Ok(self.reset_episode()?.to_array().to_vec())
    }

    fn step(&mut self, action: f64) -> Result<(Vec<f64>, f64, bool), EnvError> {
        let out = self.step_sv(action)?;
        Ok((out.observation.to_array().to_vec(), out.reward, out.done))
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.config.episode.sv_low, self.config.episode.sv_high)
    }
}

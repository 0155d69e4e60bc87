//! Open-ended simulation of one operator session. Everything an operator
//! does is recorded as an event stamped with the session time, so
//! [`replay`] can rebuild the exact same trajectory from the log.

use procrl_core::envgym::{reward, EnvConfig, PlantEnv};
use procrl_core::planner::{Deviation, Dir};
use procrl_core::plantsim::{PlantState, SensorVector, Simulator};
use procrl_core::ppo::GreedyPolicy;
use procrl_core::scenario::MalfunctionScenario;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    /// Replaces any earlier malfunction; its onset is `t`.
    Malfunction { t: f64, scenario: MalfunctionScenario },
    /// PC130 setpoints, one per minute starting at `t`; the last is held.
    Procedure { t: f64, schedule: Vec<f64> },
    /// Drops the procedure and returns PC130 to the normal setpoint.
    Abort { t: f64 },
}

impl SessionEvent {
    pub fn t(&self) -> f64 {
        match self {
            Self::Malfunction { t, .. } | Self::Procedure { t, .. } | Self::Abort { t } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub config: EnvConfig,
    pub events: Vec<SessionEvent>,
    /// Session time when the log was taken.
    pub end_t: f64,
}

/// One streamed sample, emitted every simulated minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub sensors: SensorVector,
    pub reward_cum: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveProcedure {
    schedule: Vec<f64>,
    /// Integration steps since adoption.
    elapsed: usize,
}

/// Names of the knowledge-base nodes fed by each sensor.
pub const DEVIATION_NODES: [(&str, usize); 5] = [
    ("FI101", 0),
    ("vaporizer_pressure", 1),
    ("vaporizer_level", 2),
    ("PCV101", 3),
    ("LCV130", 4),
];

#[derive(Debug, Clone, PartialEq)]
pub struct LiveSim {
    config: EnvConfig,
    sim: Simulator,
    normal: SensorVector,
    malfunction: Option<(MalfunctionScenario, f64)>,
    procedure: Option<ActiveProcedure>,
    steps: usize,
    reward_cum: f64,
    events: Vec<SessionEvent>,
    record_trace: bool,
    trace: Vec<PlantState>,
}

impl LiveSim {
    /// A session resting at the calibrated normal state.
    pub fn new(config: EnvConfig) -> Result<Self, HarnessError> {
        config.plant.validate()?;
        config.episode.validate(&config.plant)?;
        if !(config.reward.a > 0.0) {
            return Err(HarnessError::InvalidConfig("reward scale a must be > 0".into()));
        }
        let sim = Simulator::at_steady_state(config.plant.clone())?;
        Ok(Self {
            normal: sim.observe(),
            trace: vec![sim.state],
            sim,
            config,
            malfunction: None,
            procedure: None,
            steps: 0,
            reward_cum: 0.0,
            events: Vec::new(),
            record_trace: true,
        })
    }

    /// Stop keeping the per-second trace (the event log is always kept).
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self.trace.clear();
        self
    }

    pub fn t(&self) -> f64 {
        self.sim.state.t
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn sensors(&self) -> SensorVector {
        self.sim.observe()
    }

    pub fn reward_cum(&self) -> f64 {
        self.reward_cum
    }

    pub fn trace(&self) -> &[PlantState] {
        &self.trace
    }

    pub fn malfunction(&self) -> Option<MalfunctionScenario> {
        self.malfunction.map(|(s, _)| s)
    }

    pub fn procedure_active(&self) -> bool {
        self.procedure.is_some()
    }

    pub fn frame(&self) -> Frame {
        Frame {
            t: self.t(),
            sensors: self.sensors(),
            reward_cum: self.reward_cum,
        }
    }

    pub fn event_log(&self) -> EventLog {
        EventLog {
            config: self.config.clone(),
            events: self.events.clone(),
            end_t: self.t(),
        }
    }

    pub fn inject(&mut self, scenario: MalfunctionScenario) -> Result<(), HarnessError> {
        scenario.validate()?;
        self.malfunction = Some((scenario, self.t()));
        self.events.push(SessionEvent::Malfunction { t: self.t(), scenario });
        Ok(())
    }

    /// Adopts a setpoint schedule. An empty schedule changes nothing.
    pub fn adopt(&mut self, schedule: Vec<f64>) -> Result<(), HarnessError> {
        let ep = self.config.episode;
        if let Some(bad) = schedule.iter().find(|sv| !(**sv >= ep.sv_low && **sv <= ep.sv_high)) {
            return Err(HarnessError::Procedure(format!(
                "setpoint {bad} outside [{}, {}]",
                ep.sv_low, ep.sv_high
            )));
        }
        if schedule.is_empty() {
            return Ok(());
        }
        self.sim.set_pc130_sv(schedule[0])?;
        self.events.push(SessionEvent::Procedure {
            t: self.t(),
            schedule: schedule.clone(),
        });
        self.procedure = Some(ActiveProcedure { schedule, elapsed: 0 });
        Ok(())
    }

    pub fn abort(&mut self) -> Result<(), HarnessError> {
        if self.procedure.take().is_some() {
            self.sim.set_pc130_sv(self.config.reward.sigma)?;
            self.events.push(SessionEvent::Abort { t: self.t() });
        }
        Ok(())
    }

    fn feed_pressure(&self) -> f64 {
        let nominal = self.config.plant.nominal_feed_pressure;
        match self.malfunction {
            Some((s, origin)) => s.feed_pressure_at(nominal, self.t() - origin),
            None => nominal,
        }
    }

    /// One integration step. Returns a frame when it completes a minute.
    pub fn advance_step(&mut self) -> Result<Option<Frame>, HarnessError> {
        let per_minute = self.config.plant.steps_per_interval();
        if let Some(p) = &mut self.procedure {
            if p.elapsed > 0 && p.elapsed % per_minute == 0 {
                let k = p.elapsed / per_minute;
                if let Some(&sv) = p.schedule.get(k) {
                    self.sim.set_pc130_sv(sv)?;
                }
            }
            p.elapsed += 1;
        }
        let feed = self.feed_pressure();
        self.sim.advance(feed)?;
        self.steps += 1;
        if self.record_trace {
            self.trace.push(self.sim.state);
        }
        if self.steps % per_minute == 0 {
            self.reward_cum += reward(self.sim.state.pressure, &self.config.reward);
            return Ok(Some(self.frame()));
        }
        Ok(None)
    }

    /// Runs to the next whole simulated minute and returns its frame.
    pub fn advance_minute(&mut self) -> Result<Frame, HarnessError> {
        loop {
            if let Some(f) = self.advance_step()? {
                return Ok(f);
            }
        }
    }

    /// Sensed variables that have left their normal values, named as in
    /// the knowledge base. Pressure uses the recovery band, the others a 2%
    /// relative band.
    pub fn deviations(&self, pressure_eps: f64) -> Vec<Deviation> {
        let now = self.sensors().to_array();
        let normal = self.normal.to_array();
        DEVIATION_NODES
            .iter()
            .filter_map(|&(name, i)| {
                let d = now[i] - normal[i];
                let limit = if i == 1 { pressure_eps } else { 0.02 * normal[i].abs() };
                (d.abs() >= limit).then(|| Deviation::new(name, if d > 0.0 { Dir::Inc } else { Dir::Dec }))
            })
            .collect()
    }

    /// An environment starting from a copy of the current plant, with the
    /// active malfunction continuing on its own clock. The live session is
    /// never touched.
    pub fn snapshot_env(&self) -> Result<PlantEnv, HarnessError> {
        let (scenario, origin) = match self.malfunction {
            Some((s, origin)) => (MalfunctionScenario { t_procedure_start: 0.0, ..s }, origin),
            None => (MalfunctionScenario::null(), 0.0),
        };
        Ok(PlantEnv::from_simulator(self.config.clone(), self.sim.clone(), scenario, origin)?)
    }

    /// Greedy 30-minute setpoint schedule from the current state.
    pub fn propose_schedule(&self, policy: &GreedyPolicy) -> Result<Vec<f64>, HarnessError> {
        let mut env = self.snapshot_env()?;
        Ok(policy.run(&mut env)?)
    }
}

/// Rebuilds a session from its event log.
pub fn replay(log: &EventLog) -> Result<LiveSim, HarnessError> {
    let mut live = LiveSim::new(log.config.clone())?;
    let mut pending = log.events.iter().peekable();
    loop {
        while let Some(e) = pending.next_if(|e| e.t() <= live.t()) {
            match e {
                SessionEvent::Malfunction { scenario, .. } => live.inject(*scenario)?,
                SessionEvent::Procedure { schedule, .. } => live.adopt(schedule.clone())?,
                SessionEvent::Abort { .. } => live.abort()?,
            }
        }
        if live.t() >= log.end_t {
            break;
        }
        live.advance_step()?;
    }
    Ok(live)
}

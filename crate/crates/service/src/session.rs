use procrl_core::envgym::EnvConfig;
use procrl_core::planner::{diagnose, explain, plan_tagged, Deviation, Explanation, Goal, InfluenceGraph, NodeTag, Plan, RootCause};
use procrl_core::ppo::GreedyPolicy;
use procrl_core::scenario::MalfunctionScenario;
use procrl_harness::{EventLog, Frame, LiveSim, RecoveryBand};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    Paused,
    /// Simulated seconds per wall second.
    Realtime { speed: f64 },
}

impl Default for ClockMode {
    fn default() -> Self {
        Self::Realtime { speed: 60.0 }
    }
}

impl ClockMode {
    pub fn validate(self) -> Result<Self, ServiceError> {
        match self {
            Self::Realtime { speed } if !(speed > 0.0 && speed.is_finite()) => {
                Err(ServiceError::BadRequest(format!("clock speed must be > 0, got {speed}")))
            }
            m => Ok(m),
        }
    }
}

/// Result of `request_plan`, also kept as the session's pending plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub t: f64,
    pub deviations: Vec<Deviation>,
    pub root_causes: Vec<RootCause>,
    pub plan: Option<Plan>,
    pub explanation: Explanation,
    /// Greedy setpoints for the next 30 minutes, when a policy is loaded.
    pub proposed_schedule: Option<Vec<f64>>,
}

/// Variable the planner works to restore.
pub const CONTROLLED_VARIABLE: &str = "vaporizer_pressure";

/// One session's state. All requests go through `&mut self`, so whoever
/// owns it serializes them.
#[derive(Debug, Clone)]
pub struct SessionCore {
    pub id: u64,
    live: LiveSim,
    clock: ClockMode,
    pending: Option<PlanResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub frame: Frame,
    pub clock: ClockMode,
    pub malfunction: Option<MalfunctionScenario>,
    pub procedure_active: bool,
    pub pending_plan: Option<PlanResponse>,
}

impl SessionCore {
    pub fn new(id: u64, config: EnvConfig, clock: ClockMode) -> Result<Self, ServiceError> {
        Ok(Self {
            id,
            live: LiveSim::new(config)?,
            clock: clock.validate()?,
            pending: None,
        })
    }

    pub fn live(&self) -> &LiveSim {
        &self.live
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    pub fn set_clock(&mut self, clock: ClockMode) -> Result<(), ServiceError> {
        self.clock = clock.validate()?;
        Ok(())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id,
            frame: self.live.frame(),
            clock: self.clock,
            malfunction: self.live.malfunction(),
            procedure_active: self.live.procedure_active(),
            pending_plan: self.pending.clone(),
        }
    }

    pub fn event_log(&self) -> EventLog {
        self.live.event_log()
    }

    pub fn inject(&mut self, scenario: MalfunctionScenario) -> Result<(), ServiceError> {
        scenario.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        self.live.inject(scenario)?;
        Ok(())
    }

    pub fn tick(&mut self) -> Result<Frame, ServiceError> {
        Ok(self.live.advance_minute()?)
    }

    /// Diagnoses the current deviations and plans on a snapshot. A
    /// steady plant gives an empty plan rather than an error.
    pub fn request_plan(
        &mut self,
        rules: &InfluenceGraph,
        policy: Option<&GreedyPolicy>,
    ) -> Result<PlanResponse, ServiceError> {
        let deviations: Vec<Deviation> = self
            .live
            .deviations(RecoveryBand::default().eps)
            .into_iter()
            .filter(|d| rules.tag(&d.variable) == Some(NodeTag::Sensed))
            .collect();
        let root_causes = diagnose(rules, &deviations)?;
        let plan = match deviations.iter().find(|d| d.variable == CONTROLLED_VARIABLE) {
            Some(d) => Some(plan_tagged(
                rules,
                &Goal {
                    variable: d.variable.clone(),
                    restore: d.direction.flip(),
                },
            )?),
            None => None,
        };
        let explanation = plan.as_ref().map(|p| explain(p, rules)).unwrap_or_default();
        let proposed_schedule = match (policy, &plan) {
            (Some(policy), Some(_)) => Some(self.live.propose_schedule(policy)?),
            _ => None,
        };
        let response = PlanResponse {
            t: self.live.t(),
            deviations,
            root_causes,
            plan,
            explanation,
            proposed_schedule,
        };
        self.pending = Some(response.clone());
        Ok(response)
    }

    /// Adopts a schedule (empty is a no-op). Rejecting a plan needs no call:
    /// PID control simply continues.
    pub fn apply_procedure(&mut self, schedule: Vec<f64>) -> Result<(), ServiceError> {
        let adopted = !schedule.is_empty();
        self.live.adopt(schedule)?;
        if adopted {
            self.pending = None;
        }
        Ok(())
    }

    pub fn abort_procedure(&mut self) -> Result<(), ServiceError> {
        self.live.abort()?;
        Ok(())
    }
}

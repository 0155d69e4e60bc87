//! Command implementations behind the `procrl` binary.

use procrl_core::plantsim::{derivatives, steady_state, PlantConfig, Simulator};
use procrl_core::planner::{
    diagnose, explain, parse_rules, plan_tagged, Deviation, Explanation, Goal, InfluenceGraph, Plan,
    PlannerError, RootCause, MAX_PATH_EDGES,
};
use procrl_core::scenario::{MalfunctionScenario, ProfileKind};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub pressure: f64,
    pub level: f64,
    pub x_pcv: f64,
    pub x_lcv: f64,
    pub pcv_bias: f64,
    pub lcv_bias: f64,
    pub dp_dt: f64,
    pub dl_dt: f64,
    /// Largest deviation from the steady state over an undisturbed 30 minutes.
    pub drift_pressure: f64,
    pub drift_level: f64,
    pub passed: bool,
}

pub const CALIBRATION_RATE_TOL: f64 = 1e-9;
pub const CALIBRATION_DRIFT_TOL: f64 = 1e-6;

/// Solves the normal state and checks that the closed loop holds it.
pub fn calibrate(plant: &PlantConfig) -> Result<Calibration, procrl_core::plantsim::PlantError> {
    plant.validate()?;
    let ss = steady_state(plant, plant.normal_pressure, plant.normal_level)?;
    let (dp, dl) = derivatives(&ss.state, plant);
    let mut sim = Simulator::at_steady_state(plant.clone())?;
    let (mut drift_p, mut drift_l): (f64, f64) = (0.0, 0.0);
    let steps = (1800.0 / plant.integration_dt).round() as usize;
    for _ in 0..steps {
        sim.advance(plant.nominal_feed_pressure)?;
        drift_p = drift_p.max((sim.state.pressure - ss.state.pressure).abs());
        drift_l = drift_l.max((sim.state.level - ss.state.level).abs());
    }
    Ok(Calibration {
        pressure: ss.state.pressure,
        level: ss.state.level,
        x_pcv: ss.state.x_pcv,
        x_lcv: ss.state.x_lcv,
        pcv_bias: ss.pcv_bias,
        lcv_bias: ss.lcv_bias,
        dp_dt: dp,
        dl_dt: dl,
        drift_pressure: drift_p,
        drift_level: drift_l,
        passed: dp.abs() < CALIBRATION_RATE_TOL
            && dl.abs() < CALIBRATION_RATE_TOL
            && drift_p < CALIBRATION_DRIFT_TOL
            && drift_l < CALIBRATION_DRIFT_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutput {
    pub deviations: Vec<Deviation>,
    pub root_causes: Vec<RootCause>,
    pub goal: Goal,
    pub plan: Plan,
    pub explanation: Explanation,
}

pub const DEFAULT_GOAL: &str = "vaporizer_pressure";

/// Direction in which the goal variable has to move. Taken from the
/// observed deviation when there is one, otherwise predicted from the top
/// root cause along its paths.
pub fn infer_goal(
    g: &InfluenceGraph,
    goal_variable: &str,
    deviations: &[Deviation],
    causes: &[RootCause],
) -> Result<Goal, PlannerError> {
    if let Some(d) = deviations.iter().find(|d| d.variable == goal_variable) {
        return Ok(Goal {
            variable: goal_variable.to_string(),
            restore: d.direction.flip(),
        });
    }
    let goal_id = g
        .id(goal_variable)
        .ok_or_else(|| PlannerError::UnknownVariable(goal_variable.to_string()))?;
    for cause in causes {
        let Some(c) = g.id(&cause.variable) else { continue };
        let paths = g.simple_paths(c, goal_id, MAX_PATH_EDGES);
        let Some(first) = paths.first() else { continue };
        let sign = g.path_sign(first);
        if paths.iter().all(|p| g.path_sign(p) == sign) {
            return Ok(Goal {
                variable: goal_variable.to_string(),
                restore: cause.direction.through(sign).flip(),
            });
        }
    }
    Err(PlannerError::NoPlan(format!(
        "{goal_variable}: no observed or predictable deviation; pass an explicit goal"
    )))
}

/// Diagnose, plan and explain against a rule file.
pub fn plan_command(rules: &str, deviations: &[Deviation], goal: Option<Goal>) -> Result<PlanOutput, PlannerError> {
    let g = parse_rules(rules)?;
    let root_causes = diagnose(&g, deviations)?;
    let goal = match goal {
        Some(goal) => goal,
        None => infer_goal(&g, DEFAULT_GOAL, deviations, &root_causes)?,
    };
    let plan = plan_tagged(&g, &goal)?;
    let explanation = explain(&plan, &g);
    Ok(PlanOutput {
        deviations: deviations.to_vec(),
        root_causes,
        goal,
        plan,
        explanation,
    })
}

/// `var:+` or `var:-` as a goal restore direction.
pub fn parse_goal(s: &str) -> Result<Goal, PlannerError> {
    let d: Deviation = s.parse()?;
    Ok(Goal {
        variable: d.variable,
        restore: d.direction,
    })
}

/// Scenario from command-line style parts; unset values follow the fixed
/// MAL03 step.
pub fn scenario_from_parts(
    kind: Option<ProfileKind>,
    magnitude: Option<f64>,
    t_complete: Option<f64>,
    t_proc_start: Option<f64>,
) -> Result<MalfunctionScenario, procrl_core::scenario::ScenarioError> {
    let base = MalfunctionScenario::fixed_mal03();
    let kind = kind.unwrap_or(if t_complete.is_some_and(|t| t > 0.0) {
        ProfileKind::Ramp
    } else {
        base.kind
    });
    let s = MalfunctionScenario {
        kind,
        magnitude: magnitude.unwrap_or(base.magnitude),
        t_complete: if kind == ProfileKind::Step { 0.0 } else { t_complete.unwrap_or(0.0) },
        t_procedure_start: t_proc_start.unwrap_or(base.t_procedure_start),
        ..base
    };
    s.validate()?;
    Ok(s)
}

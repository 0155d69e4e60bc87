//! Discrete-time PID loops for PC130 (vaporizer pressure -> PCV101) and
//! LC130 (vaporizer level -> LCV130).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("setpoint {sv} outside [{min}, {max}]")]
    SetpointOutOfRange { sv: f64, min: f64, max: f64 },
    #[error("invalid controller tuning: {0}")]
    InvalidTuning(String),
}

/// Action direction in the ISA sense.
///
/// A `Direct` loop raises its output when the PV rises; a `Reverse` loop
/// lowers it. Both PC130 and LC130 are reverse acting: a rising PV closes
/// the valve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Direct,
    Reverse,
}

impl Direction {
    fn error(self, sv: f64, pv: f64) -> f64 {
        match self {
            Direction::Direct => pv - sv,
            Direction::Reverse => sv - pv,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Direct => 1.0,
            Direction::Reverse => -1.0,
        }
    }
}

/// Gains and bounds of one loop, as stored in the plant configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopTuning {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub direction: Direction,
    pub sv_min: f64,
    pub sv_max: f64,
    pub mv_min: f64,
    pub mv_max: f64,
}

impl LoopTuning {
    pub fn validate(&self) -> Result<(), ControlError> {
        let finite = [
            self.kp, self.ki, self.kd, self.sv_min, self.sv_max, self.mv_min, self.mv_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(ControlError::InvalidTuning("non-finite value".into()));
        }
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(ControlError::InvalidTuning("negative gain".into()));
        }
        if self.mv_min >= self.mv_max {
            return Err(ControlError::InvalidTuning("mv_min must be below mv_max".into()));
        }
        if self.sv_min >= self.sv_max {
            return Err(ControlError::InvalidTuning("sv_min must be below sv_max".into()));
        }
        Ok(())
    }
}

/// Positional PID with derivative on PV and clamping anti-windup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidController {
    pub tuning: LoopTuning,
    sv: f64,
    /// Accumulated error, in PV units times seconds.
    integral: f64,
    last_pv: f64,
    /// Output at zero error and zero integral.
    bias: f64,
    mv: f64,
}

impl PidController {
    /// Creates a loop resting at `sv` with output `bias` and an empty integrator.
    pub fn new(tuning: LoopTuning, sv: f64, bias: f64) -> Self {
        let mv = bias.clamp(tuning.mv_min, tuning.mv_max);
        Self {
            tuning,
            sv,
            integral: 0.0,
            last_pv: sv,
            bias,
            mv,
        }
    }

    pub fn sv(&self) -> f64 {
        self.sv
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Last output produced by [`PidController::step`].
    pub fn mv(&self) -> f64 {
        self.mv
    }

    /// Changes the setpoint. The integrator and derivative memory are kept.
    pub fn set_sv(&mut self, sv: f64) -> Result<(), ControlError> {
        let t = &self.tuning;
        if !(sv >= t.sv_min && sv <= t.sv_max) {
            return Err(ControlError::SetpointOutOfRange {
                sv,
                min: t.sv_min,
                max: t.sv_max,
            });
        }
        self.sv = sv;
        Ok(())
    }

    /// Advances the loop by `dt` seconds with measurement `pv` and returns the output.
    ///
    /// The integrator only accumulates when doing so does not push an already
    /// saturated output further into saturation.
    pub fn step(&mut self, pv: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0, "pid step requires dt > 0");
        let t = self.tuning;
        let error = t.direction.error(self.sv, pv);
        let derivative = -t.direction.sign() * (pv - self.last_pv) / dt;
        self.last_pv = pv;

        let output = |integral: f64| self.bias + t.kp * error + t.ki * integral - t.kd * derivative;

        let candidate = self.integral + error * dt;
        let raw = output(candidate);
        let winding_up = raw > t.mv_max && error > 0.0;
        let winding_down = raw < t.mv_min && error < 0.0;
        if !(winding_up || winding_down) {
            self.integral = candidate;
        }
        self.mv = output(self.integral).clamp(t.mv_min, t.mv_max);
        self.mv
    }
}

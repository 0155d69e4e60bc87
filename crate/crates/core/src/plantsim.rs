//! Lumped-parameter model of the raw-material feed section.
//!
//! Fresh ethylene enters vaporizer V130 through PCV101, liquid feed enters
//! through LCV130, liquid vaporizes in proportion to the level above a
//! minimum, and gas leaves through a fixed outlet restriction. Pressure
//! follows an isothermal molar balance and level a volumetric balance; all
//! flows use the square-root valve equation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, Direction, LoopTuning, PidController};

/// Interval between agent actions, seconds.
pub const CONTROL_INTERVAL: f64 = 60.0;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    InvalidConfig(String),
    #[error("no steady state: {0}")]
    NoSteadyState(String),
    #[error("non-finite plant state at t={t}s: pressure={pressure}, level={level}")]
    NonFinite { t: f64, pressure: f64, level: f64 },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("config parse error: {0}")]
    Parse(String),
}

/// Calibration constants of the feed section plus the two loop tunings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// MPa per kmol of gas held in the vaporizer.
    pub vaporizer_gas_capacity: f64,
    /// m².
    pub vaporizer_tank_area: f64,
    /// kmol/s per √MPa.
    pub cv_pcv: f64,
    /// m³/s per √MPa.
    pub cv_lcv: f64,
    /// kmol/s per √MPa.
    pub cv_out: f64,
    pub nominal_feed_pressure: f64,
    pub liquid_supply_pressure: f64,
    pub downstream_pressure: f64,
    /// kmol/s per m of level above `vaporization_min_level`.
    pub vaporization_rate: f64,
    /// m.
    pub vaporization_min_level: f64,
    /// m³/kmol, converts vaporized moles to liquid volume.
    pub liquid_molar_volume: f64,
    /// s.
    pub integration_dt: f64,
    /// Normal vaporizer pressure, MPa.
    pub normal_pressure: f64,
    /// Normal vaporizer level, m.
    pub normal_level: f64,
    pub pc130: LoopTuning,
    pub lc130: LoopTuning,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            vaporizer_gas_capacity: 0.05,
            vaporizer_tank_area: 2.0,
            cv_pcv: 0.5,
            cv_lcv: 0.005,
            cv_out: 0.345,
            nominal_feed_pressure: 0.90,
            liquid_supply_pressure: 1.0,
            downstream_pressure: 0.70,
            vaporization_rate: 0.025,
            vaporization_min_level: 0.2,
            liquid_molar_volume: 0.057,
            integration_dt: 1.0,
            normal_pressure: 0.784,
            normal_level: 1.0,
            pc130: LoopTuning {
                kp: 6.0,
                ki: 0.003,
                kd: 0.0,
                direction: Direction::Reverse,
                sv_min: 0.70,
                sv_max: 0.88,
                mv_min: 0.0,
                mv_max: 1.0,
            },
            lc130: LoopTuning {
                kp: 2.0,
                ki: 0.002,
                kd: 0.0,
                direction: Direction::Reverse,
                sv_min: 0.3,
                sv_max: 1.8,
                mv_min: 0.0,
                mv_max: 1.0,
            },
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |msg: &str| Err(PlantError::InvalidConfig(msg.to_string()));
        let positive = [
            ("vaporizer_gas_capacity", self.vaporizer_gas_capacity),
            ("vaporizer_tank_area", self.vaporizer_tank_area),
            ("cv_pcv", self.cv_pcv),
            ("cv_lcv", self.cv_lcv),
            ("cv_out", self.cv_out),
            ("nominal_feed_pressure", self.nominal_feed_pressure),
            ("liquid_supply_pressure", self.liquid_supply_pressure),
            ("downstream_pressure", self.downstream_pressure),
            ("vaporization_rate", self.vaporization_rate),
            ("liquid_molar_volume", self.liquid_molar_volume),
            ("integration_dt", self.integration_dt),
            ("normal_pressure", self.normal_pressure),
            ("normal_level", self.normal_level),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.vaporization_min_level.is_finite() && self.vaporization_min_level >= 0.0) {
            return bad("vaporization_min_level must be >= 0");
        }
        if !(self.nominal_feed_pressure > self.normal_pressure
            && self.normal_pressure > self.downstream_pressure)
        {
            return bad("need nominal_feed_pressure > normal_pressure > downstream_pressure");
        }
        if self.liquid_supply_pressure <= self.normal_pressure {
            return bad("liquid_supply_pressure must exceed normal_pressure");
        }
        let ratio = CONTROL_INTERVAL / self.integration_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("integration_dt must divide the 60 s control interval");
        }
        self.pc130.validate()?;
        self.lc130.validate()?;
        Ok(())
    }

    /// Integration steps per control interval.
    pub fn steps_per_interval(&self) -> usize {
        (CONTROL_INTERVAL / self.integration_dt).round() as usize
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PlantError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PlantError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plant config is always serializable")
    }

    pub fn from_json_str(text: &str) -> Result<Self, PlantError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PlantError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a `.json` or `.toml` file, chosen by extension (TOML otherwise).
    pub fn load(path: &std::path::Path) -> Result<Self, PlantError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PlantError::Parse(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn vaporization(&self, level: f64) -> f64 {
        self.vaporization_rate * (level - self.vaporization_min_level).max(0.0)
    }

    pub fn vaporization_volume(&self, level: f64) -> f64 {
        self.vaporization(level) * self.liquid_molar_volume
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub pressure: f64,
    pub level: f64,
    pub x_pcv: f64,
    pub x_lcv: f64,
    pub feed_pressure: f64,
    pub fi101_flow: f64,
}

impl PlantState {
    pub fn feed_flow(&self, config: &PlantConfig) -> f64 {
        valve_flow(config.cv_pcv, self.x_pcv, self.feed_pressure, self.pressure)
    }

    pub fn outlet_flow(&self, config: &PlantConfig) -> f64 {
        valve_flow(config.cv_out, 1.0, self.pressure, config.downstream_pressure)
    }

    fn check_finite(&self) -> Result<(), PlantError> {
        if self.pressure.is_finite() && self.level.is_finite() && self.fi101_flow.is_finite() {
            Ok(())
        } else {
            Err(PlantError::NonFinite {
                t: self.t,
                pressure: self.pressure,
                level: self.level,
            })
        }
    }
}

/// The seven readings the agent observes, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorVector {
    pub fi101_flow: f64,
    pub vaporizer_pressure: f64,
    pub vaporizer_level: f64,
    pub x_pcv: f64,
    pub x_lcv: f64,
    pub pc130_sv: f64,
    pub outlet_flow: f64,
}

impl SensorVector {
    pub const LEN: usize = 7;
    pub const NAMES: [&'static str; 7] = [
        "fi101_flow",
        "vaporizer_pressure",
        "vaporizer_level",
        "x_pcv",
        "x_lcv",
        "pc130_sv",
        "outlet_flow",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.fi101_flow,
            self.vaporizer_pressure,
            self.vaporizer_level,
            self.x_pcv,
            self.x_lcv,
            self.pc130_sv,
            self.outlet_flow,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            fi101_flow: a[0],
            vaporizer_pressure: a[1],
            vaporizer_level: a[2],
            x_pcv: a[3],
            x_lcv: a[4],
            pc130_sv: a[5],
            outlet_flow: a[6],
        }
    }
}

/// Square-root valve equation; zero for reverse or zero differential.
pub fn valve_flow(cv: f64, opening: f64, p_up: f64, p_down: f64) -> f64 {
    cv * opening * (p_up - p_down).max(0.0).sqrt()
}

/// Rates of change of (pressure, level) with openings and feed pressure held.
pub fn derivatives(state: &PlantState, config: &PlantConfig) -> (f64, f64) {
    rates(config, state, state.pressure, state.level)
}

fn rates(config: &PlantConfig, state: &PlantState, pressure: f64, level: f64) -> (f64, f64) {
    let feed = valve_flow(config.cv_pcv, state.x_pcv, state.feed_pressure, pressure);
    let outlet = valve_flow(config.cv_out, 1.0, pressure, config.downstream_pressure);
    let liquid_in = valve_flow(config.cv_lcv, state.x_lcv, config.liquid_supply_pressure, pressure);
    let dp = config.vaporizer_gas_capacity * (feed + config.vaporization(level) - outlet);
    let dl = (liquid_in - config.vaporization_volume(level)) / config.vaporizer_tank_area;
    (dp, dl)
}

/// Advances pressure and level by one classical RK4 step with the valve
/// openings and feed pressure held constant. Controllers are not touched.
pub fn step_physics(
    config: &PlantConfig,
    state: &PlantState,
    feed_pressure: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let mut s = *state;
    s.feed_pressure = feed_pressure;
    if dt > 0.0 {
        let (p, l) = (s.pressure, s.level);
        let (k1p, k1l) = rates(config, &s, p, l);
        let (k2p, k2l) = rates(config, &s, p + 0.5 * dt * k1p, l + 0.5 * dt * k1l);
        let (k3p, k3l) = rates(config, &s, p + 0.5 * dt * k2p, l + 0.5 * dt * k2l);
        let (k4p, k4l) = rates(config, &s, p + dt * k3p, l + dt * k3l);
        s.pressure = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        s.level = l + dt / 6.0 * (k1l + 2.0 * k2l + 2.0 * k3l + k4l);
        s.t += dt;
    }
    s.fi101_flow = s.feed_flow(config);
    s.check_finite()?;
    Ok(s)
}

/// The two plant loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controllers {
    pub pc130: PidController,
    pub lc130: PidController,
}

impl Controllers {
    /// Loops resting at the steady state with setpoints at the normal values.
    pub fn at_steady(config: &PlantConfig, steady: &SteadyState) -> Self {
        Self {
            pc130: PidController::new(config.pc130, steady.state.pressure, steady.pcv_bias),
            lc130: PidController::new(config.lc130, steady.state.level, steady.lcv_bias),
        }
    }
}

/// Runs both PID loops on the current measurements, moves the valves and
/// integrates the physics over `dt`.
pub fn step(
    config: &PlantConfig,
    state: &PlantState,
    controllers: &mut Controllers,
    feed_pressure: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if dt <= 0.0 {
        return Ok(*state);
    }
    let mut s = *state;
    s.x_pcv = controllers.pc130.step(s.pressure, dt);
    s.x_lcv = controllers.lc130.step(s.level, dt);
    step_physics(config, &s, feed_pressure, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub state: PlantState,
    pub pcv_bias: f64,
    pub lcv_bias: f64,
}

/// Solves the balances for the valve openings that hold the given pressure
/// and level at the nominal feed pressure.
pub fn steady_state(
    config: &PlantConfig,
    target_pressure: f64,
    target_level: f64,
) -> Result<SteadyState, PlantError> {
    let no = |msg: String| Err(PlantError::NoSteadyState(msg));
    if target_pressure <= config.downstream_pressure {
        return no(format!(
            "pressure {target_pressure} does not exceed downstream pressure {}",
            config.downstream_pressure
        ));
    }
    if target_pressure >= config.nominal_feed_pressure {
        return no("pressure at or above the feed header".into());
    }
    if target_pressure >= config.liquid_supply_pressure {
        return no("pressure at or above the liquid supply".into());
    }
    let outlet = valve_flow(config.cv_out, 1.0, target_pressure, config.downstream_pressure);
    let vapor = config.vaporization(target_level);
    let feed = outlet - vapor;
    let dp_feed = (config.nominal_feed_pressure - target_pressure).sqrt();
    let x_pcv = feed / (config.cv_pcv * dp_feed);
    let liquid_in = config.vaporization_volume(target_level);
    let dp_liquid = (config.liquid_supply_pressure - target_pressure).sqrt();
    let x_lcv = liquid_in / (config.cv_lcv * dp_liquid);
    for (name, x) in [("PCV101", x_pcv), ("LCV130", x_lcv)] {
        if !(x > 0.0 && x < 1.0) {
            return no(format!("{name} opening {x} outside (0, 1)"));
        }
    }
    let mut state = PlantState {
        t: 0.0,
        pressure: target_pressure,
        level: target_level,
        x_pcv,
        x_lcv,
        feed_pressure: config.nominal_feed_pressure,
        fi101_flow: 0.0,
    };
    state.fi101_flow = state.feed_flow(config);
    Ok(SteadyState {
        state,
        pcv_bias: x_pcv,
        lcv_bias: x_lcv,
    })
}

pub fn observe(config: &PlantConfig, state: &PlantState, pc130: &PidController) -> SensorVector {
    SensorVector {
        fi101_flow: state.fi101_flow,
        vaporizer_pressure: state.pressure,
        vaporizer_level: state.level,
        x_pcv: state.x_pcv,
        x_lcv: state.x_lcv,
        pc130_sv: pc130.sv(),
        outlet_flow: state.outlet_flow(config),
    }
}

/// Plant plus its loops, advanced one integration step at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub config: PlantConfig,
    pub state: PlantState,
    pub controllers: Controllers,
}

impl Simulator {
    /// A simulator resting at the calibrated normal state.
    pub fn at_steady_state(config: PlantConfig) -> Result<Self, PlantError> {
        config.validate()?;
        let steady = steady_state(&config, config.normal_pressure, config.normal_level)?;
        Ok(Self {
            controllers: Controllers::at_steady(&config, &steady),
            state: steady.state,
            config,
        })
    }

    pub fn advance(&mut self, feed_pressure: f64) -> Result<(), PlantError> {
        self.state = step(
            &self.config,
            &self.state,
            &mut self.controllers,
            feed_pressure,
            self.config.integration_dt,
        )?;
        Ok(())
    }

    pub fn observe(&self) -> SensorVector {
        observe(&self.config, &self.state, &self.controllers.pc130)
    }

    pub fn set_pc130_sv(&mut self, sv: f64) -> Result<(), PlantError> {
        self.controllers.pc130.set_sv(sv)?;
        Ok(())
    }
}

/// Column order of the physics trace CSV.
pub const TRACE_HEADER: [&str; 7] = [
    "t",
    "pressure",
    "level",
    "x_pcv",
    "x_lcv",
    "feed_pressure",
    "fi101_flow",
];

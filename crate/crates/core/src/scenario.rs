//! MAL03 "Change C2H4 Feed Pressure": step or ramp multipliers on the
//! fresh-ethylene header pressure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{field} = {value} outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Step,
    Ramp,
}

impl std::str::FromStr for ProfileKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(Self::Step),
            "ramp" => Ok(Self::Ramp),
            other => Err(ScenarioError::Parse(format!("unknown profile kind {other:?}"))),
        }
    }
}

/// Uniform sampling ranges for randomized episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRanges {
    pub magnitude: (f64, f64),
    pub t_complete: (f64, f64),
    pub t_procedure_start: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            magnitude: (0.90, 1.20),
            t_complete: (0.0, 1800.0),
            t_procedure_start: (0.0, 3600.0),
        }
    }
}

const MAGNITUDE_RANGE: (f64, f64) = (0.90, 1.20);
const T_COMPLETE_RANGE: (f64, f64) = (0.0, 1800.0);
const T_PROCEDURE_RANGE: (f64, f64) = (0.0, 3600.0);

impl ScenarioRanges {
    /// Every sampling range must be ordered and inside the scenario limits.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let checks = [
            ("magnitude", self.magnitude, MAGNITUDE_RANGE),
            ("t_complete", self.t_complete, T_COMPLETE_RANGE),
            ("t_procedure_start", self.t_procedure_start, T_PROCEDURE_RANGE),
        ];
        for (field, (lo, hi), (min, max)) in checks {
            for value in [lo, hi] {
                if !(value >= min && value <= max) {
                    return Err(ScenarioError::OutOfRange { field, value, min, max });
                }
            }
            if lo > hi {
                return Err(ScenarioError::OutOfRange {
                    field,
                    value: lo,
                    min,
                    max: hi,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MalfunctionScenario {
    pub kind: ProfileKind,
    /// Multiplier on the nominal feed pressure once the malfunction completes.
    pub magnitude: f64,
    /// Ramp duration in seconds; ignored for steps.
    pub t_complete: f64,
    /// Delay from onset to the first agent action, seconds.
    pub t_procedure_start: f64,
    /// Malfunction onset, seconds.
    #[serde(default)]
    pub onset: f64,
}

impl MalfunctionScenario {
    /// No malfunction: the feed pressure stays nominal.
    pub fn null() -> Self {
        Self::step(1.0, 0.0)
    }

    pub fn step(magnitude: f64, t_procedure_start: f64) -> Self {
        Self {
            kind: ProfileKind::Step,
            magnitude,
            t_complete: 0.0,
            t_procedure_start,
            onset: 0.0,
        }
    }

    pub fn ramp(magnitude: f64, t_complete: f64, t_procedure_start: f64) -> Self {
        Self {
            kind: ProfileKind::Ramp,
            magnitude,
            t_complete,
            t_procedure_start,
            onset: 0.0,
        }
    }

    /// The fixed step-to-120% case.
    pub fn fixed_mal03() -> Self {
        Self::step(1.20, 0.0)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let checks = [
            ("magnitude", self.magnitude, MAGNITUDE_RANGE),
            ("t_complete", self.t_complete, T_COMPLETE_RANGE),
            ("t_procedure_start", self.t_procedure_start, T_PROCEDURE_RANGE),
        ];
        for (field, value, (min, max)) in checks {
            if !(value >= min && value <= max) {
                return Err(ScenarioError::OutOfRange {
                    field,
                    value,
                    min,
                    max,
                });
            }
        }
        if !self.onset.is_finite() {
            return Err(ScenarioError::Parse("onset must be finite".into()));
        }
        Ok(())
    }

    /// Feed header pressure at time `t` (seconds since the malfunction clock origin).
    pub fn feed_pressure_at(&self, nominal: f64, t: f64) -> f64 {
        if t < self.onset {
            return nominal;
        }
        let elapsed = t - self.onset;
        let fraction = match self.kind {
            ProfileKind::Step => 1.0,
            ProfileKind::Ramp if self.t_complete <= 0.0 => 1.0,
            ProfileKind::Ramp => (elapsed / self.t_complete).min(1.0),
        };
        nominal * (1.0 + (self.magnitude - 1.0) * fraction)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario is always serializable")
    }

    /// Loads a `.json` or `.toml` scenario file, chosen by extension.
    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Parse(format!("{}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let s: Self =
                serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
            s.validate()?;
            Ok(s)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

/// Draws a ramp scenario with every parameter uniform over `ranges`.
pub fn sample_scenario(seed: u64, ranges: &ScenarioRanges) -> MalfunctionScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scenario_with(&mut rng, ranges)
}

pub fn sample_scenario_with<R: Rng + ?Sized>(rng: &mut R, ranges: &ScenarioRanges) -> MalfunctionScenario {
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let magnitude = draw(ranges.magnitude);
    let t_complete = draw(ranges.t_complete);
    let t_procedure_start = draw(ranges.t_procedure_start);
    MalfunctionScenario::ramp(magnitude, t_complete, t_procedure_start)
}

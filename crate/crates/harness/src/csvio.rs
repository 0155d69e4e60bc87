//! CSV outputs: training curves, per-episode logs of the randomized
//! experiment and physics traces.

use std::io::{Read, Write};
use std::path::Path;

use procrl_core::plantsim::{PlantState, TRACE_HEADER};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::HarnessError;

/// One training episode in the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub episode: usize,
    pub cumulative_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// One episode of the randomized experiment with the scenario it ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub update: usize,
    pub episode: usize,
    pub env_seed: u64,
    pub magnitude: f64,
    pub t_complete: f64,
    pub t_procedure_start: f64,
    pub cumulative_reward: f64,
    /// 20-episode moving average ending at this episode, once available.
    pub moving_average: Option<f64>,
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn save_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<(), HarnessError> {
    write_rows(rows, std::fs::File::create(path)?)
}

pub fn load_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    read_rows(std::fs::File::open(path)?)
}

/// Trace CSV with the fixed column order of [`TRACE_HEADER`].
pub fn write_trace<W: Write>(trace: &[PlantState], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for s in trace {
        w.serialize((s.t, s.pressure, s.level, s.x_pcv, s.x_lcv, s.feed_pressure, s.fi101_flow))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<PlantState>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_HEADER {
        return Err(HarnessError::InvalidConfig(format!("unexpected trace header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (t, pressure, level, x_pcv, x_lcv, feed_pressure, fi101_flow): (f64, f64, f64, f64, f64, f64, f64) = row?;
        out.push(PlantState {
            t,
            pressure,
            level,
            x_pcv,
            x_lcv,
            feed_pressure,
            fi101_flow,
        });
    }
    Ok(out)
}

pub fn save_trace(trace: &[PlantState], path: &Path) -> Result<(), HarnessError> {
    write_trace(trace, std::fs::File::create(path)?)
}

pub fn load_trace(path: &Path) -> Result<Vec<PlantState>, HarnessError> {
    read_trace(std::fs::File::open(path)?)
}

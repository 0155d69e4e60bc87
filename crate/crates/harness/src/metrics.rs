use procrl_core::plantsim::PlantState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBand {
    /// Half-width of the band around sigma, MPa.
    pub eps: f64,
    /// How long the pressure must stay inside, s.
    pub hold: f64,
}

impl Default for RecoveryBand {
    fn default() -> Self {
        Self { eps: 0.002, hold: 120.0 }
    }
}

/// First time, relative to the start of the trace, from which the pressure
/// stays strictly inside `sigma ± eps` for `hold` seconds. The hold window
/// has to fit inside the trace.
pub fn recovery_time(trace: &[PlantState], sigma: f64, band: RecoveryBand) -> Option<f64> {
    let t0 = trace.first()?.t;
    let t_end = trace.last()?.t;
    let inside: Vec<bool> = trace.iter().map(|s| (s.pressure - sigma).abs() < band.eps).collect();
    // Index of the first sample after i that leaves the band.
    let mut next_out = vec![trace.len(); trace.len() + 1];
    for i in (0..trace.len()).rev() {
        next_out[i] = if inside[i] { next_out[i + 1] } else { i };
    }
    for (i, s) in trace.iter().enumerate() {
        if s.t + band.hold > t_end + 1e-9 {
            break;
        }
        if !inside[i] {
            continue;
        }
        let out = next_out[i];
        if out == trace.len() || trace[out].t > s.t + band.hold + 1e-9 {
            return Some(s.t - t0);
        }
    }
    None
}

/// Trailing means over full windows; `values.len() - window + 1` entries.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(pressures: impl Fn(f64) -> f64, seconds: usize) -> Vec<PlantState> {
        (0..=seconds)
            .map(|i| PlantState {
                t: 500.0 + i as f64,
                pressure: pressures(i as f64),
                level: 1.0,
                x_pcv: 0.5,
                x_lcv: 0.5,
                feed_pressure: 0.9,
                fi101_flow: 0.1,
            })
            .collect()
    }

    #[test]
    fn steady_trace_recovers_at_zero() {
        assert_eq!(recovery_time(&trace(|_| 0.784, 1800), 0.784, RecoveryBand::default()), Some(0.0));
    }

    #[test]
    fn never_in_band_is_none() {
        assert_eq!(recovery_time(&trace(|_| 0.80, 1800), 0.784, RecoveryBand::default()), None);
    }

    #[test]
    fn entering_at_300_and_staying() {
        let tr = trace(|t| if t < 300.0 { 0.79 } else { 0.7845 }, 1800);
        assert_eq!(recovery_time(&tr, 0.784, RecoveryBand::default()), Some(300.0));
    }

    #[test]
    fn short_visits_do_not_count() {
        // In the band for 60 s at t=100, then again from t=900 on.
        let tr = trace(|t| if (100.0..160.0).contains(&t) || t >= 900.0 { 0.784 } else { 0.79 }, 1800);
        assert_eq!(recovery_time(&tr, 0.784, RecoveryBand::default()), Some(900.0));
    }

    #[test]
    fn hold_must_fit_in_trace() {
        let tr = trace(|t| if t >= 1750.0 { 0.784 } else { 0.79 }, 1800);
        assert_eq!(recovery_time(&tr, 0.784, RecoveryBand::default()), None);
    }

    #[test]
    fn moving_average_length() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let ma = moving_average(&v, 20);
        assert_eq!(ma.len(), 81);
        assert_eq!(ma[0], 9.5);
        assert!(moving_average(&v[..5], 20).is_empty());
    }
}

//! Gaussian policy with tanh squashing onto the setpoint bounds, value
//! network and running observation normalization.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::PpoError;

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Network shapes and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Gain of the final policy layer; small so the initial mean sits near
    /// the midpoint of the action bounds.
    pub policy_head_gain: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            obs_dim: 7,
            hidden: vec![64, 64],
            init_log_std: -0.5,
            policy_head_gain: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
    /// State-independent log standard deviation of the pre-squash Gaussian.
    pub log_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: f64,
    pub std: f64,
    pub value: f64,
}

impl PolicyParams {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut sizes = vec![cfg.obs_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let hidden_gain = std::f64::consts::SQRT_2;
        Self {
            actor: Mlp::new(&sizes, hidden_gain, cfg.policy_head_gain, rng),
            critic: Mlp::new(&sizes, hidden_gain, 1.0, rng),
            log_std: cfg.init_log_std,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput, PpoError> {
        let mean = self.actor.forward(obs)[0];
        let value = self.critic.forward(obs)[0];
        let std = self.log_std.exp();
        if !(mean.is_finite() && value.is_finite() && std.is_finite() && std > 0.0) {
            return Err(PpoError::NonFinite(format!(
                "policy output mean={mean} std={std} value={value}"
            )));
        }
        Ok(PolicyOutput { mean, std, value })
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count() + 1
    }

    /// Actor parameters, critic parameters, then `log_std`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.actor.flat();
        v.extend(self.critic.flat());
        v.push(self.log_std);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let na = self.actor.param_count();
        let nc = self.critic.param_count();
        assert_eq!(v.len(), na + nc + 1);
        self.actor.set_flat(&v[..na]);
        self.critic.set_flat(&v[na..na + nc]);
        self.log_std = v[na + nc];
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.log_std.is_finite()
    }
}

/// Log-density of `u` under `Normal(mean, exp(log_std))`.
pub fn gaussian_log_prob(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) / log_std.exp();
    -0.5 * z * z - log_std - LOG_SQRT_2PI
}

/// Differential entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 + LOG_SQRT_2PI + log_std
}

/// Maps an unbounded sample onto `[low, high]`.
pub fn squash(u: f64, low: f64, high: f64) -> f64 {
    low + 0.5 * (u.tanh() + 1.0) * (high - low)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledAction {
    /// Pre-squash Gaussian sample.
    pub raw: f64,
    /// Setpoint sent to the environment.
    pub action: f64,
    pub log_prob: f64,
}

/// Draws `u ~ Normal(mean, std)` and squashes it. The log-probability is
/// that of `u`; the tanh Jacobian cancels in probability ratios.
pub fn sample_action<R: Rng + ?Sized>(mean: f64, std: f64, bounds: (f64, f64), rng: &mut R) -> SampledAction {
    let eps: f64 = StandardNormal.sample(rng);
    let raw = mean + std * eps;
    SampledAction {
        raw,
        action: squash(raw, bounds.0, bounds.1),
        log_prob: gaussian_log_prob(raw, mean, std.ln()),
    }
}

/// Running per-component mean and variance (Welford), used to standardize
/// observations before they reach the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl ObsNormalizer {
    const VAR_EPS: f64 = 1e-8;

    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            clip: 10.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn variance(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            self.m2[i] / self.count
        }
    }

    /// Identity until at least two samples have been seen.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count < 2.0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let z = (v - self.mean[i]) / (self.variance(i) + Self::VAR_EPS).sqrt();
                z.clamp(-self.clip, self.clip)
            })
            .collect()
    }
}

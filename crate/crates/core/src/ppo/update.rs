use rand::seq::SliceRandom;
use rand::Rng;

use super::policy::{gaussian_entropy, gaussian_log_prob, PolicyParams};
use super::{PpoConfig, PpoError, Sample};

/// Divergence guard on the mean absolute ratio deviation within a minibatch.
const MAX_MEAN_RATIO_DEVIATION: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Loss terms and gradient for one set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    /// `-surrogate + value_coef * value_mse - entropy_coef * entropy`.
    pub loss: f64,
    /// Mean clipped surrogate (the quantity PPO maximizes).
    pub surrogate: f64,
    /// Mean unclipped surrogate `ratio * advantage`.
    pub unclipped: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio_deviation: f64,
    pub ratios: Vec<f64>,
    /// Gradient of `loss` in [`PolicyParams::flat`] order.
    pub grad: Vec<f64>,
}

/// Evaluates the PPO loss on `samples` (advantages already normalized) and
/// its exact gradient.
pub fn evaluate_loss(params: &PolicyParams, samples: &[Sample], cfg: &PpoConfig) -> LossEval {
    let n = samples.len().max(1) as f64;
    let na = params.actor.param_count();
    let nc = params.critic.param_count();
    let mut grad = vec![0.0; na + nc + 1];
    let (g_actor, rest) = grad.split_at_mut(na);
    let (g_critic, g_log_std) = rest.split_at_mut(nc);
    let log_std = params.log_std;
    let var = (2.0 * log_std).exp();
    let eps = cfg.clip_epsilon;

    let mut surrogate = 0.0;
    let mut unclipped = 0.0;
    let mut value_mse = 0.0;
    let mut clipped = 0usize;
    let mut ratio_dev = 0.0;
    let mut ratios = Vec::with_capacity(samples.len());

    for s in samples {
        let actor_cache = params.actor.forward_cached(&s.obs);
        let mean = actor_cache.output()[0];
        let log_prob = gaussian_log_prob(s.raw_action, mean, log_std);
        let ratio = (log_prob - s.log_prob).exp();
        ratios.push(ratio);
        ratio_dev += (ratio - 1.0).abs();
        let a = s.advantage;
        let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
        let unclipped_term = ratio * a;
        let clipped_term = clipped_ratio * a;
        surrogate += unclipped_term.min(clipped_term);
        unclipped += unclipped_term;
        // The min picks the constant clipped branch only outside the trust region.
        let clip_active = (a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
        if clip_active {
            clipped += 1;
        } else {
            // d(-ratio*A)/d(log_prob) = -ratio*A
            let d_logp = -ratio * a / n;
            let z = s.raw_action - mean;
            let d_mean = d_logp * z / var;
            params.actor.backward(&actor_cache, &[d_mean], g_actor);
            g_log_std[0] += d_logp * (z * z / var - 1.0);
        }

        let critic_cache = params.critic.forward_cached(&s.obs);
        let value = critic_cache.output()[0];
        let err = value - s.ret;
        value_mse += err * err;
        let d_value = cfg.value_coef * 2.0 * err / n;
        params.critic.backward(&critic_cache, &[d_value], g_critic);
    }
    let entropy = gaussian_entropy(log_std);
    g_log_std[0] -= cfg.entropy_coef;

    surrogate /= n;
    unclipped /= n;
    value_mse /= n;
    LossEval {
        loss: -surrogate + cfg.value_coef * value_mse - cfg.entropy_coef * entropy,
        surrogate,
        unclipped,
        value_mse,
        entropy,
        clip_fraction: clipped as f64 / n,
        mean_ratio_deviation: ratio_dev / n,
        ratios,
        grad,
    }
}

/// Averages over the minibatches of the last epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio_deviation: f64,
    pub grad_norm: f64,
}

/// Runs `epochs_per_update` passes of shuffled minibatch Adam steps on the
/// clipped objective, with global gradient-norm clipping.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    samples: &[Sample],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    if samples.is_empty() {
        return Ok(UpdateStats::default());
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        let last_epoch = epoch + 1 == cfg.epochs_per_update;
        let mut batches = 0usize;
        let mut acc = UpdateStats::default();
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let eval = evaluate_loss(params, &batch, cfg);
            if !eval.loss.is_finite() {
                return Err(PpoError::NonFinite(format!("loss {} at epoch {epoch}", eval.loss)));
            }
            if eval.mean_ratio_deviation > MAX_MEAN_RATIO_DEVIATION {
                return Err(PpoError::Diverged(eval.mean_ratio_deviation));
            }
            let mut grad = eval.grad;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let scale = cfg.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= scale);
            }
            let mut flat = params.flat();
            adam.step(&mut flat, &grad);
            params.set_flat(&flat);
            if last_epoch {
                batches += 1;
                acc.policy_loss += -eval.surrogate;
                acc.value_loss += eval.value_mse;
                acc.entropy += eval.entropy;
                acc.clip_fraction += eval.clip_fraction;
                acc.mean_ratio_deviation += eval.mean_ratio_deviation;
                acc.grad_norm += norm;
            }
        }
        if last_epoch {
            let k = batches.max(1) as f64;
            stats = UpdateStats {
                policy_loss: acc.policy_loss / k,
                value_loss: acc.value_loss / k,
                entropy: acc.entropy / k,
                clip_fraction: acc.clip_fraction / k,
                mean_ratio_deviation: acc.mean_ratio_deviation / k,
                grad_norm: acc.grad_norm / k,
            };
        }
    }
    if !params.is_finite() {
        return Err(PpoError::NonFinite("parameters after update".into()));
    }
    Ok(stats)
}

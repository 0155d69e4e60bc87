//! Proximal Policy Optimization for a single continuous action.
//!
//! Everything is written out by hand: tanh MLPs with explicit backprop,
//! generalized advantage estimation, the clipped surrogate objective and an
//! Adam optimizer over one flat parameter vector.

mod checkpoint;
mod gae;
pub mod nn;
mod policy;
mod rollout;
mod update;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envgym::EnvError;

pub use checkpoint::Checkpoint;
pub use gae::{gae, normalize_advantages};
pub use policy::{
    gaussian_entropy, gaussian_log_prob, sample_action, squash, NetworkConfig, ObsNormalizer, PolicyOutput,
    PolicyParams, SampledAction,
};
pub use rollout::{build_samples, collect_rollouts, EnvFactory, Episode, GreedyPolicy, Sample, Transition};
pub use update::{evaluate_loss, ppo_update, Adam, LossEval, UpdateStats};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite values during training: {0}")]
    NonFinite(String),
    #[error("training diverged: mean |ratio - 1| = {0}")]
    Diverged(f64),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint io: {0}")]
    Io(String),
    #[error("invalid ppo config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    pub episodes_per_update: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs_per_update: 10,
            minibatch_size: 64,
            episodes_per_update: 8,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must be in (0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.episodes_per_update == 0 {
            return bad("epochs, minibatch size and episodes per update must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be > 0");
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from one master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-update summary for training logs.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub update: usize,
    pub episode_rewards: Vec<f64>,
    pub env_seeds: Vec<u64>,
    pub stats: UpdateStats,
}

/// Owns the policy, optimizer state and normalizer across updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: PolicyParams,
    pub normalizer: ObsNormalizer,
    pub config: PpoConfig,
    pub network: NetworkConfig,
    adam: Adam,
    shuffle_rng: rand_chacha::ChaCha8Rng,
    master_seed: u64,
    updates: usize,
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_ROLLOUT: u64 = 1 << 32;

/// The seeds a trainer derives from its master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub master: u64,
    pub init: u64,
    pub shuffle: u64,
    /// Rollout seed of update 0; update `k` uses stream `rollout_stream + k`.
    pub first_rollout: u64,
    pub rollout_stream: u64,
}

impl SeedStreams {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            init: derive_seed(master, STREAM_INIT),
            shuffle: derive_seed(master, STREAM_SHUFFLE),
            first_rollout: derive_seed(master, STREAM_ROLLOUT),
            rollout_stream: STREAM_ROLLOUT,
        }
    }
}

impl Trainer {
    pub fn new(network: NetworkConfig, config: PpoConfig, master_seed: u64) -> Result<Self, PpoError> {
        use rand::SeedableRng;
        config.validate()?;
        let mut init_rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(master_seed, STREAM_INIT));
        let params = PolicyParams::new(&network, &mut init_rng);
        let adam = Adam::new(params.param_count(), config.learning_rate);
        Ok(Self {
            normalizer: ObsNormalizer::new(network.obs_dim),
            adam,
            shuffle_rng: rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(master_seed, STREAM_SHUFFLE)),
            params,
            config,
            network,
            master_seed,
            updates: 0,
        })
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Seed of the rollout phase for a given update.
    pub fn rollout_seed(&self, update: usize) -> u64 {
        derive_seed(self.master_seed, STREAM_ROLLOUT + update as u64)
    }

    /// Collects one batch with the current policy, then refreshes the
    /// normalizer statistics and runs the PPO epochs.
    pub fn run_update<F: EnvFactory>(&mut self, factory: &F) -> Result<UpdateReport, PpoError> {
        let seed = self.rollout_seed(self.updates);
        let episodes = collect_rollouts(
            factory,
            &self.params,
            &self.normalizer,
            self.config.episodes_per_update,
            seed,
        )?;
        let stats = self.learn(&episodes)?;
        Ok(UpdateReport {
            update: self.updates - 1,
            episode_rewards: episodes.iter().map(Episode::total_reward).collect(),
            env_seeds: episodes.iter().map(|e| e.env_seed).collect(),
            stats,
        })
    }

    /// Same as [`Trainer::run_update`] but with learning switched off: rollouts
    /// are collected and reported, parameters and statistics stay frozen.
    pub fn run_frozen<F: EnvFactory>(&mut self, factory: &F) -> Result<UpdateReport, PpoError> {
        let seed = self.rollout_seed(self.updates);
        let episodes = collect_rollouts(
            factory,
            &self.params,
            &self.normalizer,
            self.config.episodes_per_update,
            seed,
        )?;
        self.updates += 1;
        Ok(UpdateReport {
            update: self.updates - 1,
            episode_rewards: episodes.iter().map(Episode::total_reward).collect(),
            env_seeds: episodes.iter().map(|e| e.env_seed).collect(),
            stats: UpdateStats::default(),
        })
    }

    fn learn(&mut self, episodes: &[Episode]) -> Result<UpdateStats, PpoError> {
        let mut samples = build_samples(episodes, self.config.gamma, self.config.gae_lambda);
        normalize_advantages(&mut samples);
        let stats = ppo_update(
            &mut self.params,
            &mut self.adam,
            &samples,
            &self.config,
            &mut self.shuffle_rng,
        )?;
        for ep in episodes {
            for t in &ep.transitions {
                self.normalizer.update(&t.raw_obs);
            }
        }
        self.updates += 1;
        Ok(stats)
    }

    pub fn greedy_policy(&self, bounds: (f64, f64)) -> GreedyPolicy {
        GreedyPolicy {
            params: self.params.clone(),
            normalizer: self.normalizer.clone(),
            bounds,
        }
    }

    pub fn checkpoint(&self, bounds: (f64, f64)) -> Checkpoint {
        Checkpoint::from_parts(
            &self.params,
            &self.normalizer,
            &self.config,
            &self.network,
            bounds,
            self.updates,
        )
    }
}

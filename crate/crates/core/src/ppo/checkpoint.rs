use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::policy::{NetworkConfig, ObsNormalizer, PolicyParams};
use super::{GreedyPolicy, PpoConfig, PpoError};

pub const CHECKPOINT_FORMAT: &str = "procrl-ppo-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBlob {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// On-disk policy: layer shapes with flat weights, normalizer statistics
/// and an echo of the configs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub actor: NetworkBlob,
    pub critic: NetworkBlob,
    pub log_std: f64,
    pub normalizer: ObsNormalizer,
    pub action_bounds: (f64, f64),
    pub updates: usize,
    pub ppo: PpoConfig,
    pub network: NetworkConfig,
}

impl Checkpoint {
    pub fn from_parts(
        params: &PolicyParams,
        normalizer: &ObsNormalizer,
        ppo: &PpoConfig,
        network: &NetworkConfig,
        action_bounds: (f64, f64),
        updates: usize,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            actor: NetworkBlob {
                sizes: params.actor.sizes(),
                params: params.actor.flat(),
            },
            critic: NetworkBlob {
                sizes: params.critic.sizes(),
                params: params.critic.flat(),
            },
            log_std: params.log_std,
            normalizer: normalizer.clone(),
            action_bounds,
            updates,
            ppo: ppo.clone(),
            network: network.clone(),
        }
    }

    /// Rebuilds the policy, checking every shape first.
    pub fn policy(&self) -> Result<GreedyPolicy, PpoError> {
        let mismatch = |m: String| PpoError::ShapeMismatch(m);
        if self.format != CHECKPOINT_FORMAT {
            return Err(mismatch(format!("unknown format {:?}", self.format)));
        }
        let actor = Mlp::from_flat(&self.actor.sizes, &self.actor.params)
            .ok_or_else(|| mismatch(format!("actor sizes {:?} vs {} params", self.actor.sizes, self.actor.params.len())))?;
        let critic = Mlp::from_flat(&self.critic.sizes, &self.critic.params).ok_or_else(|| {
            mismatch(format!("critic sizes {:?} vs {} params", self.critic.sizes, self.critic.params.len()))
        })?;
        if actor.sizes().last() != Some(&1) || critic.sizes().last() != Some(&1) {
            return Err(mismatch("actor and critic must have one output".into()));
        }
        let dim = actor.input_dim();
        if critic.input_dim() != dim {
            return Err(mismatch("actor and critic input sizes differ".into()));
        }
        let norm = &self.normalizer;
        if norm.mean.len() != dim || norm.m2.len() != dim {
            return Err(mismatch(format!("normalizer dimension {} vs network input {dim}", norm.mean.len())));
        }
        let params = PolicyParams {
            actor,
            critic,
            log_std: self.log_std,
        };
        if !params.is_finite() || !norm.mean.iter().chain(&norm.m2).all(|v| v.is_finite()) {
            return Err(PpoError::NonFinite("checkpoint contains non-finite values".into()));
        }
        let (lo, hi) = self.action_bounds;
        if !(lo < hi) {
            return Err(mismatch("action bounds".into()));
        }
        Ok(GreedyPolicy {
            params,
            normalizer: self.normalizer.clone(),
            bounds: self.action_bounds,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, PpoError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| PpoError::ShapeMismatch(e.to_string()))?;
        ck.policy()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        std::fs::write(path, self.to_json()).map_err(|e| PpoError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path).map_err(|e| PpoError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

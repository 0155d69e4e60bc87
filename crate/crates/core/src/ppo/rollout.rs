use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::policy::{sample_action, squash, ObsNormalizer, PolicyParams};
use super::{derive_seed, gae, PpoError};
use crate::envgym::{EnvError, Environment};

/// Builds one fresh environment per episode. Implemented for closures.
pub trait EnvFactory: Sync {
    type Env: Environment;
    fn make(&self, episode_seed: u64) -> Result<Self::Env, EnvError>;
}

impl<E, F> EnvFactory for F
where
    E: Environment,
    F: Fn(u64) -> Result<E, EnvError> + Sync,
{
    type Env = E;

    fn make(&self, episode_seed: u64) -> Result<E, EnvError> {
        self(episode_seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub raw_obs: Vec<f64>,
    /// The observation as the policy saw it.
    pub obs: Vec<f64>,
    pub raw_action: f64,
    pub action: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub seed: u64,
    /// Seed handed to the environment factory.
    pub env_seed: u64,
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// One flattened training sample with its advantage and return target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub raw_action: f64,
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Runs `n_episodes` full episodes with the stochastic policy. Episode `i`
/// uses its own environment and RNG derived from `(seed, i)`, so results do
/// not depend on how episodes are spread over worker threads.
pub fn collect_rollouts<F: EnvFactory>(
    factory: &F,
    params: &PolicyParams,
    normalizer: &ObsNormalizer,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Episode>, PpoError> {
    if n_episodes == 0 {
        return Err(PpoError::InvalidConfig("n_episodes must be >= 1".into()));
    }
    (0..n_episodes)
        .into_par_iter()
        .map(|i| run_episode(factory, params, normalizer, derive_seed(seed, i as u64)))
        .collect()
}

fn run_episode<F: EnvFactory>(
    factory: &F,
    params: &PolicyParams,
    normalizer: &ObsNormalizer,
    seed: u64,
) -> Result<Episode, PpoError> {
    let env_seed = derive_seed(seed, 0);
    let mut env = factory.make(env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let bounds = env.action_bounds();
    let mut raw_obs = env.reset()?;
    let mut transitions = Vec::new();
    loop {
        let obs = normalizer.normalize(&raw_obs);
        let out = params.forward(&obs)?;
        let a = sample_action(out.mean, out.std, bounds, &mut rng);
        let (next, reward, done) = env.step(a.action)?;
        transitions.push(Transition {
            raw_obs,
            obs,
            raw_action: a.raw,
            action: a.action,
            log_prob: a.log_prob,
            reward,
            value: out.value,
            done,
        });
        if done {
            break;
        }
        raw_obs = next;
    }
    Ok(Episode {
        seed,
        env_seed,
        transitions,
    })
}

/// Flattens episodes and attaches GAE advantages and returns.
pub fn build_samples(episodes: &[Episode], gamma: f64, lambda: f64) -> Vec<Sample> {
    let mut out = Vec::with_capacity(episodes.iter().map(Episode::len).sum());
    for ep in episodes {
        let rewards: Vec<f64> = ep.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = ep.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = ep.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = gae(&rewards, &values, &dones, 0.0, gamma, lambda);
        for ((t, a), r) in ep.transitions.iter().zip(adv).zip(ret) {
            out.push(Sample {
                obs: t.obs.clone(),
                raw_action: t.raw_action,
                log_prob: t.log_prob,
                value: t.value,
                advantage: a,
                ret: r,
            });
        }
    }
    out
}

/// Deterministic mean-action policy used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    pub params: PolicyParams,
    pub normalizer: ObsNormalizer,
    pub bounds: (f64, f64),
}

impl GreedyPolicy {
    pub fn act(&self, raw_obs: &[f64]) -> Result<f64, PpoError> {
        let out = self.params.forward(&self.normalizer.normalize(raw_obs))?;
        Ok(squash(out.mean, self.bounds.0, self.bounds.1))
    }

    /// Runs one full episode and returns the actions taken.
    pub fn run<E: Environment>(&self, env: &mut E) -> Result<Vec<f64>, PpoError> {
        let mut obs = env.reset()?;
        let mut actions = Vec::new();
        loop {
            let a = self.act(&obs)?;
            actions.push(a);
            let (next, _, done) = env.step(a)?;
            if done {
                return Ok(actions);
            }
            obs = next;
        }
    }
}

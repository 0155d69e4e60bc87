use super::Sample;

/// Generalized advantage estimation over one trajectory.
///
/// `dones[t]` marks that the episode terminated after step `t`, which cuts
/// both the bootstrap and the advantage recursion. `last_value` bootstraps
/// the step after the final one when it is not terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n, "values must align with rewards");
    assert_eq!(dones.len(), n, "dones must align with rewards");
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts and scales advantages to zero mean and unit standard deviation.
pub fn normalize_advantages(samples: &mut [Sample]) {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return;
    }
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    for s in samples {
        s.advantage = (s.advantage - mean) / std;
    }
}

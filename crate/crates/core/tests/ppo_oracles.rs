use procrl_core::envgym::{EnvConfig, Environment, PlantEnv};
use procrl_core::ppo::*;
use procrl_core::scenario::MalfunctionScenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct double sum: A_t = sum_l (gamma*lambda)^l * delta_{t+l}, stopping after the first done.
fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta = |k: usize| {
        let next = if d[k] {
            0.0
        } else if k + 1 < n {
            v[k + 1]
        } else {
            last
        };
        r[k] + gamma * next - v[k]
    };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for k in t..n {
                sum += (gamma * lambda).powi((k - t) as i32) * delta(k);
                if d[k] {
                    break;
                }
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_on_1000_trajectories() {
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let last = rng.random_range(-2.0..2.0);
        let gamma = rng.random_range(0.5..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = gae(&r, &v, &d, last, gamma, lambda);
        let want = brute_gae(&r, &v, &d, last, gamma, lambda);
        for t in 0..n {
            assert!((adv[t] - want[t]).abs() <= 1e-9, "seed {seed} t {t}: {} vs {}", adv[t], want[t]);
            assert!((ret[t] - (want[t] + v[t])).abs() <= 1e-9);
        }
    }
}

#[test]
fn gae_spec_example() {
    let (adv, _) = gae(&[1.0; 3], &[0.5; 3], &[false, false, true], 0.0, 0.99, 0.95);
    let want = brute_gae(&[1.0; 3], &[0.5; 3], &[false, false, true], 0.0, 0.99, 0.95);
    for (a, w) in adv.iter().zip(&want) {
        assert!((a - w).abs() < 1e-12);
    }
}

fn seeded_batch(n: usize, seed: u64) -> (PolicyParams, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = PolicyParams::new(&NetworkConfig::default(), &mut rng);
    let samples = (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = params.forward(&obs).unwrap();
            let a = sample_action(out.mean, out.std, (0.70, 0.88), &mut rng);
            Sample {
                obs,
                raw_action: a.raw,
                log_prob: a.log_prob,
                value: out.value,
                advantage: rng.random_range(-1.5..1.5),
                ret: rng.random_range(-1.0..3.0),
            }
        })
        .collect();
    (params, samples)
}

fn assert_grad_matches(analytic: &[f64], numeric: &[f64], what: &str) {
    let scale = numeric.iter().map(|g| g.abs()).fold(0.0, f64::max);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-3 * scale);
        assert!((a - n).abs() / denom <= 1e-4, "{what} param {i}: analytic {a} numeric {n}");
    }
}

fn central_difference(params: &PolicyParams, range: std::ops::Range<usize>, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let base = params.flat();
    let mut p = params.clone();
    range
        .map(|i| {
            let mut v = base.clone();
            v[i] += h;
            p.set_flat(&v);
            let up = f(&p);
            v[i] -= 2.0 * h;
            p.set_flat(&v);
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let (params, _) = seeded_batch(1, 11);
    let obs = [0.3, -1.2, 0.8, 0.1, -0.4, 1.7, -0.9];
    let na = params.actor.param_count();
    let nc = params.critic.param_count();
    let cache = params.critic.forward_cached(&obs);
    let mut grad = vec![0.0; nc];
    params.critic.backward(&cache, &[1.0], &mut grad);
    let numeric = central_difference(&params, na..na + nc, |p| p.forward(&obs).unwrap().value);
    assert_grad_matches(&grad, &numeric, "critic");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (params, samples) = seeded_batch(16, 5);
    let cfg = PpoConfig::default();
    let eval = evaluate_loss(&params, &samples, &cfg);
    let n = params.param_count();
    let numeric = central_difference(&params, 0..n, |p| evaluate_loss(p, &samples, &cfg).loss);
    let na = params.actor.param_count();
    assert_grad_matches(&eval.grad[..na], &numeric[..na], "actor");
    assert_grad_matches(&eval.grad[na..n - 1], &numeric[na..n - 1], "critic");
    assert_grad_matches(&eval.grad[n - 1..], &numeric[n - 1..], "log_std");
}

#[test]
fn ratio_is_one_before_any_step() {
    let (params, samples) = seeded_batch(64, 9);
    let eval = evaluate_loss(&params, &samples, &PpoConfig::default());
    for r in &eval.ratios {
        assert!((r - 1.0).abs() <= 1e-9, "ratio {r}");
    }
    assert!((eval.surrogate - eval.unclipped).abs() <= 1e-12);
    assert_eq!(eval.clip_fraction, 0.0);
}

#[test]
fn clipped_branch_has_zero_policy_gradient() {
    let (params, mut samples) = seeded_batch(1, 3);
    let cfg = PpoConfig::default();
    let s = &mut samples[0];
    let mean = params.forward(&s.obs).unwrap().mean;
    // Old log-prob well below the current one puts the ratio far above 1 + eps.
    s.raw_action = mean;
    s.log_prob = gaussian_log_prob(mean, mean, params.log_std) - 1.0;
    s.advantage = 1.0;
    let eval = evaluate_loss(&params, &samples, &cfg);
    assert!(eval.ratios[0] > 1.0 + cfg.clip_epsilon);
    assert_eq!(eval.clip_fraction, 1.0);
    let na = params.actor.param_count();
    let n = params.param_count();
    assert!(eval.grad[..na].iter().all(|g| *g == 0.0));
    assert_eq!(eval.grad[n - 1], 0.0);
    // The critic still learns.
    assert!(eval.grad[na..n - 1].iter().any(|g| *g != 0.0));

    // Negative advantage and a small ratio is the other constant branch.
    let s = &mut samples[0];
    s.log_prob = gaussian_log_prob(mean, mean, params.log_std) + 1.0;
    s.advantage = -1.0;
    let eval = evaluate_loss(&params, &samples, &cfg);
    assert!(eval.ratios[0] < 1.0 - cfg.clip_epsilon);
    assert!(eval.grad[..na].iter().all(|g| *g == 0.0));
}

#[test]
fn toy_update_improves_surrogate() {
    let (mut params, mut samples) = seeded_batch(3, 21);
    normalize_advantages(&mut samples);
    let cfg = PpoConfig {
        minibatch_size: 3,
        ..PpoConfig::default()
    };
    let before = evaluate_loss(&params, &samples, &cfg).surrogate;
    let mut adam = Adam::new(params.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ppo_update(&mut params, &mut adam, &samples, &cfg, &mut rng).unwrap();
    let after = evaluate_loss(&params, &samples, &cfg).surrogate;
    assert!(after > before, "surrogate {before} -> {after}");
}

#[test]
fn normalized_advantages_are_standardized() {
    let (_, mut samples) = seeded_batch(240, 4);
    for (i, s) in samples.iter_mut().enumerate() {
        s.advantage = s.advantage * 13.0 + 40.0 + (i as f64).sin();
    }
    normalize_advantages(&mut samples);
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let std = (samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-9);
    assert!((std - 1.0).abs() < 1e-6);
}

fn null_factory(_seed: u64) -> Result<PlantEnv, procrl_core::envgym::EnvError> {
    PlantEnv::new(EnvConfig::default(), MalfunctionScenario::null())
}

#[test]
fn rollouts_have_expected_shape_and_are_deterministic() {
    let params = PolicyParams::new(&NetworkConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
    let norm = ObsNormalizer::new(7);
    let a = collect_rollouts(&null_factory, &params, &norm, 8, 99).unwrap();
    let b = collect_rollouts(&null_factory, &params, &norm, 8, 99).unwrap();
    assert_eq!(a.iter().map(Episode::len).sum::<usize>(), 240);
    assert!(a.iter().all(|e| e.transitions.last().unwrap().done));
    assert_eq!(a, b);
    let c = collect_rollouts(&null_factory, &params, &norm, 8, 100).unwrap();
    assert_ne!(a, c);
}

#[test]
fn constant_sigma_policy_collects_thirty_per_episode() {
    let mut env = null_factory(0).unwrap();
    let mut total = 0.0;
    env.reset().unwrap();
    loop {
        let (_, r, done) = env.step(0.784).unwrap();
        total += r;
        if done {
            break;
        }
    }
    assert_eq!(total, 30.0);
}

#[test]
fn identical_seeds_reproduce_training_bit_for_bit() {
    let factory = |_s: u64| PlantEnv::new(EnvConfig::default(), MalfunctionScenario::fixed_mal03());
    let run = || {
        let mut t = Trainer::new(NetworkConfig::default(), PpoConfig::default(), 17).unwrap();
        let reports: Vec<_> = (0..3).map(|_| t.run_update(&factory).unwrap()).collect();
        (reports, t.params.flat())
    };
    let (ra, pa) = run();
    let (rb, pb) = run();
    assert_eq!(ra, rb);
    assert_eq!(pa.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), pb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

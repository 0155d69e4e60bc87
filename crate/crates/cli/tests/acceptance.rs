//! One PASS/FAIL line per primary acceptance criterion. Exits nonzero when
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use procrl_cli::calibrate;
use procrl_core::envgym::{EnvConfig, Environment, PlantEnv};
use procrl_core::planner::{diagnose, parse_rules, plan, plan_tagged, Deviation, Dir, Goal, MAL03_RULES, FEED_SECTION_RULES};
use procrl_core::plantsim::{PlantConfig, PlantState};
use procrl_core::ppo::{
    evaluate_loss, gae, gaussian_log_prob, sample_action, NetworkConfig, PolicyParams, PpoConfig, Sample,
};
use procrl_core::scenario::MalfunctionScenario;
use procrl_harness::{
    master_seed, replay, run_fixed_experiment, run_variable_experiment, FixedExperimentConfig, LiveSim,
    VariableExperimentConfig, DEFAULT_SEED,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let outcome = f();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {budget:?} budget")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2} s]", elapsed.as_secs_f64()),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {name}: {detail} [{:.2} s]", elapsed.as_secs_f64());
            }
        }
    }
}

fn calibration() -> Outcome {
    let c = calibrate(&PlantConfig::default()).map_err(|e| e.to_string())?;
    ensure((c.pressure - 0.784).abs() < 1e-12, || format!("steady pressure {}", c.pressure))?;
    ensure(c.dp_dt.abs() < 1e-9 && c.dl_dt.abs() < 1e-9, || format!("dP/dt {:e}, dL/dt {:e}", c.dp_dt, c.dl_dt))?;
    ensure(c.drift_pressure < 1e-6, || format!("30-minute drift {:e} MPa", c.drift_pressure))?;
    Ok(format!(
        "P = {} MPa, |dP/dt| = {:.1e}, |dL/dt| = {:.1e}, drift {:.1e} MPa",
        c.pressure,
        c.dp_dt.abs(),
        c.dl_dt.abs(),
        c.drift_pressure
    ))
}

fn reward_contract() -> Outcome {
    let mut env = PlantEnv::new(EnvConfig::default(), MalfunctionScenario::null()).map_err(|e| e.to_string())?;
    env.reset().map_err(|e| e.to_string())?;
    let mut total = 0.0;
    let mut steps = 0;
    loop {
        let (_, r, done) = env.step(0.784).map_err(|e| e.to_string())?;
        total += r;
        steps += 1;
        if done {
            break;
        }
    }
    ensure(total == 30.0 && steps == 30, || format!("cumulative reward {total} over {steps} steps"))?;
    Ok(format!("cumulative reward {total} over {steps} steps"))
}

fn fixed_malfunction() -> Outcome {
    let cfg = FixedExperimentConfig {
        master_seed: master_seed(DEFAULT_SEED).map_err(|e| e.to_string())?,
        ..FixedExperimentConfig::default()
    };
    let out = run_fixed_experiment(&cfg, |_| {}).map_err(|e| e.to_string())?;
    let r = &out.report;
    let detail = format!(
        "{} updates, trained {:.3} vs baseline {:.3} (+{:.3}), recovery {:?} s vs baseline {:?}",
        r.updates, r.trained.cumulative_reward, r.baseline.cumulative_reward, r.improvement, r.trained.recovery_time,
        r.baseline.recovery_time
    );
    ensure(r.improvement >= 5.0, || detail.clone())?;
    ensure(r.trained.recovery_time.is_some_and(|t| t < 300.0), || detail.clone())?;
    ensure(r.baseline.recovery_time.is_none(), || detail.clone())?;
    Ok(detail)
}

fn variable_malfunction() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in [1, 2, 3] {
        let cfg = VariableExperimentConfig {
            master_seed: seed,
            ..VariableExperimentConfig::default()
        };
        let (r, _) = run_variable_experiment(&cfg, |_| {}).map_err(|e| e.to_string())?;
        ok &= r.episodes.len() >= 1000 && r.relative_increase >= 0.20;
        parts.push(format!(
            "seed {seed}: {:.3} -> {:.3} ({:+.1}%, {} episodes)",
            r.first_window,
            r.last_window,
            100.0 * r.relative_increase,
            r.episodes.len()
        ));
    }
    let detail = parts.join("; ");
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta = |k: usize| {
        let next = match (d[k], k + 1 < n) {
            (true, _) => 0.0,
            (false, true) => v[k + 1],
            (false, false) => last,
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

fn batch(n: usize, seed: u64) -> (PolicyParams, Vec<Sample>) {
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

fn ppo_oracles() -> Outcome {
    let mut worst_gae: f64 = 0.0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let last = rng.random_range(-2.0..2.0);
        let (gamma, lambda) = (rng.random_range(0.5..=1.0), rng.random_range(0.0..=1.0));
        let (adv, _) = gae(&r, &v, &d, last, gamma, lambda);
        for (a, b) in adv.iter().zip(brute_gae(&r, &v, &d, last, gamma, lambda)) {
            worst_gae = worst_gae.max((a - b).abs());
        }
    }
    ensure(worst_gae <= 1e-9, || format!("GAE error {worst_gae:e}"))?;

    let cfg = PpoConfig::default();
    let (params, samples) = batch(16, 5);
    let analytic = evaluate_loss(&params, &samples, &cfg).grad;
    let base = params.flat();
    let worst_grad = {
        let h = 1e-6;
        let mut p = params.clone();
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut v = base.clone();
                v[i] += h;
                p.set_flat(&v);
                let up = evaluate_loss(&p, &samples, &cfg).loss;
                v[i] -= 2.0 * h;
                p.set_flat(&v);
                (up - evaluate_loss(&p, &samples, &cfg).loss) / (2.0 * h)
            })
            .collect();
        let scale = numeric.iter().map(|g| g.abs()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale));
        }
        ensure(worst <= 1e-4, || format!("worst relative gradient error {worst:e}"))?;
        worst
    };

    let (params, samples) = batch(64, 9);
    let eval = evaluate_loss(&params, &samples, &cfg);
    ensure(eval.ratios.iter().all(|r| (r - 1.0).abs() <= 1e-9), || "ratio != 1 before any step".into())?;
    ensure((eval.surrogate - eval.unclipped).abs() <= 1e-12, || "clipped and unclipped objectives differ".into())?;

    let (params, mut samples) = batch(1, 3);
    let mean = params.forward(&samples[0].obs).unwrap().mean;
    samples[0].raw_action = mean;
    samples[0].log_prob = gaussian_log_prob(mean, mean, params.log_std) - 1.0;
    samples[0].advantage = 1.0;
    let eval = evaluate_loss(&params, &samples, &cfg);
    let na = params.actor.param_count();
    let n = params.param_count();
    ensure(eval.ratios[0] > 1.0 + cfg.clip_epsilon, || "clipped case not reached".into())?;
    ensure(eval.grad[..na].iter().chain(&eval.grad[n - 1..]).all(|g| *g == 0.0), || {
        "policy gradient nonzero on the clipped branch".into()
    })?;
    Ok(format!(
        "GAE max error {worst_gae:.1e} on 1000 trajectories; gradient max relative error {worst_grad:.1e} over {n} params; ratio identity and clipped zero gradient hold"
    ))
}

/// Every simple path as (length, node names after the start, positive signs),
/// enumerated over individual rules so parallel edges count separately.
fn all_paths(
    rules: &[(usize, usize, bool)],
    at: usize,
    goal: usize,
    visited: &mut Vec<usize>,
    signs: &mut Vec<bool>,
    out: &mut Vec<(usize, Vec<String>, Vec<bool>)>,
) {
    if at == goal && !signs.is_empty() {
        out.push((signs.len(), visited[1..].iter().map(|i| format!("v{i}")).collect(), signs.clone()));
        return;
    }
    for &(a, b, pos) in rules {
        if a == at && !visited.contains(&b) {
            visited.push(b);
            signs.push(pos);
            all_paths(rules, b, goal, visited, signs, out);
            visited.pop();
            signs.pop();
        }
    }
}

fn random_graph_agreement(seed: u64) -> Result<bool, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.random_range(2..=8usize);
    let density = rng.random_range(0.15..0.5);
    let mut rules = Vec::new();
    for a in 0..nodes {
        for b in 0..nodes {
            if a != b && rng.random_bool(density) {
                rules.push((a, b, rng.random_bool(0.5)));
            }
        }
    }
    let manipulable: BTreeSet<usize> = (0..nodes).filter(|_| rng.random_bool(0.4)).collect();
    let goal = rng.random_range(0..nodes);
    let restore = if rng.random_bool(0.5) { Dir::Inc } else { Dir::Dec };
    let mut text = String::new();
    for &(a, b, pos) in &rules {
        text.push_str(&format!("IF v{a} inc THEN v{b} {}\n", if pos { "inc" } else { "dec" }));
    }
    let g = parse_rules(&text).map_err(|e| e.to_string())?;
    if !g.contains(&format!("v{goal}")) {
        return Ok(false);
    }

    let mut expected: Vec<(usize, String, Dir)> = Vec::new();
    for &m in manipulable.iter().filter(|&&m| m != goal) {
        let mut paths = Vec::new();
        all_paths(&rules, m, goal, &mut vec![m], &mut Vec::new(), &mut paths);
        // Positive before negative at equal length and route.
        let Some(best) = paths.into_iter().min_by_key(|(len, names, signs)| {
            (*len, names.clone(), signs.iter().map(|p| !p).collect::<Vec<_>>())
        }) else {
            continue;
        };
        let positive = best.2.iter().filter(|p| !**p).count() % 2 == 0;
        expected.push((best.0, format!("v{m}"), if positive { restore } else { restore.flip() }));
    }
    expected.sort();

    let manip: BTreeSet<String> = manipulable.iter().map(|i| format!("v{i}")).collect();
    let got = match plan(&g, &Goal { variable: format!("v{goal}"), restore }, &manip) {
        Ok(p) => p.steps.iter().map(|s| (s.path.len() - 1, s.target.clone(), s.direction)).collect(),
        Err(_) => Vec::new(),
    };
    if got != expected {
        return Err(format!("seed {seed}: plan {got:?} vs brute force {expected:?}"));
    }
    Ok(!expected.is_empty())
}

fn planner() -> Outcome {
    let fi101 = [Deviation::new("FI101", Dir::Inc)];
    let base = parse_rules(FEED_SECTION_RULES).map_err(|e| e.to_string())?;
    let causes = diagnose(&base, &fi101).map_err(|e| e.to_string())?;
    ensure(causes.first().is_some_and(|c| c.variable == "feed_pressure" && c.direction == Dir::Inc), || {
        format!("base rule diagnosis {causes:?}")
    })?;

    let kb = parse_rules(MAL03_RULES).map_err(|e| e.to_string())?;
    let causes = diagnose(&kb, &fi101).map_err(|e| e.to_string())?;
    ensure(causes.first().is_some_and(|c| c.variable == "feed_pressure"), || format!("KB diagnosis {causes:?}"))?;
    let p = plan_tagged(&kb, &Goal { variable: "vaporizer_pressure".into(), restore: Dir::Dec })
        .map_err(|e| e.to_string())?;
    ensure(p.targets() == ["PC130.SV"] && p.steps[0].direction == Dir::Dec, || format!("plan {:?}", p.targets()))?;

    let mut nonempty = 0;
    for seed in 0..100 {
        nonempty += random_graph_agreement(seed)? as usize;
    }
    ensure(nonempty >= 30, || format!("only {nonempty} random graphs had a plan"))?;
    Ok(format!(
        "FI101:+ -> feed_pressure:+; plan(vaporizer_pressure:-) = [PC130.SV -]; 100 random graphs agree ({nonempty} with plans)"
    ))
}

fn state_bits(trace: &[PlantState]) -> Vec<[u64; 7]> {
    trace
        .iter()
        .map(|s| [s.t, s.pressure, s.level, s.x_pcv, s.x_lcv, s.feed_pressure, s.fi101_flow].map(f64::to_bits))
        .collect()
}

fn determinism_and_replay() -> Outcome {
    let train = || -> Result<_, String> {
        let cfg = FixedExperimentConfig {
            updates: 3,
            master_seed: 17,
            ..FixedExperimentConfig::default()
        };
        let mut out = run_fixed_experiment(&cfg, |_| {}).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        out.write_to(dir.path()).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(dir.path().join(f)).map_err(|e| e.to_string());
        Ok((read("learning_curve.csv")?, read("checkpoint.json")?))
    };
    let (log_a, ck_a) = train()?;
    let (log_b, ck_b) = train()?;
    ensure(log_a == log_b && ck_a == ck_b, || "training logs differ between identical seeds".into())?;

    let mut live = LiveSim::new(EnvConfig::default()).map_err(|e| e.to_string())?;
    let mut script: BTreeMap<usize, &str> = BTreeMap::new();
    script.insert(1, "inject");
    script.insert(3, "adopt");
    script.insert(9, "abort");
    for minute in 0..14 {
        match script.get(&minute) {
            Some(&"inject") => live.inject(MalfunctionScenario::ramp(1.15, 240.0, 0.0)),
            Some(&"adopt") => live.adopt(vec![0.76, 0.765, 0.77, 0.775]),
            Some(_) => live.abort(),
            None => Ok(()),
        }
        .map_err(|e| e.to_string())?;
        live.advance_minute().map_err(|e| e.to_string())?;
    }
    let log = live.event_log();
    let round_trip = serde_json::from_str(&serde_json::to_string(&log).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let again = replay(&round_trip).map_err(|e| e.to_string())?;
    ensure(state_bits(live.trace()) == state_bits(again.trace()), || "replayed trace differs".into())?;
    Ok(format!(
        "3-update training reproduces its learning curve ({} bytes) and checkpoint byte-for-byte; {} events replay {} trace points bit-for-bit",
        log_a.len(),
        log.events.len(),
        live.trace().len()
    ))
}

fn main() {
    let mut gate = Gate { failures: 0 };
    let min = |m: u64| Duration::from_secs(60 * m);
    gate.check("calibration", Duration::from_secs(1), calibration);
    gate.check("reward contract", Duration::from_secs(1), reward_contract);
    gate.check("PPO oracle suite", min(1), ppo_oracles);
    gate.check("planner", Duration::from_secs(10), planner);
    gate.check("determinism and replay", min(5), determinism_and_replay);
    gate.check("fixed malfunction", min(15), fixed_malfunction);
    gate.check("variable malfunction", min(30), variable_malfunction);
    if gate.failures > 0 {
        println!("{} acceptance criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

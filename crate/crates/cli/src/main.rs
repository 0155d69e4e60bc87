use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use procrl_cli::{calibrate, parse_goal, plan_command, scenario_from_parts};
use procrl_core::envgym::EnvConfig;
use procrl_core::planner::{Deviation, MAL03_RULES};
use procrl_core::ppo::UpdateReport;
use procrl_core::scenario::{MalfunctionScenario, ProfileKind};
use procrl_harness::{
    evaluate_baseline, evaluate_policy, master_seed, replay, run_fixed_experiment, run_variable_experiment,
    EventLog, FixedExperimentConfig, RecoveryBand, VariableExperimentConfig,
};
use procrl_service::{serve, ServiceConfig};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "procrl", version, about = "Vaporizer recovery-procedure workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainScenario {
    Fixed,
    Variable,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario file (TOML). Exclusive with the flags below.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<ProfileKind>,
    #[arg(long)]
    magnitude: Option<f64>,
    #[arg(long)]
    t_complete: Option<f64>,
    #[arg(long)]
    t_proc_start: Option<f64>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<MalfunctionScenario> {
        if let Some(path) = &self.scenario {
            if self.kind.is_some() || self.magnitude.is_some() || self.t_complete.is_some() || self.t_proc_start.is_some() {
                bail!("--scenario cannot be combined with --kind/--magnitude/--t-complete/--t-proc-start");
            }
            return MalfunctionScenario::load(path).with_context(|| format!("loading {}", path.display()));
        }
        Ok(scenario_from_parts(self.kind, self.magnitude, self.t_complete, self.t_proc_start)?)
    }
}

fn parse_kind(s: &str) -> Result<ProfileKind, String> {
    s.parse().map_err(|e: procrl_core::scenario::ScenarioError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Solve the normal steady state and check the 30-minute fixpoint.
    Calibrate {
        /// Plant config (JSON or TOML).
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Train PPO on the fixed or randomized MAL03 case.
    Train {
        #[arg(long, value_enum)]
        scenario: TrainScenario,
        /// Experiment config (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Master seed; PROCRL_SEED takes precedence.
        #[arg(long)]
        seed: Option<u64>,
        /// Run the variable case with the policy frozen at initialization.
        #[arg(long)]
        frozen: bool,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy episode of a saved policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the plant trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Episode under standard PID control with SV held at sigma.
    Baseline {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Diagnose deviations, then plan and explain a recovery.
    Plan {
        /// Rule file; the built-in MAL03 knowledge base when omitted.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Observed deviation as var:+ or var:-; repeatable.
        #[arg(long = "deviation", required = true)]
        deviations: Vec<String>,
        /// Goal as var:+ or var:- (direction to restore). Inferred when omitted.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Run the session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Replay a session event log and print the final frame.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    Ok(value)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn progress(quiet: bool) -> impl FnMut(&UpdateReport) {
    move |r: &UpdateReport| {
        if !quiet && (r.update + 1) % 10 == 0 {
            let mean = r.episode_rewards.iter().sum::<f64>() / r.episode_rewards.len().max(1) as f64;
            eprintln!("update {:>4}  mean reward {:>7.3}  policy loss {:+.4}", r.update + 1, mean, r.stats.policy_loss);
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Calibrate { plant } => {
            let plant = match plant {
                Some(p) => procrl_core::plantsim::PlantConfig::load(&p)?,
                None => Default::default(),
            };
            let c = calibrate(&plant)?;
            print_json(&c)?;
            Ok(if c.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Train { scenario, config, updates, episodes, seed, frozen, out, quiet } => {
            match scenario {
                TrainScenario::Fixed => {
                    if episodes.is_some() || frozen {
                        bail!("--episodes and --frozen apply to --scenario variable");
                    }
                    let mut cfg: FixedExperimentConfig = match &config {
                        Some(p) => load_config(p)?,
                        None => Default::default(),
                    };
                    cfg.updates = updates.unwrap_or(cfg.updates);
                    cfg.master_seed = master_seed(seed.unwrap_or(cfg.master_seed))?;
                    let mut outcome = run_fixed_experiment(&cfg, progress(quiet))?;
                    outcome.write_to(&out)?;
                    let r = &outcome.report;
                    println!(
                        "trained {:.3} vs baseline {:.3} (improvement {:+.3}); recovery {:?} vs {:?}; wrote {}",
                        r.trained.cumulative_reward,
                        r.baseline.cumulative_reward,
                        r.improvement,
                        r.trained.recovery_time,
                        r.baseline.recovery_time,
                        out.display()
                    );
                }
                TrainScenario::Variable => {
                    if updates.is_some() {
                        bail!("--updates applies to --scenario fixed; use --episodes");
                    }
                    let mut cfg: VariableExperimentConfig = match &config {
                        Some(p) => load_config(p)?,
                        None => Default::default(),
                    };
                    cfg.episodes = episodes.unwrap_or(cfg.episodes);
                    cfg.master_seed = master_seed(seed.unwrap_or(cfg.master_seed))?;
                    cfg.train = !frozen;
                    let (report, trainer) = run_variable_experiment(&cfg, progress(quiet))?;
                    report.write_to(&out)?;
                    if cfg.train {
                        let bounds = (cfg.env.episode.sv_low, cfg.env.episode.sv_high);
                        trainer.checkpoint(bounds).save(&out.join("checkpoint.json"))?;
                    }
                    println!(
                        "moving average {:.3} -> {:.3} ({:+.1}%); wrote {}",
                        report.first_window,
                        report.last_window,
                        100.0 * report.relative_increase,
                        out.display()
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { checkpoint, scenario, seed, trace } => {
            let mut report = evaluate_policy(&checkpoint, &EnvConfig::default(), scenario.resolve()?, seed)?;
            if let Some(p) = trace {
                report.persist_trace(&p)?;
            }
            print_json(&report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Baseline { scenario, trace } => {
            let mut report = evaluate_baseline(&EnvConfig::default(), scenario.resolve()?, RecoveryBand::default())?;
            if let Some(p) = trace {
                report.persist_trace(&p)?;
            }
            print_json(&report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan { rules, deviations, goal, json } => {
            let text = match &rules {
                Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                None => MAL03_RULES.to_string(),
            };
            let deviations = deviations
                .iter()
                .map(|s| s.parse::<Deviation>())
                .collect::<Result<Vec<_>, _>>()?;
            let goal = goal.as_deref().map(parse_goal).transpose()?;
            let out = plan_command(&text, &deviations, goal)?;
            if json {
                print_json(&out)?;
            } else {
                for c in &out.root_causes {
                    println!("root cause: {} {} (explains {})", c.variable, c.direction.symbol(), c.explains.join(", "));
                }
                println!("goal: {} {}", out.goal.variable, out.goal.restore.symbol());
                for s in &out.plan.steps {
                    println!("action: {} {}  via {}", s.target, s.direction.symbol(), s.path.join(" -> "));
                }
                println!("{}", out.explanation.text);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, host, rules, checkpoint } => {
            let mut cfg = ServiceConfig::builtin();
            if let Some(p) = rules {
                cfg = cfg.with_rules_file(&p)?;
            }
            if let Some(p) = checkpoint {
                cfg = cfg.with_checkpoint(&p)?;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .with_context(|| format!("binding {host}:{port}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve(listener, cfg).await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { log } => {
            let log: EventLog = load_config(&log)?;
            let sim = replay(&log)?;
            print_json(&sim.frame())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

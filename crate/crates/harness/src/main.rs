use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use visracer::config::{builtin_track, ExperimentConfig, BUILTIN_TRACKS};
use visracer::error::{HarnessError, Result};
use visracer::persist;
use visracer::pipeline::{Agent, PolicyId, Run};
use visracer::selftest;
use visracer_core::Track;
use visracer_learn::train::{CurveRow, EpochObserver};
use visracer_learn::SacAgent;

/// Vision-based racing controller: track tools, representation learning,
/// soft actor-critic training, evaluation and reports.
///
/// Exit codes: 0 success, 2 invalid configuration, 3 missing artifact,
/// 4 runtime failure.
#[derive(Parser)]
#[command(name = "visracer", version, after_help = OUTPUT_HELP)]
struct Cli {
    #[command(flatten)]
    source: ConfigSource,
    #[command(subcommand)]
    command: Command,
}

const OUTPUT_HELP: &str =
    "Artifacts go to <output root>/<config hash prefix>/. The output root is the config's output_dir unless the \
     VISRACER_OUTPUT_ROOT environment variable is set.";

#[derive(Args)]
struct ConfigSource {
    /// Experiment config (JSON). Without it the built-in profile is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Smoke)]
    profile: Profile,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Reduced reinforcement-learning budget (about two CPU hours for all agents).
    Smoke,
    /// 400 epochs of 20 trials of 100 s per seed.
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Baseline,
    Privileged,
    Vision,
}

impl From<AgentArg> for Agent {
    fn from(a: AgentArg) -> Self {
        match a {
            AgentArg::Baseline => Agent::Baseline,
            AgentArg::Privileged => Agent::Privileged,
            AgentArg::Vision => Agent::Vision,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track spec files: generate, validate, describe.
    #[command(subcommand)]
    Track(TrackCmd),
    /// Print the effective experiment config as JSON.
    Config,
    /// Record the Phase-1 datasets by driving the disrupted baseline.
    Collect,
    /// Train the image representation on the collected dataset.
    TrainRepr {
        /// Initialization seed (defaults to phase1.seed).
        #[arg(long)]
        init_seed: Option<u64>,
    },
    /// Score a trained representation on the clean evaluation split.
    EvalRepr {
        #[arg(long)]
        init_seed: Option<u64>,
    },
    /// Train soft actor-critic policies.
    TrainRl {
        #[arg(long, value_enum)]
        agent: AgentArg,
        /// Train only this seed (default: every seed in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Representation initialization seed for the vision agent.
        #[arg(long)]
        init_seed: Option<u64>,
    },
    /// Two-lap flying-start evaluation.
    Eval {
        #[arg(long, value_enum)]
        agent: AgentArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        init_seed: Option<u64>,
    },
    /// Lap-time table, trajectory and learning-curve CSVs.
    Report,
    /// Run the oracle suites.
    Selftest {
        /// Fewer random samples.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Subcommand)]
enum TrackCmd {
    /// Write a built-in track spec to a file.
    Gen {
        #[arg(long, default_value = "default")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a track spec file and report its length and curvature.
    Validate { path: PathBuf },
    /// Describe the configured track (or a spec file).
    Info { path: Option<PathBuf> },
}

fn load_config(src: &ConfigSource) -> Result<ExperimentConfig> {
    match &src.config {
        Some(p) => ExperimentConfig::load(p),
        None => {
            let cfg = match src.profile {
                Profile::Smoke => ExperimentConfig::smoke(),
                Profile::Full => ExperimentConfig::full(),
            };
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn describe(track: &Track) -> String {
    format!(
        "length_m={:.6} max_abs_curvature={:.6} width_m={} samples={} step_m={}",
        track.length(),
        track.max_abs_curvature(),
        track.width(),
        track.samples().len(),
        track.step()
    )
}

fn build(spec: &visracer_core::TrackSpec) -> Result<Track> {
    Track::build(spec).map_err(|e| HarnessError::ConfigInvalid(format!("track: {e}")))
}

struct Progress;

impl EpochObserver for Progress {
    fn epoch_done(&mut self, row: &CurveRow, agent: &SacAgent) {
        eprintln!("{} alpha={:.4}", row.csv(), agent.alpha());
    }
}

fn seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Track(TrackCmd::Gen { name, out }) => {
            let spec = builtin_track(&name).ok_or_else(|| {
                HarnessError::ConfigInvalid(format!("unknown track {name:?} (known: {})", BUILTIN_TRACKS.join(", ")))
            })?;
            let track = build(&spec)?;
            persist::write_new(&out, &persist::track_spec_bytes(&spec))?;
            println!("wrote {} {}", out.display(), describe(&track));
        }
        Command::Track(TrackCmd::Validate { path }) => {
            let track = build(&persist::load_track_spec(&path)?)?;
            println!("valid {}", describe(&track));
        }
        Command::Track(TrackCmd::Info { path }) => {
            let spec = match path {
                Some(p) => persist::load_track_spec(&p)?,
                None => load_config(&cli.source)?.track_spec()?,
            };
            println!("{}", describe(&build(&spec)?));
        }
        Command::Config => println!("{}", load_config(&cli.source)?.to_json()),
        Command::Selftest { quick } => {
            let checks = selftest::run_all(quick);
            for c in &checks {
                println!("{}", c.line());
            }
            if checks.iter().any(|c| !c.passed) {
                return Err(HarnessError::Runtime("self-test failed".into()));
            }
        }
        cmd => {
            let run = Run::open(load_config(&cli.source)?)?;
            info!("run directory {}", run.dir.display());
            let init = |s: Option<u64>| s.unwrap_or(run.cfg.phase1.seed);
            match cmd {
                Command::Collect => run.collect()?,
                Command::TrainRepr { init_seed } => {
                    run.train_repr(init(init_seed))?;
                }
                Command::EvalRepr { init_seed } => {
                    let r = run.eval_repr(init(init_seed))?;
                    println!("group,trained_mse,mean_predictor_mse,ratio");
                    println!(
                        "all,{:.5},{:.5},{:.4}",
                        r.trained.overall_mse,
                        r.mean_predictor.overall_mse,
                        r.overall_ratio()
                    );
                    for (t, m) in r.trained.groups.iter().zip(&r.mean_predictor.groups) {
                        println!("{},{:.5},{:.5},{:.4}", t.0, t.1, m.1, t.1 / m.1);
                    }
                }
                Command::TrainRl { agent, seed, init_seed } => {
                    for s in seeds(&run.cfg, seed) {
                        let id = PolicyId {
                            agent: agent.into(),
                            seed: s,
                            repr_init: init_seed,
                        };
                        eprintln!("training {}", id.tag());
                        run.train_rl(id, &mut Progress)?;
                    }
                }
                Command::Eval { agent, seed, init_seed } => {
                    let agent: Agent = agent.into();
                    let list = if agent == Agent::Baseline { vec![0] } else { seeds(&run.cfg, seed) };
                    for s in list {
                        let id = PolicyId {
                            agent,
                            seed: s,
                            repr_init: init_seed,
                        };
                        let r = run.eval(id)?;
                        println!(
                            "{} laps={:?} second_lap={:?} dnf={} wall_contacts={}",
                            id.tag(),
                            r.lap_times,
                            r.second_lap,
                            r.dnf,
                            r.wall_contacts
                        );
                    }
                }
                Command::Report => {
                    let table = run.report()?;
                    println!("agent,best_lap2_s,best_seed,completed_runs,wall_contacts");
                    for row in table {
                        println!(
                            "{},{},{},{}/{},{}",
                            row.agent.name(),
                            row.best_lap2.map(|t| format!("{t:.3}")).unwrap_or_else(|| "DNF".into()),
                            row.best_seed.map(|s| s.to_string()).unwrap_or_default(),
                            row.completed,
                            row.runs,
                            row.best_run_wall_contacts.map(|c| c.to_string()).unwrap_or_default()
                        );
                    }
                    println!("report written to {}", run.path("report").display());
                }
                Command::Track(_) | Command::Config | Command::Selftest { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

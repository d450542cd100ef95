use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use fesrl::biomech::{CyclingConfig, Plant, RealityGapConfig, StartAssist};
use fesrl::env::Observation;
use fesrl::offline::{
    collect_sessions, evaluate_pattern, finetune, logs_to_dataset, read_sessions, trial_seeds, write_dataset,
    write_eval_csv, write_sessions, CollectOptions, DEFAULT_SKIP_S,
};
use fesrl::pattern::{extract_pattern, pattern_metrics, pattern_svg, ExtractOptions, StimulationPattern};
use fesrl::rl::{Agent, TrainConfig};
use fesrl::train::{train, write_curve_csv};
use fesrl::Error;

const SEED_ENV: &str = "FESRL_SEED";

#[derive(Parser)]
#[command(name = "fesrl", version, about = "Stimulation-pattern learning for FES cycling on a planar simulator")]
struct Cli {
    /// Worker threads for session collection and evaluation trials.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a cycling configuration.
    Validate { config: PathBuf },
    /// Train an agent on the simulator.
    Train {
        config: PathBuf,
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: PathBuf,
        /// Overrides max_episodes from the training file.
        #[arg(long)]
        max_episodes: Option<usize>,
    },
    /// Threshold a trained policy into an ON/OFF pattern.
    Extract {
        agent: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// rad/s
        #[arg(long, default_value_t = 5.0)]
        reference_cadence: f64,
    },
    /// Log pattern-driven sessions with perturbed copies of a pattern.
    Collect {
        config: PathBuf,
        pattern: PathBuf,
        #[command(flatten)]
        plant: PlantArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        sessions: usize,
        /// Seconds per session.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Conservative offline training on logged sessions.
    Finetune {
        agent: PathBuf,
        logs: PathBuf,
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        cql_weight: f64,
        /// Seconds dropped from the start of every session.
        #[arg(long, default_value_t = DEFAULT_SKIP_S)]
        skip: f64,
        /// Also write the experience tuples as CSV.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Drive a pattern open loop and report cadence.
    Evaluate {
        config: PathBuf,
        pattern: PathBuf,
        #[command(flatten)]
        plant: PlantArgs,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Seconds per trial.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-muscle comparison of two patterns.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlantArgs {
    /// Reality-gap perturbation applied on top of the configuration.
    #[arg(long)]
    gap: Option<PathBuf>,
    /// Start sessions without the start-up motor.
    #[arg(long)]
    no_assist: bool,
}

impl PlantArgs {
    fn assist(&self) -> Option<StartAssist> {
        (!self.no_assist).then(StartAssist::default)
    }
}

/// An error plus where in which input it happened.
struct Failure {
    error: Error,
    path: Option<PathBuf>,
    byte_offset: Option<usize>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { error, path: None, byte_offset: None }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        if self.error.is_io_or_parse() {
            2
        } else {
            1
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.error.kind(), "message": self.error.to_string() });
        if let Some(p) = &self.path {
            v["path"] = json!(p.display().to_string());
        }
        if let Some(o) = self.byte_offset {
            v["byte_offset"] = json!(o);
        }
        if let Error::Unreachable { crank_angle_deg, side } = &self.error {
            v["crank_angle_deg"] = json!(crank_angle_deg);
            v["side"] = json!(side);
        }
        v
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn read_text(path: &Path) -> CmdResult<String> {
    fs::read_to_string(path).map_err(|e| Failure { error: e.into(), path: Some(path.into()), byte_offset: None })
}

/// Byte offset of a 1-based line/column position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

fn parse_json<T>(path: &Path, parse: impl FnOnce(&str) -> fesrl::Result<T>) -> CmdResult<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|error| {
        let byte_offset = match &error {
            Error::Json(e) if e.line() > 0 => Some(byte_offset(&text, e.line(), e.column())),
            _ => None,
        };
        Failure { error, path: Some(path.into()), byte_offset }
    })
}

fn load_config(path: &Path) -> CmdResult<CyclingConfig> {
    parse_json(path, CyclingConfig::from_json)
}

fn load_plant(config: &Path, plant: Option<&PlantArgs>) -> CmdResult<Plant> {
    let nominal = Plant::new(load_config(config)?.validate()?);
    match plant.and_then(|p| p.gap.as_deref()) {
        None => Ok(nominal),
        Some(gap) => {
            let gap = parse_json(gap, RealityGapConfig::from_json)?;
            Ok(gap.apply(&nominal)?)
        }
    }
}

fn load_pattern(path: &Path) -> CmdResult<StimulationPattern> {
    parse_json(path, StimulationPattern::from_json)
}

fn load_train_config(path: &Path) -> CmdResult<TrainConfig> {
    let mut tc = parse_json(path, TrainConfig::from_json)?;
    if let Some(seed) = env_seed()? {
        tc.seed = seed;
    }
    Ok(tc)
}

fn load_agent(path: &Path) -> CmdResult<Agent> {
    parse_json(path, Agent::from_json)
}

fn env_seed() -> CmdResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Err(_) => Ok(None),
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}=`{s}` is not an unsigned integer")).into()),
    }
}

fn seed_or_env(flag: u64) -> CmdResult<u64> {
    Ok(env_seed()?.unwrap_or(flag))
}

fn write_file(path: &Path, contents: &str) -> CmdResult<()> {
    fs::write(path, contents).map_err(|e| Failure { error: e.into(), path: Some(path.into()), byte_offset: None })
}

fn create_file(path: &Path) -> CmdResult<fs::File> {
    fs::File::create(path).map_err(|e| Failure { error: e.into(), path: Some(path.into()), byte_offset: None })
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config_paths: Vec<String>,
    seeds: BTreeMap<String, u64>,
    version: String,
    started_unix_s: u64,
    wall_clock_s: f64,
    outputs: Vec<String>,
}

/// What a command produced, for the manifest and the stdout summary.
struct Outcome {
    summary: serde_json::Value,
    inputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<PathBuf>,
    /// Default manifest location; `None` for commands without outputs.
    manifest: Option<PathBuf>,
}

fn manifest_next_to(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn run(cli: &Cli) -> CmdResult<Outcome> {
    match &cli.command {
        Command::Validate { config } => {
            load_config(config)?.validate()?;
            Ok(Outcome {
                summary: json!({ "valid": true }),
                inputs: vec![config.clone()],
                seeds: BTreeMap::new(),
                outputs: vec![],
                manifest: None,
            })
        }
        Command::Train { config, train: train_path, out, curve, max_episodes } => {
            let plant = load_plant(config, None)?;
            let mut tc = load_train_config(train_path)?;
            if let Some(m) = max_episodes {
                tc.max_episodes = *m;
            }
            let outcome = train(&plant, &tc, |p| {
                if let Some(t) = p.test_return {
                    eprintln!("episode {:4}  return {:10.3}  test {:10.3}", p.episode, p.train_return, t);
                }
            })?;
            write_file(out, &outcome.agent.to_json())?;
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &outcome.curve)?;
            write_file(curve, std::str::from_utf8(&buf).expect("csv is utf-8"))?;
            let last_test = outcome.curve.iter().rev().find_map(|p| p.test_return);
            Ok(Outcome {
                summary: json!({
                    "episodes": outcome.curve.len(),
                    "stopped_on_plateau": outcome.stopped_on_plateau,
                    "last_test_return": last_test,
                }),
                inputs: vec![config.clone(), train_path.clone()],
                seeds: BTreeMap::from([("train".into(), tc.seed)]),
                outputs: vec![out.clone(), curve.clone()],
                manifest: Some(manifest_next_to(out)),
            })
        }
        Command::Extract { agent, config, out, svg, threshold, reference_cadence } => {
            let cfg = load_config(config)?.validate()?;
            let agent_path = agent;
            let agent = load_agent(agent_path)?;
            let n = cfg.get().n_muscles_per_leg;
            if agent.n_actions() != n || agent.obs_dim() != Observation::dim(n) {
                return Err(Error::ShapeMismatch { expected: n, got: agent.n_actions() }.into());
            }
            let opts = ExtractOptions { threshold: *threshold, reference_cadence: *reference_cadence, ..Default::default() };
            let pattern = extract_pattern(&agent.actor, &opts)?;
            write_file(out, &pattern.to_json())?;
            let mut outputs = vec![out.clone()];
            if let Some(svg) = svg {
                write_file(svg, &pattern_svg(&pattern))?;
                outputs.push(svg.clone());
            }
            let arcs: Vec<f64> = (0..pattern.n_muscles()).map(|i| pattern.on_arc(i)).collect();
            Ok(Outcome {
                summary: json!({ "muscles": pattern.names(), "on_arc_deg": arcs }),
                inputs: vec![agent_path.clone(), config.clone()],
                seeds: BTreeMap::new(),
                outputs,
                manifest: Some(manifest_next_to(out)),
            })
        }
        Command::Collect { config, pattern, plant, out, sessions, duration, seed } => {
            let sim = load_plant(config, Some(plant))?;
            let base = load_pattern(pattern)?;
            let seed = seed_or_env(*seed)?;
            let opts = CollectOptions {
                n_sessions: *sessions,
                duration_s: *duration,
                seed,
                assist: plant.assist(),
                ..Default::default()
            };
            let logs = collect_sessions(&sim, &base, &opts)?;
            let outputs = write_sessions(out, &logs).map_err(|error| Failure { error, path: Some(out.clone()), byte_offset: None })?;
            let mut inputs = vec![config.clone(), pattern.clone()];
            inputs.extend(plant.gap.clone());
            Ok(Outcome {
                summary: json!({ "sessions": logs.len(), "rows": logs.iter().map(|l| l.rows.len()).sum::<usize>() }),
                inputs,
                seeds: BTreeMap::from([("collect".into(), seed)]),
                outputs,
                manifest: Some(out.join("manifest.json")),
            })
        }
        Command::Finetune { agent, logs, train: train_path, out, cql_weight, skip, dataset } => {
            let agent_path = agent;
            let agent = load_agent(agent_path)?;
            let mut tc = load_train_config(train_path)?;
            tc.cql_weight = *cql_weight;
            let sessions = read_sessions(logs).map_err(|error| Failure { error, path: Some(logs.clone()), byte_offset: None })?;
            let ds = logs_to_dataset(&sessions, tc.beta, *skip)?;
            let mut outputs = vec![out.clone()];
            if let Some(path) = dataset {
                outputs.push(path.clone());
                outputs.push(write_dataset(path, &ds)?);
            }
            let (tuned, report) = finetune(&agent, &ds, &tc)?;
            write_file(out, &tuned.to_json())?;
            Ok(Outcome {
                summary: json!({
                    "tuples": ds.tuples.len(),
                    "gradient_steps": tc.finetune_steps,
                    "critic_loss": report.stats.critic_loss,
                    "cql_term": report.stats.cql_term,
                    "simulator_steps": report.sim_steps,
                }),
                inputs: vec![agent_path.clone(), logs.clone(), train_path.clone()],
                seeds: BTreeMap::from([("finetune".into(), tc.seed)]),
                outputs,
                manifest: Some(manifest_next_to(out)),
            })
        }
        Command::Evaluate { config, pattern, plant, trials, duration, seed, out } => {
            let sim = load_plant(config, Some(plant))?;
            let p = load_pattern(pattern)?;
            let seed = seed_or_env(*seed)?;
            let assist = plant.assist();
            let report = evaluate_pattern(&sim, &p, *duration, &trial_seeds(seed, *trials), assist.as_ref())?;
            write_eval_csv(create_file(out)?, &report)?;
            let mut inputs = vec![config.clone(), pattern.clone()];
            inputs.extend(plant.gap.clone());
            Ok(Outcome {
                summary: json!({
                    "mean_rpm": report.mean_rpm,
                    "trials": report.trials,
                }),
                inputs,
                seeds: BTreeMap::from([("evaluate".into(), seed)]),
                outputs: vec![out.clone()],
                manifest: Some(manifest_next_to(out)),
            })
        }
        Command::Compare { a, b, out } => {
            let (pa, pb) = (load_pattern(a)?, load_pattern(b)?);
            let metrics = pattern_metrics(&pa, &pb)?;
            let body = json!({
                "a": { "path": a.display().to_string(), "source": pa.source },
                "b": { "path": b.display().to_string(), "source": pb.source },
                "muscles": metrics,
            });
            write_file(out, &(serde_json::to_string_pretty(&body).map_err(Error::from)? + "\n"))?;
            Ok(Outcome {
                summary: json!({ "muscles": metrics.len() }),
                inputs: vec![a.clone(), b.clone()],
                seeds: BTreeMap::new(),
                outputs: vec![out.clone()],
                manifest: Some(manifest_next_to(out)),
            })
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Train { .. } => "train",
        Command::Extract { .. } => "extract",
        Command::Collect { .. } => "collect",
        Command::Finetune { .. } => "finetune",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("{}", json!({ "error": "invalid_argument", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    }
    let started = SystemTime::now();
    let clock = Instant::now();
    let outcome = match run(&cli) {
        Ok(o) => o,
        Err(f) => {
            if matches!(cli.command, Command::Validate { .. }) && !f.error.is_io_or_parse() {
                let mut v = f.to_json();
                v["valid"] = json!(false);
                println!("{v}");
            }
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code());
        }
    };
    if let Some(path) = cli.manifest.clone().or(outcome.manifest.clone()) {
        let manifest = RunManifest {
            command: command_name(&cli.command).into(),
            args: std::env::args().skip(1).collect(),
            config_paths: display(&outcome.inputs),
            seeds: outcome.seeds.clone(),
            version: match option_env!("FESRL_SOURCE_REV") {
                Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
                None => env!("CARGO_PKG_VERSION").to_string(),
            },
            started_unix_s: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: clock.elapsed().as_secs_f64(),
            outputs: display(&outcome.outputs),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        if let Err(f) = write_file(&path, &text) {
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code());
        }
    }
    println!("{}", outcome.summary);
    ExitCode::SUCCESS
}

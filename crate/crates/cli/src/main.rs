//! `hivekit`: command-line entry point for listing, checking, collecting,
//! benchmarking, teleoperating, replaying, training and evaluating.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hivekit::agents::{evaluate_policy, load_bc_model, save_bc_model, train_bc, PolicyRef, RandomPolicy};
use hivekit::agents::{collect_trajectories, policy_rng, Policy};
use hivekit::collector::{benchmark_throughput, collect_async, CollectorConfig, ObsMode, BENCH_SEEDS};
use hivekit::dataset::{build_manifest, replay_container, write_trajectories, ContainerReader, DatasetError};
use hivekit::teleop::{TeleopOptions, TeleopServer, DEFAULT_RATE_HZ};
use hivekit::{parse_env_config, EnvConfig, EnvRegistry, JSON_SCHEMA_VERSION};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hivekit", version, about = "Robot-learning environments, datasets and baselines")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Environment config file or directory of `.cfg` files (overrides HIVEKIT_CONFIG_DIR).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (artifact or JSON report, depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List registered environments.
    List,
    /// Construct, reset and step every registered environment once.
    Check,
    /// Collect rollouts into a container.
    Collect {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "expert")]
        policy: String,
        /// Step budget for multi-worker collection.
        #[arg(long, conflicts_with = "episodes")]
        steps: Option<u64>,
        /// Record exactly this many complete episodes (indices 0..n).
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 1000)]
        batch: usize,
    },
    /// Measure collection throughput.
    Bench {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = ObsModeArg::State)]
        obs_mode: ObsModeArg,
        #[arg(long, default_value_t = 20_000)]
        steps: u64,
    },
    /// Serve a teleoperation session over websocket; `--out` records demonstrations.
    Teleop {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        /// Arrow keys move the end effector (reach tasks).
        #[arg(long)]
        ee_space: bool,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Replay every trajectory of a container and report state discrepancies.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        /// Write the JSON replay report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Largest accepted final-state discrepancy.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Fit a ridge behavior-cloning model.
    TrainBc {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
    },
    /// Evaluate a policy's success rate.
    Eval {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "expert")]
        policy: String,
        #[arg(long, default_value_t = 25)]
        episodes: usize,
        /// Exit with the verification code when the success rate is below this.
        #[arg(long)]
        min_success: Option<f64>,
    },
    /// Summarize containers as a dataset manifest.
    Manifest {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObsModeArg {
    State,
    Visual,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Verify(String),
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Verify(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    match cli.command {
        Command::List => list(g),
        Command::Check => check(g),
        Command::Collect { env, policy, steps, episodes, workers, batch } => {
            collect(g, &env, &policy, steps, episodes, workers, batch)
        }
        Command::Bench { env, workers, obs_mode, steps } => bench(g, &env, workers, obs_mode, steps),
        Command::Teleop { env, port, rate, ee_space, duration } => teleop(g, &env, port, rate, ee_space, duration),
        Command::Replay { dataset, report, tolerance } => replay(g, &dataset, report.as_deref(), tolerance),
        Command::TrainBc { dataset, lambda } => train(g, &dataset, lambda),
        Command::Eval { env, policy, episodes, min_success } => eval(g, &env, &policy, episodes, min_success),
        Command::Manifest { inputs } => manifest(g, &inputs),
    }
}

/// Builtin fixtures, `HIVEKIT_CONFIG_DIR`, or `--config` (a directory, or a
/// single file that adds or replaces one environment).
fn registry(g: &Global) -> Result<EnvRegistry, Failure> {
    let dir = g.config.clone().or_else(|| std::env::var_os("HIVEKIT_CONFIG_DIR").map(PathBuf::from));
    let Some(path) = dir else {
        return Ok(EnvRegistry::builtin());
    };
    if path.is_dir() {
        return EnvRegistry::from_dir(&path).map_err(runtime);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_env_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let builtin = EnvRegistry::builtin();
    let mut reg = EnvRegistry::new();
    for id in builtin.ids().filter(|id| *id != cfg.env_id) {
        reg.register((*builtin.config(id).map_err(runtime)?).clone()).map_err(runtime)?;
    }
    reg.register(cfg).map_err(runtime)?;
    Ok(reg)
}

fn env_config(reg: &EnvRegistry, id: &str) -> Result<Arc<EnvConfig>, Failure> {
    reg.config(id).map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_policy(s: &str) -> Result<PolicyRef, Failure> {
    PolicyRef::parse(s).ok_or_else(|| Failure::Usage(format!("unknown policy '{s}' (expected random, expert or bc:<path>)")))
}

fn write_json(path: &Path, v: &Value) -> Outcome {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("json serializes") + "\n")
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Prints `text` or, with `--json`, the document; `--out` (when it names the
/// report) also receives the document.
fn emit(g: &Global, doc: &Value, text: &str, out_is_report: bool) -> Outcome {
    let body = if g.json { serde_json::to_string_pretty(doc).expect("json serializes") + "\n" } else { text.to_owned() };
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(body.as_bytes()).and_then(|()| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(Failure::Runtime(format!("cannot write to stdout: {e}")));
        }
    }
    match (&g.out, out_is_report) {
        (Some(p), true) => write_json(p, doc),
        _ => Ok(()),
    }
}

fn list(g: &Global) -> Outcome {
    let reg = registry(g)?;
    let mut envs = Vec::new();
    let mut text = String::new();
    for id in reg.ids() {
        let c = reg.config(id).map_err(runtime)?;
        let sensors: Vec<&str> = c.sensor_names().collect();
        text.push_str(&format!(
            "{id:<22} {:<16} {:<9} {:<8} {}\n",
            format!("{:?}", c.task.kind),
            format!("{:?}", c.control_mode),
            format!("{:?}", c.backend),
            sensors.join(",")
        ));
        envs.push(json!({
            "env_id": id,
            "task": c.task.kind,
            "control_mode": c.control_mode,
            "backend": c.backend,
            "joints": c.joint_count(),
            "horizon": c.horizon,
            "sensors": sensors,
        }));
    }
    let doc = json!({ "schema_version": JSON_SCHEMA_VERSION, "n_envs": envs.len(), "envs": envs });
    emit(g, &doc, &text, true)
}

fn check(g: &Global) -> Outcome {
    let reg = registry(g)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    let mut failed = 0;
    for id in reg.ids() {
        let result = (|| -> Result<usize, String> {
            let cfg = reg.config(id).map_err(|e| e.to_string())?;
            let mut env = reg.make_seeded(id, g.seed).map_err(|e| e.to_string())?;
            let obs = env.reset().map_err(|e| e.to_string())?;
            let policy = RandomPolicy::new(&cfg);
            let mut rng = policy_rng(env.current_episode_seed());
            let action = policy.act(&obs, &mut rng).map_err(|e| e.to_string())?;
            let step = env.step(&action).map_err(|e| e.to_string())?;
            if !step.reward.is_finite() {
                return Err("non-finite reward".into());
            }
            Ok(step.obs.keys().count())
        })();
        match result {
            Ok(n) => {
                text.push_str(&format!("ok    {id} ({n} sensors)\n"));
                rows.push(json!({ "env_id": id, "ok": true }));
            }
            Err(e) => {
                failed += 1;
                text.push_str(&format!("FAIL  {id}: {e}\n"));
                rows.push(json!({ "env_id": id, "ok": false, "error": e }));
            }
        }
    }
    let n = reg.len();
    text.push_str(&format!("{} of {n} environments passed\n", n - failed));
    let doc = json!({
        "schema_version": JSON_SCHEMA_VERSION,
        "n_registered": n,
        "n_checked": rows.len(),
        "n_passed": n - failed,
        "envs": rows,
    });
    emit(g, &doc, &text, true)?;
    if failed > 0 || rows.len() != n {
        return Err(Failure::Verify(format!("{failed} of {n} environments failed")));
    }
    Ok(())
}

fn collect(
    g: &Global,
    env_id: &str,
    policy: &str,
    steps: Option<u64>,
    episodes: Option<usize>,
    workers: usize,
    batch: usize,
) -> Outcome {
    let reg = registry(g)?;
    let policy = parse_policy(policy)?;
    let out = g.out.clone().ok_or_else(|| Failure::Usage("collect requires --out <container path>".into()))?;
    let base = env_config(&reg, env_id)?;
    let mut cfg = (*base).clone();
    cfg.seed = g.seed;
    let (mut trajs, stats) = match (steps, episodes) {
        (_, Some(n)) => {
            let p = policy.instantiate(&cfg).map_err(runtime)?;
            let mut env = hivekit::Env::new(Arc::new(cfg.clone())).map_err(runtime)?;
            let trajs = collect_trajectories(&mut env, p.as_ref(), 0, n, policy.source()).map_err(runtime)?;
            let steps: usize = trajs.iter().map(|t| t.len()).sum();
            (trajs, json!({ "mode": "episodes", "steps_collected": steps }))
        }
        (Some(total), None) => {
            let mut cc = CollectorConfig::new(env_id, workers, batch, total, policy.clone(), g.seed);
            cc.record_trajectories = true;
            let mut trajs = Vec::new();
            let report = collect_async(&reg, &cc, |b| trajs.extend(b.trajectories)).map_err(runtime)?;
            (trajs, json!({ "mode": "steps", "collection": report }))
        }
        (None, None) => return Err(Failure::Usage("collect requires --steps or --episodes".into())),
    };
    trajs.sort_by_key(|t| t.seed);
    let reader = write_trajectories(&out, &cfg, &trajs).map_err(runtime)?;
    let successes = trajs.iter().filter(|t| t.final_success()).count();
    let doc = json!({
        "schema_version": JSON_SCHEMA_VERSION,
        "env_id": env_id,
        "policy": policy.to_string(),
        "seed": g.seed,
        "n_trajectories": reader.len(),
        "n_successful": successes,
        "out": out.display().to_string(),
        "details": stats,
    });
    let text = format!("wrote {} trajectories ({successes} successful) to {}\n", reader.len(), out.display());
    emit(g, &doc, &text, false)
}

fn bench(g: &Global, env_id: &str, workers: usize, mode: ObsModeArg, steps: u64) -> Outcome {
    let reg = registry(g)?;
    env_config(&reg, env_id)?;
    let mode = match mode {
        ObsModeArg::State => ObsMode::State,
        ObsModeArg::Visual => ObsMode::Visual,
    };
    let seeds: Vec<u64> = BENCH_SEEDS.iter().map(|s| s + g.seed).collect();
    let r = benchmark_throughput(&reg, env_id, workers, steps, mode, &seeds).map_err(runtime)?;
    let doc = serde_json::to_value(&r).expect("report serializes");
    let text = format!(
        "{} workers={} mode={:?}: {:.0} ± {:.0} steps/s over {} runs\n",
        r.env_id,
        r.n_workers,
        r.obs_mode,
        r.steps_per_sec_mean,
        r.steps_per_sec_std,
        r.runs_steps_per_sec.len()
    );
    emit(g, &doc, &text, true)
}

fn teleop(g: &Global, env_id: &str, port: u16, rate: f64, ee_space: bool, duration: Option<f64>) -> Outcome {
    let reg = registry(g)?;
    let mut cfg = (*env_config(&reg, env_id)?).clone();
    cfg.seed = g.seed;
    let opts = TeleopOptions { rate_hz: rate, ee_space, record_path: g.out.clone(), input_map: None };
    let server = TeleopServer::spawn(Arc::new(cfg), &format!("127.0.0.1:{port}"), opts).map_err(runtime)?;
    eprintln!("teleop: {env_id} at {rate} Hz on {}", server.url());
    let start = Instant::now();
    while duration.is_none_or(|d| start.elapsed().as_secs_f64() < d) {
        std::thread::sleep(Duration::from_millis(50));
    }
    let stats = server.stats();
    let n_recorded = server.recorded().len();
    server.shutdown();
    let doc = json!({
        "schema_version": JSON_SCHEMA_VERSION,
        "env_id": env_id,
        "ticks": stats.ticks,
        "mean_tick_interval_s": stats.mean_tick_interval_s,
        "events": stats.events,
        "n_recorded": n_recorded,
    });
    let text = format!("{} ticks, {n_recorded} trajectories recorded\n", stats.ticks);
    emit(g, &doc, &text, false)
}

fn replay(g: &Global, dataset: &Path, report: Option<&Path>, tolerance: f64) -> Outcome {
    let reader = ContainerReader::open(dataset).map_err(|e| match e {
        DatasetError::DigestMismatch | DatasetError::NotRoboSet | DatasetError::Corrupt(_) => Failure::Verify(e.to_string()),
        e => runtime(e),
    })?;
    let expected = match &g.config {
        Some(_) => Some(env_config(&registry(g)?, &reader.config().env_id)?),
        None => None,
    };
    let summary = replay_container(&reader, expected.as_deref()).map_err(|e| match e {
        DatasetError::DigestMismatch => Failure::Verify(e.to_string()),
        e => runtime(e),
    })?;
    let doc = serde_json::to_value(&summary).expect("summary serializes");
    if let Some(p) = report {
        write_json(p, &doc)?;
    }
    let text = format!(
        "{}: {} trajectories, max final_state_diff {:e}, max per-step diff {:e}\n{}",
        summary.env_id,
        summary.n_trajectories,
        summary.max_final_state_diff,
        summary.max_per_step_diff,
        summary.histogram_text()
    );
    emit(g, &doc, &text, true)?;
    if summary.max_final_state_diff > tolerance {
        return Err(Failure::Verify(format!(
            "max final_state_diff {:e} exceeds tolerance {tolerance:e}",
            summary.max_final_state_diff
        )));
    }
    Ok(())
}

fn train(g: &Global, dataset: &Path, lambda: f64) -> Outcome {
    let out = g.out.clone().ok_or_else(|| Failure::Usage("train-bc requires --out <model path>".into()))?;
    let reader = ContainerReader::open(dataset).map_err(runtime)?;
    let model = train_bc(&reader, lambda).map_err(runtime)?;
    save_bc_model(&model, &out).map_err(runtime)?;
    let trajs = reader.read_all().map_err(runtime)?;
    let loss = model.training_loss(&trajs).map_err(runtime)?;
    let samples: usize = trajs.iter().map(|t| t.len()).sum();
    let doc = json!({
        "schema_version": JSON_SCHEMA_VERSION,
        "env_id": reader.config().env_id,
        "n_trajectories": trajs.len(),
        "n_samples": samples,
        "obs_keys": model.keys.iter().map(|(k, _)| k).collect::<Vec<_>>(),
        "obs_dim": model.obs_dim(),
        "action_dim": model.action_dim(),
        "lambda": lambda,
        "training_loss": loss,
        "out": out.display().to_string(),
    });
    let text = format!("trained on {samples} samples, loss {loss:.6e}, wrote {}\n", out.display());
    emit(g, &doc, &text, false)
}

fn eval(g: &Global, env_id: &str, policy: &str, episodes: usize, min_success: Option<f64>) -> Outcome {
    let reg = registry(g)?;
    let cfg = env_config(&reg, env_id)?;
    let pref = parse_policy(policy)?;
    if let PolicyRef::Bc(path) = &pref {
        load_bc_model(path).map_err(runtime)?;
    }
    let p = pref.instantiate(&cfg).map_err(runtime)?;
    let r = evaluate_policy(p.as_ref(), &cfg, episodes, g.seed).map_err(runtime)?;
    let doc = serde_json::to_value(&r).expect("report serializes");
    let text = format!(
        "{env_id} {pref}: success_rate {:.3} over {} episodes, mean return {:.3}\n",
        r.success_rate, r.n_episodes, r.mean_return
    );
    emit(g, &doc, &text, true)?;
    match min_success {
        Some(m) if r.success_rate < m => {
            Err(Failure::Verify(format!("success_rate {:.3} below {m}", r.success_rate)))
        }
        _ => Ok(()),
    }
}

fn manifest(g: &Global, inputs: &[PathBuf]) -> Outcome {
    let m = build_manifest(inputs).map_err(runtime)?;
    let doc: Value = serde_json::from_str(&m.to_json()).expect("manifest json");
    emit(g, &doc, &format!("{m}"), true)
}

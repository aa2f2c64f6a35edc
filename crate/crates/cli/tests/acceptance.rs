//! End-to-end acceptance suite. Prints one PASS, FAIL or SKIP line per
//! criterion and exits non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hivekit::agents::{
    collect_trajectories, evaluate_in_env, evaluate_policy, policy_rng, run_episode, scripted_expert, train_bc_from,
    BcPolicy, Policy, RandomPolicy,
};
use hivekit::collector::{benchmark_throughput, collect_async, CollectorConfig, ObsMode, BENCH_SEEDS};
use hivekit::dataset::{replay_container, write_trajectories, ContainerReader, DatasetError, Series, Source, Trajectory};
use hivekit::fixtures::STATE_ENV_IDS;
use hivekit::rng::CounterRng;
use hivekit::robot::mock::{MockHardwareServer, MockMode};
use hivekit::{Backend, Env, EnvConfig, EnvRegistry, RobotCommand, SensorFrame};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Verdict, String>;

fn pass(s: impl Into<String>) -> Check {
    Ok(Verdict::Pass(s.into()))
}

fn fail(s: impl Into<String>) -> Check {
    Ok(Verdict::Fail(s.into()))
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn registry() -> EnvRegistry {
    EnvRegistry::builtin()
}

fn all_ids() -> Vec<String> {
    registry().ids().map(str::to_owned).collect()
}

fn frame_bits(f: &SensorFrame, out: &mut Vec<u64>) {
    for k in f.keys() {
        out.extend(f.get(k).unwrap().iter().map(|v| v.to_bits()));
    }
}

/// Bit pattern of a 200-step run driven by a fixed random command script.
fn scripted_run(id: &str, seed: u64) -> Result<Vec<u64>, String> {
    let reg = registry();
    let cfg = reg.config(id).map_err(e)?;
    let mut env = reg.make_seeded(id, seed).map_err(e)?;
    let policy = RandomPolicy::new(&cfg);
    let mut script = CounterRng::new(seed, 99);
    let mut bits = Vec::new();
    frame_bits(&env.reset().map_err(e)?, &mut bits);
    for _ in 0..200 {
        let cmd = policy.act(&SensorFrame::default(), &mut script).map_err(e)?;
        let r = env.step(&cmd).map_err(e)?;
        frame_bits(&r.obs, &mut bits);
        bits.push(r.reward.to_bits());
        bits.push(u64::from(r.success));
        if let Some(s) = env.snapshot() {
            bits.extend(s.state_vector().iter().map(|v| v.to_bits()));
        }
        if r.done {
            frame_bits(&env.reset().map_err(e)?, &mut bits);
        }
    }
    Ok(bits)
}

fn determinism() -> Check {
    let ids = all_ids();
    for id in &ids {
        if scripted_run(id, 17)? != scripted_run(id, 17)? {
            return fail(format!("{id} diverged between identical runs"));
        }
    }
    pass(format!("{} environments bit-identical over 200 steps", ids.len()))
}

fn replay_fidelity() -> Check {
    let reg = registry();
    let dir = tempfile::tempdir().map_err(e)?;
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for id in STATE_ENV_IDS {
        let cfg = reg.config(id).map_err(e)?;
        let expert = scripted_expert(&cfg).map_err(e)?;
        let mut env = reg.make(id).map_err(e)?;
        let trajs = collect_trajectories(&mut env, &expert, 0, 25, Source::ExpertPolicy).map_err(e)?;
        let path = dir.path().join(format!("{id}.rsl"));
        write_trajectories(&path, &cfg, &trajs).map_err(e)?;
        let reader = ContainerReader::open(&path).map_err(e)?;
        if reader.read_all().map_err(e)? != trajs {
            return fail(format!("{id}: read(write(T)) differs"));
        }
        let summary = replay_container(&reader, Some(&cfg)).map_err(e)?;
        worst = worst.max(summary.max_final_state_diff);
        lines.push(format!("{id}: {} trajectories\n{}", summary.n_trajectories, summary.histogram_text().trim_end()));
    }
    for l in &lines {
        println!("    {}", l.replace('\n', "\n    "));
    }
    if worst == 0.0 {
        pass("25 expert trajectories per task replay with max final_state_diff 0")
    } else {
        fail(format!("max final_state_diff {worst:e}"))
    }
}

fn max_abs_diff(a: &SensorFrame, b: &SensorFrame) -> f64 {
    if a.keys().ne(b.keys()) {
        return f64::INFINITY;
    }
    a.keys()
        .flat_map(|k| a.get(k).unwrap().iter().zip(b.get(k).unwrap()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn parity() -> Check {
    let reg = registry();
    let mut worst: f64 = 0.0;
    let ids = all_ids();
    for id in &ids {
        let cfg = reg.config(id).map_err(e)?;
        let server = MockHardwareServer::spawn((*cfg).clone(), "127.0.0.1:0", MockMode::Lockstep).map_err(e)?;
        let mut hw_cfg = (*cfg).clone();
        hw_cfg.backend = Backend::Hardware;
        hw_cfg.hardware_endpoint = Some(server.local_addr().to_string());
        let mut sim = Env::new(cfg.clone()).map_err(e)?;
        let mut hw = Env::new(Arc::new(hw_cfg)).map_err(e)?;
        let policy = RandomPolicy::new(&cfg);
        let mut script = CounterRng::new(5, 99);
        worst = worst.max(max_abs_diff(&sim.reset().map_err(e)?, &hw.reset().map_err(e)?));
        for _ in 0..200 {
            let cmd = policy.act(&SensorFrame::default(), &mut script).map_err(e)?;
            let a = sim.step(&cmd).map_err(e)?;
            let b = hw.step(&cmd).map_err(e)?;
            worst = worst.max(max_abs_diff(&a.obs, &b.obs));
            if a.success != b.success || a.done != b.done {
                return fail(format!("{id}: success/done flags differ"));
            }
            if a.done {
                worst = worst.max(max_abs_diff(&sim.reset().map_err(e)?, &hw.reset().map_err(e)?));
            }
        }
        drop(hw);
        server.shutdown();
    }
    if worst <= 1e-9 {
        pass(format!("{} environments, 200 steps each, max |sim - hardware| = {worst:e}", ids.len()))
    } else {
        fail(format!("max |sim - hardware| = {worst:e}"))
    }
}

fn decoupling() -> Check {
    let reg = registry();
    let mut rates = Vec::new();
    for id in STATE_ENV_IDS {
        let cfg = reg.config(id).map_err(e)?;
        let expert = scripted_expert(&cfg).map_err(e)?;
        let mut plain = reg.make(id).map_err(e)?;
        let mut zeroed = reg.make(id).map_err(e)?;
        zeroed.set_reward_fn(Arc::new(|_| 0.0));
        for i in 0..25 {
            let (_, a) = run_episode(&mut plain, &expert, i, Some(Source::ExpertPolicy)).map_err(e)?;
            let (_, b) = run_episode(&mut zeroed, &expert, i, Some(Source::ExpertPolicy)).map_err(e)?;
            let (a, b) = (a.unwrap(), b.unwrap());
            if a.successes != b.successes {
                return fail(format!("{id} episode {i}: success flags changed"));
            }
            if b.rewards.iter().any(|&r| r != 0.0) {
                return fail(format!("{id}: injected reward not applied"));
            }
        }
        let base = evaluate_in_env(&expert, &mut reg.make(id).map_err(e)?, 25).map_err(e)?;
        let mut env = reg.make(id).map_err(e)?;
        env.set_reward_fn(Arc::new(|_| 0.0));
        let zero = evaluate_in_env(&expert, &mut env, 25).map_err(e)?;
        if base.success_rate != zero.success_rate || zero.mean_return != 0.0 {
            return fail(format!("{id}: success rate {} vs {}", base.success_rate, zero.success_rate));
        }
        rates.push(format!("{id} {:.2}", base.success_rate));
    }
    pass(format!("success unchanged under zero reward ({})", rates.join(", ")))
}

fn collector() -> Check {
    let reg = registry();
    let cfg = CollectorConfig::new("reach-v0", 8, 500, 100_000, hivekit::agents::PolicyRef::Random, 0);
    let mut seen = std::collections::BTreeSet::new();
    let mut steps = 0u64;
    let mut dupes = 0;
    let report = collect_async(&reg, &cfg, |b| {
        if !seen.insert((b.worker_id, b.batch_seq)) {
            dupes += 1;
        }
        steps += b.len() as u64;
    })
    .map_err(e)?;
    if steps != 100_000 || report.steps_delivered != 100_000 || dupes > 0 {
        return fail(format!("delivered {steps} steps with {dupes} duplicate batches"));
    }
    for w in 0..8 {
        let n = seen.iter().filter(|(id, _)| *id == w).count() as u64;
        if !seen.iter().filter(|(id, _)| *id == w).map(|(_, s)| *s).eq(0..n) {
            return fail(format!("worker {w} batch sequence has gaps"));
        }
    }

    let state = benchmark_throughput(&reg, "reach-v0", 1, 20_000, ObsMode::State, &BENCH_SEEDS).map_err(e)?;
    let visual = benchmark_throughput(&reg, "reach-v0", 1, 5_000, ObsMode::Visual, &BENCH_SEEDS).map_err(e)?;
    let ratio = state.steps_per_sec_mean / visual.steps_per_sec_mean;
    let base = format!(
        "100000 steps from 8 workers, none lost or duplicated; state {:.0} vs visual {:.0} steps/s, ratio {ratio:.1}",
        state.steps_per_sec_mean, visual.steps_per_sec_mean
    );
    if ratio <= 2.0 {
        return fail(format!("{base}; ratio must exceed 2"));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 8 {
        return Ok(Verdict::Skip(format!("{base}; 8-worker scaling needs 8 cores, host has {cores}")));
    }
    let one = benchmark_throughput(&reg, "reach-v0", 1, 40_000, ObsMode::State, &BENCH_SEEDS).map_err(e)?;
    let eight = benchmark_throughput(&reg, "reach-v0", 8, 160_000, ObsMode::State, &BENCH_SEEDS).map_err(e)?;
    let speedup = eight.steps_per_sec_mean / one.steps_per_sec_mean;
    if speedup >= 4.0 {
        pass(format!("{base}; 8-worker speedup {speedup:.1}x"))
    } else {
        fail(format!("{base}; 8-worker speedup {speedup:.1}x below 4x"))
    }
}

/// A `t`-row series of width `1..=max_dim`.
fn random_series(rng: &mut CounterRng, t: usize, max_dim: usize) -> Series {
    let dim = 1 + rng.below(max_dim);
    let data = (0..t * dim)
        .map(|_| match rng.below(10) {
            0 => -0.0,
            1 => f64::MAX,
            2 => f64::MIN_POSITIVE / 8.0,
            _ => rng.uniform_range(-1e6, 1e6),
        })
        .collect();
    Series { dim, data }
}

fn random_trajectory(rng: &mut CounterRng, base: &Trajectory) -> Trajectory {
    let t = rng.below(15);
    let mut traj = base.clone();
    traj.seed = rng.next_u64();
    traj.observations = (0..rng.below(4))
        .map(|i| (format!("s{i}"), random_series(rng, t, 4)))
        .collect();
    traj.actions = random_series(rng, t, 4);
    traj.rewards = random_series(rng, t, 1).data;
    traj.successes = (0..t).map(|_| rng.below(2) == 1).collect();
    traj.states = random_series(rng, t, 6);
    traj.source = [Source::ExpertPolicy, Source::HumanTeleop, Source::Scripted, Source::Random][rng.below(4)];
    traj.metadata = (0..rng.below(3)).map(|i| (format!("k{i}"), format!("v{}", rng.below(1000)))).collect();
    traj
}

fn dataset_format() -> Check {
    let reg = registry();
    let cfg = reg.config("reach-v0").map_err(e)?;
    let mut env = reg.make("reach-v0").map_err(e)?;
    let expert = scripted_expert(&cfg).map_err(e)?;
    let base = collect_trajectories(&mut env, &expert, 0, 1, Source::ExpertPolicy).map_err(e)?.remove(0);
    let dir = tempfile::tempdir().map_err(e)?;
    let mut rng = CounterRng::new(2024, 7);
    for case in 0..200 {
        let n = rng.below(6);
        let trajs: Vec<Trajectory> = (0..n).map(|_| random_trajectory(&mut rng, &base)).collect();
        let path = dir.path().join(format!("c{case}.rsl"));
        write_trajectories(&path, &cfg, &trajs).map_err(e)?;
        let reader = ContainerReader::open(&path).map_err(e)?;
        let scan = reader.read_all().map_err(e)?;
        if scan != trajs {
            return fail(format!("case {case}: read(write(T)) != T"));
        }
        for k in (0..n).rev() {
            if reader.read(k).map_err(e)? != scan[k] {
                return fail(format!("case {case}: random access {k} differs from scan"));
            }
        }
    }
    let path = dir.path().join("tampered.rsl");
    write_trajectories(&path, &cfg, std::slice::from_ref(&base)).map_err(e)?;
    let mut bytes = std::fs::read(&path).map_err(e)?;
    let needle = format!("horizon = {}", cfg.horizon);
    let at = bytes.windows(needle.len()).position(|w| w == needle.as_bytes()).ok_or("config text not found")?;
    bytes[at + needle.len() - 1] ^= 1;
    std::fs::write(&path, bytes).map_err(e)?;
    if !matches!(ContainerReader::open(&path), Err(DatasetError::DigestMismatch)) {
        return fail("tampered config was accepted");
    }
    let reader = ContainerReader::open(&dir.path().join("c0.rsl")).map_err(e)?;
    let push = reg.config("push-v0").map_err(e)?;
    if !matches!(replay_container(&reader, Some(&push)), Err(DatasetError::DigestMismatch)) {
        return fail("replay against another config was accepted");
    }
    pass("200 randomized sets round-trip, random access equals scan, digest mismatch refused")
}

fn bc_pipeline() -> Check {
    let reg = registry();
    let cfg = reg.config("reach-v0").map_err(e)?;
    let expert = scripted_expert(&cfg).map_err(e)?;
    let mut env = reg.make("reach-v0").map_err(e)?;
    let trajs = collect_trajectories(&mut env, &expert, 0, 75, Source::ExpertPolicy).map_err(e)?;
    let dir = tempfile::tempdir().map_err(e)?;
    let path = dir.path().join("reach.rsl");
    write_trajectories(&path, &cfg, &trajs).map_err(e)?;
    let model = hivekit::agents::train_bc(&ContainerReader::open(&path).map_err(e)?, 1e-3).map_err(e)?;
    let direct = train_bc_from(&trajs, model.keys.clone(), cfg.control_mode, 1e-3).map_err(e)?;
    if direct.w != model.w {
        return fail("training from the container and from memory disagree");
    }
    let bc = BcPolicy::new(model, &cfg).map_err(e)?;
    let eval_seed = 1000;
    let bc_rate = evaluate_policy(&bc, &cfg, 25, eval_seed).map_err(e)?.success_rate;
    let random_rate = evaluate_policy(&RandomPolicy::new(&cfg), &cfg, 25, eval_seed).map_err(e)?.success_rate;
    let detail = format!("BC success {bc_rate:.2}, random {random_rate:.2} over 25 episodes at seed {eval_seed}");
    if bc_rate >= 0.8 && random_rate <= 0.10 {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn with_sensors(cfg: &EnvConfig, sigma: f64, delay: usize, seed: u64) -> Arc<EnvConfig> {
    let mut c = cfg.clone();
    c.seed = seed;
    for s in &mut c.sensors {
        s.noise_sigma = sigma;
        s.delay_steps = delay;
    }
    Arc::new(c)
}

fn sensor_run(cfg: Arc<EnvConfig>, steps: usize) -> Result<Vec<SensorFrame>, String> {
    let policy = RandomPolicy::new(&cfg);
    let mut env = Env::new(cfg).map_err(e)?;
    let mut rng = policy_rng(3);
    let mut frames = vec![env.reset().map_err(e)?];
    for _ in 0..steps {
        let cmd: RobotCommand = policy.act(&SensorFrame::default(), &mut rng).map_err(e)?;
        frames.push(env.step(&cmd).map_err(e)?.obs);
    }
    Ok(frames)
}

fn sensor_pipeline() -> Check {
    let cfg = registry().config("reach-v0").map_err(e)?;
    let steps = 100.min(cfg.horizon as usize);
    let truth = sensor_run(with_sensors(&cfg, 0.0, 0, 0), steps)?;
    for d in [0usize, 1, 3, 10] {
        let delayed = sensor_run(with_sensors(&cfg, 0.0, d, 0), steps)?;
        for (t, frame) in delayed.iter().enumerate() {
            if frame.readings != truth[t.saturating_sub(d)].readings {
                return fail(format!("delay {d}: reading at t={t} is not truth at t={}", t.saturating_sub(d)));
            }
        }
    }
    let a = sensor_run(with_sensors(&cfg, 0.05, 2, 11), steps)?;
    let b = sensor_run(with_sensors(&cfg, 0.05, 2, 11), steps)?;
    let c = sensor_run(with_sensors(&cfg, 0.05, 2, 12), steps)?;
    let bits = |fs: &[SensorFrame]| {
        let mut v = Vec::new();
        fs.iter().for_each(|f| frame_bits(f, &mut v));
        v
    };
    if bits(&a) != bits(&b) {
        return fail("equal seeds produced different noise");
    }
    if bits(&a) == bits(&c) {
        return fail("different seeds produced identical noise");
    }
    pass(format!("delays 0, 1, 3, 10 exact over {steps} steps; noise repeatable per seed"))
}

fn cli_check() -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_hivekit")).arg("check").output().map_err(e)?;
    let text = String::from_utf8_lossy(&out.stdout);
    let missing: Vec<String> = all_ids().into_iter().filter(|id| !text.contains(id.as_str())).collect();
    if !out.status.success() {
        return fail(format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()));
    }
    if !missing.is_empty() {
        return fail(format!("not reported: {}", missing.join(", ")));
    }
    pass(format!("exit 0, {} environments constructed, reset and stepped", all_ids().len()))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, Duration, fn() -> Check); 9] = [
        ("determinism", Duration::from_secs(30), determinism),
        ("replay fidelity", Duration::from_secs(120), replay_fidelity),
        ("sim/hardware parity", Duration::from_secs(60), parity),
        ("reward/success decoupling", Duration::from_secs(120), decoupling),
        ("collector integrity and scaling", Duration::from_secs(300), collector),
        ("dataset format", Duration::from_secs(60), dataset_format),
        ("behavior cloning pipeline", Duration::from_secs(180), bc_pipeline),
        ("sensor pipeline", Duration::from_secs(30), sensor_pipeline),
        ("hivekit check", Duration::from_secs(30), cli_check),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run().unwrap_or_else(|err| Verdict::Fail(format!("error: {err}")));
        let took = start.elapsed();
        let verdict = match verdict {
            Verdict::Pass(d) if took > *budget => Verdict::Fail(format!("{d}; took {took:.1?}, budget {budget:?}")),
            v => v,
        };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {name} [{:.1}s]: {detail}", i + 1, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

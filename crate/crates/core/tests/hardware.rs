//! Hardware backend against the mock server.

use std::sync::Arc;
use std::time::{Duration, Instant};

use hivekit::agents::{policy_rng, Policy, RandomPolicy};
use hivekit::fixtures::STATE_ENV_IDS;
use hivekit::robot::mock::{MockHardwareServer, MockMode};
use hivekit::robot::Robot;
use hivekit::{Backend, Env, EnvConfig, EnvRegistry, RobotCommand, SensorFrame};

fn hardware_cfg(cfg: &EnvConfig, server: &MockHardwareServer) -> EnvConfig {
    let mut hw = cfg.clone();
    hw.backend = Backend::Hardware;
    hw.hardware_endpoint = Some(server.local_addr().to_string());
    hw
}

fn max_abs_diff(a: &SensorFrame, b: &SensorFrame) -> f64 {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.keys()
        .flat_map(|k| a.get(k).unwrap().iter().zip(b.get(k).unwrap()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Runs the same command script through both backends.
fn parity(id: &str, steps: usize) -> f64 {
    let cfg = EnvRegistry::builtin().config(id).unwrap();
    let server = MockHardwareServer::spawn((*cfg).clone(), "127.0.0.1:0", MockMode::Lockstep).unwrap();
    let mut sim = Env::new(cfg.clone()).unwrap();
    let mut hw = Env::new(Arc::new(hardware_cfg(&cfg, &server))).unwrap();
    assert_eq!(hw.robot().backend_kind(), Backend::Hardware);
    let policy = RandomPolicy::new(&cfg);
    let mut rng = policy_rng(99);
    let mut worst = max_abs_diff(&sim.reset().unwrap(), &hw.reset().unwrap());
    for _ in 0..steps {
        let cmd = policy.act(&SensorFrame::default(), &mut rng).unwrap();
        let a = sim.step(&cmd).unwrap();
        let b = hw.step(&cmd).unwrap();
        worst = worst.max(max_abs_diff(&a.obs, &b.obs));
        assert_eq!(a.success, b.success);
        assert_eq!(a.done, b.done);
        if a.done {
            worst = worst.max(max_abs_diff(&sim.reset().unwrap(), &hw.reset().unwrap()));
        }
    }
    drop(hw);
    server.shutdown();
    worst
}

#[test]
fn lockstep_mock_matches_simulation_on_every_task() {
    for id in STATE_ENV_IDS {
        let d = parity(id, 200);
        assert!(d <= 1e-9, "{id}: {d}");
    }
}

#[test]
fn visual_variant_parity() {
    assert!(parity("reach_v2d-v0", 60) <= 1e-9);
}

#[test]
fn free_run_advances_without_commands() {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    let server = MockHardwareServer::spawn(
        (*cfg).clone(),
        "127.0.0.1:0",
        MockMode::FreeRun { latency: Duration::from_millis(2) },
    )
    .unwrap();
    let t0 = server.sim_time();
    let start = Instant::now();
    while server.sim_time() <= t0 && start.elapsed() < Duration::from_secs(2) {
        std::thread::sleep(Duration::from_millis(10));
    }
    assert!(server.sim_time() > t0);
    let mut robot = Robot::connect(Arc::new(hardware_cfg(&cfg, &server))).unwrap();
    robot.reset(1).unwrap();
    let hold = RobotCommand::new(cfg.control_mode, cfg.robot.home_position());
    robot.apply_command(&hold).unwrap();
    let frame = robot.get_sensors().unwrap();
    assert!(frame.get("qpos").is_some());
    assert!(server.commands_received() >= 1);
    drop(robot);
    server.shutdown();
}

#[test]
fn unreachable_endpoint_is_an_error() {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    let mut hw = (*cfg).clone();
    hw.backend = Backend::Hardware;
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    hw.hardware_endpoint = Some(addr.to_string());
    assert!(Robot::connect_with_timeout(Arc::new(hw), Duration::from_millis(200)).is_err());
}

#[test]
fn second_client_is_refused_while_first_connected() {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    let server = MockHardwareServer::spawn((*cfg).clone(), "127.0.0.1:0", MockMode::Lockstep).unwrap();
    let hw = Arc::new(hardware_cfg(&cfg, &server));
    let mut first = Robot::connect(hw.clone()).unwrap();
    first.reset(0).unwrap();
    let second = Robot::connect_with_timeout(hw, Duration::from_millis(300)).and_then(|mut r| r.reset(0).map(|_| ()));
    assert!(second.is_err());
    drop(first);
    server.shutdown();
}

//! Headless console: drives the teleoperation gateway over a real websocket.

use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use hivekit::dataset::{replay_container, ContainerReader, Source};
use hivekit::teleop::{
    ClientMessage, EpisodeEvent, RecordAction, SceneUpdate, ServerMessage, TeleopEvent, TeleopOptions, TeleopServer, Want,
};
use hivekit::EnvRegistry;

struct Console {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

impl Console {
    fn connect(server: &TeleopServer) -> Self {
        let (ws, _) = tungstenite::connect(server.url()).expect("websocket handshake");
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_millis(50))).unwrap();
        }
        Self { ws }
    }

    fn hello(server: &TeleopServer, want: Want) -> Self {
        let mut c = Self::connect(server);
        c.send(&ClientMessage::Hello { want });
        c
    }

    fn send(&mut self, m: &ClientMessage) {
        self.ws.send(Message::text(m.to_json())).expect("send");
    }

    fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text.to_owned())).expect("send");
    }

    /// Next server message, `Ok(None)` on timeout, `Err` once closed.
    fn recv(&mut self) -> Result<Option<ServerMessage>, ()> {
        match self.ws.read() {
            Ok(Message::Text(t)) => Ok(Some(ServerMessage::parse(&t).expect("valid server message"))),
            Ok(Message::Close(_)) => Err(()),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(_) => Err(()),
        }
    }

    /// Collects messages until `pred` matches one or `timeout` passes.
    fn wait_for(&mut self, timeout: Duration, mut pred: impl FnMut(&ServerMessage) -> bool) -> Option<ServerMessage> {
        let end = Instant::now() + timeout;
        while Instant::now() < end {
            match self.recv() {
                Ok(Some(m)) if pred(&m) => return Some(m),
                Ok(_) => {}
                Err(()) => return None,
            }
        }
        None
    }

    /// Reads until the server closes, returning everything received.
    fn drain_until_closed(&mut self, timeout: Duration) -> (Vec<ServerMessage>, bool) {
        let end = Instant::now() + timeout;
        let mut got = Vec::new();
        while Instant::now() < end {
            match self.recv() {
                Ok(Some(m)) => got.push(m),
                Ok(None) => {}
                Err(()) => return (got, true),
            }
        }
        (got, false)
    }
}

fn spawn(rate_hz: f64, ee_space: bool, record: Option<std::path::PathBuf>) -> TeleopServer {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    TeleopServer::spawn(cfg, "127.0.0.1:0", TeleopOptions { rate_hz, ee_space, record_path: record, input_map: None }).unwrap()
}

fn scene(m: &ServerMessage) -> Option<&SceneUpdate> {
    match m {
        ServerMessage::Scene(s) => Some(s),
        _ => None,
    }
}

#[test]
fn idle_scenes_stream_at_rate_and_robot_holds() {
    let server = spawn(20.0, false, None);
    let mut c = Console::hello(&server, Want::Control);
    let first = c.wait_for(Duration::from_secs(2), |m| scene(m).is_some()).expect("scene");
    let start = Instant::now();
    let mut scenes = vec![scene(&first).unwrap().clone()];
    while start.elapsed() < Duration::from_millis(1500) {
        if let Ok(Some(ServerMessage::Scene(s))) = c.recv() {
            scenes.push(s);
        }
    }
    let hz = (scenes.len() - 1) as f64 / start.elapsed().as_secs_f64();
    assert!(hz >= 10.0, "{hz} Hz");
    let hold = &scenes[0].links;
    assert!(scenes.iter().filter(|s| s.episode == scenes[0].episode).all(|s| &s.links == hold));
    let stats = server.stats();
    assert!(stats.ticks > 10);
    let rel = (stats.mean_tick_interval_s - 0.05).abs() / 0.05;
    assert!(rel <= 0.10, "mean interval {}", stats.mean_tick_interval_s);
}

#[test]
fn key_moves_joint_while_held() {
    let server = spawn(50.0, false, None);
    let mut c = Console::hello(&server, Want::Control);
    c.wait_for(Duration::from_secs(2), |m| scene(m).is_some()).expect("scene");
    c.send(&ClientMessage::Reset);
    c.wait_for(Duration::from_secs(2), |m| matches!(m, ServerMessage::Episode { event: EpisodeEvent::Reset }));
    c.send(&ClientMessage::Input(TeleopEvent::key_down("q")));
    let mut angles = Vec::new();
    while angles.len() < 15 {
        if let Some(ServerMessage::Scene(s)) = c.wait_for(Duration::from_secs(2), |m| scene(m).is_some()) {
            let l1 = s.links[1];
            angles.push(l1[1].atan2(l1[0]));
        }
    }
    c.send(&ClientMessage::Input(TeleopEvent::key_up("q")));
    let rising = angles.windows(2).skip(2).all(|w| w[1] > w[0]);
    assert!(rising, "{angles:?}");
}

#[test]
fn second_controller_is_busy_and_spectator_watches() {
    let server = spawn(20.0, false, None);
    let mut owner = Console::hello(&server, Want::Control);
    owner.wait_for(Duration::from_secs(2), |m| scene(m).is_some()).expect("scene");

    let mut rival = Console::hello(&server, Want::Control);
    let (got, closed) = rival.drain_until_closed(Duration::from_secs(2));
    assert_eq!(got.first(), Some(&ServerMessage::Busy));
    assert!(closed);

    let mut watcher = Console::hello(&server, Want::Spectate);
    assert_eq!(watcher.wait_for(Duration::from_secs(2), |_| true), Some(ServerMessage::Busy));
    assert!(watcher.wait_for(Duration::from_secs(2), |m| scene(m).is_some()).is_some());
    watcher.send(&ClientMessage::Reset);
    let (got, closed) = watcher.drain_until_closed(Duration::from_secs(2));
    assert!(closed);
    assert!(got.iter().any(|m| matches!(m, ServerMessage::Error { .. })));
}

#[test]
fn protocol_violations_close_with_error() {
    let server = spawn(20.0, false, None);

    let mut early = Console::connect(&server);
    early.send(&ClientMessage::Reset);
    let (got, closed) = early.drain_until_closed(Duration::from_secs(2));
    assert!(closed);
    assert!(matches!(got.first(), Some(ServerMessage::Error { .. })));

    let mut garbled = Console::hello(&server, Want::Control);
    garbled.send_raw("{\"type\":\"input\",\"kind\":\"Axis\",\"code\":\"axis0\",\"value\":3.0}");
    let (got, closed) = garbled.drain_until_closed(Duration::from_secs(2));
    assert!(closed);
    assert!(got.iter().any(|m| matches!(m, ServerMessage::Error { .. })));

    // The controller slot is free again.
    let mut next = Console::hello(&server, Want::Control);
    let m = next.wait_for(Duration::from_secs(2), |_| true);
    assert!(m.as_ref().and_then(scene).is_some(), "{m:?}");
}

/// Arrow keys that move the end effector toward the target.
fn steer(s: &SceneUpdate) -> Vec<&'static str> {
    let ee = s.links.last().unwrap();
    let (dx, dy) = (s.target[0] - ee[0], s.target[1] - ee[1]);
    let mut keys = Vec::new();
    let dead = 0.012;
    if dx > dead {
        keys.push("ArrowRight");
    } else if dx < -dead {
        keys.push("ArrowLeft");
    }
    if dy > dead {
        keys.push("ArrowUp");
    } else if dy < -dead {
        keys.push("ArrowDown");
    }
    keys
}

#[test]
fn console_solves_reach_and_records_a_replayable_demo() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teleop.rsl");
    let server = spawn(50.0, true, Some(path.clone()));
    let mut c = Console::hello(&server, Want::Control);
    c.wait_for(Duration::from_secs(2), |m| scene(m).is_some()).expect("scene");

    c.send(&ClientMessage::Record { action: RecordAction::Start });
    c.send(&ClientMessage::Reset);
    c.wait_for(Duration::from_secs(2), |m| matches!(m, ServerMessage::Episode { event: EpisodeEvent::Reset }))
        .expect("reset");

    let mut held: Vec<&str> = Vec::new();
    let mut last_scene = None;
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        assert!(Instant::now() < deadline, "episode never finished");
        match c.recv() {
            Ok(Some(ServerMessage::Scene(s))) => {
                let want = steer(&s);
                for k in held.iter().filter(|k| !want.contains(k)) {
                    c.send(&ClientMessage::Input(TeleopEvent::key_up(k)));
                }
                for k in want.iter().filter(|k| !held.contains(k)) {
                    c.send(&ClientMessage::Input(TeleopEvent::key_down(k)));
                }
                held = want;
                last_scene = Some(s);
            }
            Ok(Some(ServerMessage::Episode { event: EpisodeEvent::Done })) => break,
            Ok(_) => {}
            Err(()) => panic!("connection closed"),
        }
    }
    for k in &held {
        c.send(&ClientMessage::Input(TeleopEvent::key_up(k)));
    }
    assert!(last_scene.expect("scene").success, "episode ended without success");
    c.wait_for(Duration::from_secs(2), |m| matches!(m, ServerMessage::Notice { msg } if msg.starts_with("saved")))
        .expect("saved notice");

    c.send(&ClientMessage::Record { action: RecordAction::Stop });
    c.send(&ClientMessage::Reset);
    c.wait_for(Duration::from_secs(3), |m| {
        matches!(m, ServerMessage::Notice { msg } if msg == "recording stopped" || msg == "empty recording discarded")
    })
    .expect("recording stopped");

    let recorded = server.recorded();
    server.shutdown();
    assert!(!recorded.is_empty());
    let horizon = EnvRegistry::builtin().config("reach-v0").unwrap().horizon as usize;
    assert_eq!(recorded[0].len(), horizon);
    assert!(recorded[0].final_success());
    assert!(recorded.iter().all(|t| t.source == Source::HumanTeleop));

    let reader = ContainerReader::open(&path).unwrap();
    assert_eq!(reader.read_all().unwrap(), recorded);
    let summary = replay_container(&reader, Some(&EnvRegistry::builtin().config("reach-v0").unwrap())).unwrap();
    assert_eq!(summary.max_final_state_diff, 0.0);
    assert_eq!(summary.max_per_step_diff, 0.0);
}

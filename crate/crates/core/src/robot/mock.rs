//! Mock hardware: a TCP service embedding the simulator behind the wire
//! protocol.
//!
//! In [`MockMode::Lockstep`] the embedded simulation advances only when a
//! SET_CMD arrives, which makes it bit-identical to the in-process backend.
//! In [`MockMode::FreeRun`] a timer thread advances it every
//! `frame_skip · dt` of wall time using the most recent command, and every
//! response is delayed by the configured latency.

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::config::EnvConfig;
use crate::sim::SimState;

use super::wire::{self, Frame};
use super::{episode_initial_state, step_state, RobotCommand, WorldView};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MockMode {
    Lockstep,
    FreeRun { latency: Duration },
}

struct Shared {
    state: SimState,
    held: Option<RobotCommand>,
    commands: u64,
}

/// Handle to a running mock server; dropping it stops the server.
pub struct MockHardwareServer {
    addr: SocketAddr,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

fn lock(m: &Mutex<Shared>) -> MutexGuard<'_, Shared> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl MockHardwareServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(cfg: EnvConfig, addr: &str, mode: MockMode) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let cfg = Arc::new(cfg);
        let shared = Arc::new(Mutex::new(Shared {
            state: SimState::canonical(&cfg),
            held: None,
            commands: 0,
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let busy = Arc::new(AtomicBool::new(false));

        let mut threads = Vec::new();
        {
            let (cfg, shared, stop) = (cfg.clone(), shared.clone(), stop.clone());
            threads.push(thread::spawn(move || accept_loop(listener, cfg, shared, stop, busy, mode)));
        }
        if let MockMode::FreeRun { .. } = mode {
            let (cfg, shared, stop) = (cfg.clone(), shared.clone(), stop.clone());
            threads.push(thread::spawn(move || timer_loop(cfg, shared, stop)));
        }
        Ok(Self { addr: local, shared, stop, threads })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Embedded simulation time.
    pub fn sim_time(&self) -> f64 {
        lock(&self.shared).state.time
    }

    pub fn state(&self) -> SimState {
        lock(&self.shared).state.clone()
    }

    pub fn commands_received(&self) -> u64 {
        lock(&self.shared).commands
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockHardwareServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(
    listener: TcpListener,
    cfg: Arc<EnvConfig>,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    busy: Arc<AtomicBool>,
    mode: MockMode,
) {
    let mut handlers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, _)) => {
                let _ = stream.set_nonblocking(false);
                if busy.swap(true, Ordering::SeqCst) {
                    let _ = Frame::error(0, wire::ERR_BUSY, "BUSY: another client is connected")
                        .write_to(&mut stream);
                    continue;
                }
                let (cfg, shared, stop, busy) = (cfg.clone(), shared.clone(), stop.clone(), busy.clone());
                handlers.push(thread::spawn(move || {
                    let _ = serve_client(stream, &cfg, &shared, &stop, mode);
                    busy.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
        handlers.retain(|h| !h.is_finished());
    }
    for h in handlers {
        let _ = h.join();
    }
}

fn timer_loop(cfg: Arc<EnvConfig>, shared: Arc<Mutex<Shared>>, stop: Arc<AtomicBool>) {
    let period = Duration::from_secs_f64(cfg.dt * f64::from(cfg.frame_skip));
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            thread::sleep((next - now).min(Duration::from_millis(5)));
            continue;
        }
        next += period;
        let mut g = lock(&shared);
        let cmd = match &g.held {
            Some(c) => RobotCommand { gripper: super::Gripper::NoChange, ..c.clone() },
            None => hold_command(&cfg, &g.state),
        };
        if let Ok(s) = step_state(&cfg, &g.state, &cmd) {
            g.state = s;
        }
    }
}

/// Command that keeps the robot where it is in the configured mode.
fn hold_command(cfg: &EnvConfig, state: &SimState) -> RobotCommand {
    use crate::config::ControlMode;
    let values = match cfg.control_mode {
        ControlMode::Position => state.joint_pos.clone(),
        ControlMode::Velocity | ControlMode::Torque => vec![0.0; state.joint_pos.len()],
    };
    RobotCommand::new(cfg.control_mode, values)
}

fn serve_client(
    mut stream: TcpStream,
    cfg: &EnvConfig,
    shared: &Mutex<Shared>,
    stop: &AtomicBool,
    mode: MockMode,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let poll = Some(Duration::from_millis(50));
    let mut probe = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        // Wait for the first byte with a short timeout so the stop flag is
        // honored, then read the whole frame with a generous one.
        stream.set_read_timeout(poll)?;
        match stream.peek(&mut probe) {
            Ok(0) => return Ok(()),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        }
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let req = Frame::read_from(&mut stream)?;
        let reply = handle(&req, cfg, shared, mode);
        if let MockMode::FreeRun { latency } = mode {
            thread::sleep(latency);
        }
        reply.write_to(&mut stream)?;
    }
}

fn handle(req: &Frame, cfg: &EnvConfig, shared: &Mutex<Shared>, mode: MockMode) -> Frame {
    let id = req.request_id;
    match req.opcode {
        wire::OP_PING => Frame::new(wire::OP_PONG, id, Vec::new()),
        wire::OP_RESET => {
            let mut c = wire::Cursor::new(&req.payload);
            let seed = match c.u64().and_then(|s| c.finish().map(|_| s)) {
                Ok(s) => s,
                Err(e) => return Frame::error(id, wire::ERR_BAD_REQUEST, &e),
            };
            let mut g = lock(shared);
            g.state = episode_initial_state(cfg, seed);
            g.held = None;
            Frame::new(wire::OP_STATE_ECHO, id, wire::encode_state(&WorldView::from_state(&g.state)))
        }
        wire::OP_GET_STATE => {
            let g = lock(shared);
            Frame::new(wire::OP_STATE, id, wire::encode_state(&WorldView::from_state(&g.state)))
        }
        wire::OP_SET_CMD => {
            let cmd = match wire::decode_command(&req.payload) {
                Ok(c) => c,
                Err(e) => return Frame::error(id, wire::ERR_BAD_REQUEST, &e),
            };
            if cmd.mode != cfg.control_mode || cmd.values.len() != cfg.joint_count() {
                return Frame::error(id, wire::ERR_COMMAND, "command does not match robot mode or joint count");
            }
            let mut g = lock(shared);
            g.commands += 1;
            match mode {
                MockMode::Lockstep => match step_state(cfg, &g.state, &cmd) {
                    Ok(s) => g.state = s,
                    Err(e) => return Frame::error(id, wire::ERR_COMMAND, &e.to_string()),
                },
                MockMode::FreeRun { .. } => {
                    g.state = crate::sim::apply_gripper(&g.state, &cfg.robot, cmd.gripper);
                    g.held = Some(cmd);
                }
            }
            Frame::new(wire::OP_ACK, id, Vec::new())
        }
        other => Frame::error(id, wire::ERR_UNKNOWN_OPCODE, &format!("unknown opcode {other:#04x}")),
    }
}

//! Websocket gateway around a [`TeleopSession`]: one controller, any number
//! of spectators, and a control loop running at a fixed rate.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::protocol::{ClientMessage, RecordAction, ServerMessage, Want};
use super::session::{InputMap, SessionOptions, TeleopSession, DEFAULT_RATE_HZ};
use super::TeleopError;
use crate::config::EnvConfig;
use crate::dataset::Trajectory;

const POLL: Duration = Duration::from_millis(10);
const HELLO_TIMEOUT: Duration = Duration::from_secs(5);
const EVENT_QUEUE: usize = 1024;
const OUTBOX: usize = 256;

#[derive(Clone, Debug)]
pub struct TeleopOptions {
    /// Control rate in Hz, within `[1, 100]`.
    pub rate_hz: f64,
    pub ee_space: bool,
    pub record_path: Option<PathBuf>,
    pub input_map: Option<InputMap>,
}

impl Default for TeleopOptions {
    fn default() -> Self {
        Self { rate_hz: DEFAULT_RATE_HZ, ee_space: false, record_path: None, input_map: None }
    }
}

/// Control-loop counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeleopStats {
    pub ticks: u64,
    /// Mean wall time between consecutive ticks, in seconds.
    pub mean_tick_interval_s: f64,
    pub max_tick_interval_s: f64,
    pub events: u64,
    /// Outgoing messages dropped because a client fell behind.
    pub dropped_messages: u64,
}

enum LoopMsg {
    Client(ClientMessage),
    ControllerLeft,
}

#[derive(Default)]
struct Clients {
    next_id: u64,
    controller: Option<u64>,
    outboxes: BTreeMap<u64, SyncSender<String>>,
}

struct Shared {
    stop: AtomicBool,
    clients: Mutex<Clients>,
    session: Mutex<TeleopSession>,
    stats: Mutex<TeleopStats>,
    dropped: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Shared {
    fn broadcast(&self, msg: &ServerMessage) {
        let text = msg.to_json();
        let clients = lock(&self.clients);
        for tx in clients.outboxes.values() {
            if let Err(TrySendError::Full(_)) = tx.try_send(text.clone()) {
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

pub struct TeleopServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl TeleopServer {
    /// Binds `addr` and starts the acceptor and control-loop threads.
    pub fn spawn(cfg: Arc<EnvConfig>, addr: &str, opts: TeleopOptions) -> Result<Self, TeleopError> {
        let session = TeleopSession::new(
            cfg,
            SessionOptions {
                rate_hz: opts.rate_hz,
                ee_space: opts.ee_space,
                record_path: opts.record_path,
                input_map: opts.input_map,
            },
        )?;
        let rate = session.rate_hz();
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            stop: AtomicBool::new(false),
            clients: Mutex::new(Clients::default()),
            session: Mutex::new(session),
            stats: Mutex::new(TeleopStats::default()),
            dropped: AtomicU64::new(0),
        });
        let (events_tx, events_rx) = mpsc::sync_channel(EVENT_QUEUE);
        let loop_shared = Arc::clone(&shared);
        let control = thread::Builder::new()
            .name("teleop-loop".into())
            .spawn(move || control_loop(&loop_shared, &events_rx, rate))?;
        let acc_shared = Arc::clone(&shared);
        let acceptor = thread::Builder::new()
            .name("teleop-accept".into())
            .spawn(move || accept_loop(&acc_shared, &listener, &events_tx))?;
        Ok(Self { addr, shared, threads: vec![control, acceptor] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn stats(&self) -> TeleopStats {
        let mut s = lock(&self.shared.stats).clone();
        s.dropped_messages = self.shared.dropped.load(Ordering::Relaxed);
        s
    }

    /// Trajectories recorded so far.
    pub fn recorded(&self) -> Vec<Trajectory> {
        lock(&self.shared.session).recorded().to_vec()
    }

    pub fn is_running(&self) -> bool {
        !self.shared.stop.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for TeleopServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn control_loop(shared: &Shared, events: &Receiver<LoopMsg>, rate_hz: f64) {
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let mut next = Instant::now() + period;
    let mut last: Option<Instant> = None;
    let mut interval_sum = 0.0;
    while !shared.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            thread::sleep((next - now).min(POLL));
            continue;
        }
        next += period;
        if next < now {
            next = now + period;
        }
        let mut out = Vec::new();
        let mut n_events = 0;
        {
            let mut session = lock(&shared.session);
            while let Ok(msg) = events.try_recv() {
                n_events += 1;
                match handle_client_message(&mut session, msg) {
                    Ok(mut msgs) => out.append(&mut msgs),
                    Err(e) => out.push(ServerMessage::Error { msg: e.to_string() }),
                }
            }
            match session.tick() {
                Ok(mut msgs) => out.append(&mut msgs),
                Err(e) => out.push(ServerMessage::Error { msg: e.to_string() }),
            }
        }
        for m in &out {
            shared.broadcast(m);
        }
        let mut stats = lock(&shared.stats);
        stats.ticks += 1;
        stats.events += n_events;
        if let Some(prev) = last {
            let dt = now.duration_since(prev).as_secs_f64();
            interval_sum += dt;
            stats.mean_tick_interval_s = interval_sum / (stats.ticks - 1) as f64;
            stats.max_tick_interval_s = stats.max_tick_interval_s.max(dt);
        }
        last = Some(now);
    }
}

fn handle_client_message(session: &mut TeleopSession, msg: LoopMsg) -> Result<Vec<ServerMessage>, TeleopError> {
    match msg {
        LoopMsg::ControllerLeft => {
            session.clear_input();
            Ok(Vec::new())
        }
        LoopMsg::Client(ClientMessage::Input(ev)) => session.handle_event(&ev).map(|()| Vec::new()),
        LoopMsg::Client(ClientMessage::Reset) => {
            session.request_reset();
            Ok(Vec::new())
        }
        LoopMsg::Client(ClientMessage::Record { action: RecordAction::Start }) => session.start_recording(),
        LoopMsg::Client(ClientMessage::Record { action: RecordAction::Stop }) => session.stop_recording(),
        LoopMsg::Client(ClientMessage::Hello { .. }) => Err(TeleopError::Protocol("duplicate hello".into())),
    }
}

fn accept_loop(shared: &Arc<Shared>, listener: &TcpListener, events: &SyncSender<LoopMsg>) {
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let shared = Arc::clone(shared);
                let events = events.clone();
                if let Ok(h) = thread::Builder::new().name("teleop-conn".into()).spawn(move || {
                    let _ = serve_connection(&shared, stream, &events);
                }) {
                    conns.push(h);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        conns.retain(|h| !h.is_finished());
    }
    for h in conns {
        let _ = h.join();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<(), tungstenite::Error> {
    ws.send(Message::text(msg.to_json()))
}

fn reject(ws: &mut WebSocket<TcpStream>, msg: ServerMessage) {
    let _ = send(ws, &msg);
    let _ = ws.close(None);
    let deadline = Instant::now() + Duration::from_millis(200);
    while Instant::now() < deadline {
        match ws.read() {
            Err(e) if is_timeout(&e) => {}
            Ok(_) => {}
            Err(_) => break,
        }
    }
}

/// Reads the next text frame, returning `None` on timeout.
fn read_text(ws: &mut WebSocket<TcpStream>) -> Result<Option<String>, tungstenite::Error> {
    match ws.read() {
        Ok(Message::Text(t)) => Ok(Some(t.to_string())),
        Ok(Message::Close(_)) => Err(tungstenite::Error::ConnectionClosed),
        Ok(_) => Ok(None),
        Err(e) if is_timeout(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn serve_connection(shared: &Shared, stream: TcpStream, events: &SyncSender<LoopMsg>) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;

    let hello_deadline = Instant::now() + HELLO_TIMEOUT;
    let want = loop {
        if shared.stop.load(Ordering::SeqCst) || Instant::now() > hello_deadline {
            reject(&mut ws, ServerMessage::Error { msg: "expected hello".into() });
            return Ok(());
        }
        if let Some(text) = read_text(&mut ws)? {
            match ClientMessage::parse(&text) {
                Ok(ClientMessage::Hello { want }) => break want,
                Ok(_) => {
                    reject(&mut ws, ServerMessage::Error { msg: "first message must be hello".into() });
                    return Ok(());
                }
                Err(msg) => {
                    reject(&mut ws, ServerMessage::Error { msg });
                    return Ok(());
                }
            }
        }
    };

    let (tx, outbox) = mpsc::sync_channel::<String>(OUTBOX);
    let (id, is_controller) = {
        let mut clients = lock(&shared.clients);
        let has_controller = clients.controller.is_some();
        if want == Want::Control && has_controller {
            drop(clients);
            reject(&mut ws, ServerMessage::Busy);
            return Ok(());
        }
        let id = clients.next_id;
        clients.next_id += 1;
        clients.outboxes.insert(id, tx);
        let is_controller = want == Want::Control;
        if is_controller {
            clients.controller = Some(id);
        }
        (id, is_controller)
    };
    if want == Want::Spectate && lock(&shared.clients).controller.is_some_and(|c| c != id) {
        send(&mut ws, &ServerMessage::Busy)?;
    }

    let result = connection_loop(shared, &mut ws, &outbox, events, is_controller);

    {
        let mut clients = lock(&shared.clients);
        clients.outboxes.remove(&id);
        if clients.controller == Some(id) {
            clients.controller = None;
            let _ = events.try_send(LoopMsg::ControllerLeft);
        }
    }
    if let Ok(Some(msg)) = &result {
        reject(&mut ws, ServerMessage::Error { msg: msg.clone() });
    }
    result.map(|_| ())
}

fn connection_loop(
    shared: &Shared,
    ws: &mut WebSocket<TcpStream>,
    outbox: &Receiver<String>,
    events: &SyncSender<LoopMsg>,
    is_controller: bool,
) -> Result<Option<String>, tungstenite::Error> {
    while !shared.stop.load(Ordering::SeqCst) {
        if let Some(text) = read_text(ws)? {
            let msg = match ClientMessage::parse(&text) {
                Ok(ClientMessage::Hello { .. }) => Err("duplicate hello".to_owned()),
                Ok(_) if !is_controller => Err("spectators cannot send commands".to_owned()),
                Ok(ClientMessage::Input(ev)) => ev.validate().map(|()| ClientMessage::Input(ev)),
                other => other,
            };
            match msg {
                Ok(m) => {
                    if events.send(LoopMsg::Client(m)).is_err() {
                        return Ok(None);
                    }
                }
                Err(msg) => return Ok(Some(msg)),
            }
        }
        while let Ok(text) = outbox.try_recv() {
            ws.send(Message::text(text))?;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(None)
}

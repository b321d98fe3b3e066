//! Live telemetry over WebSocket at `/ws`. Frames go out at a fixed rate;
//! teleop messages come back on the same connection.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender, TryRecvError, TrySendError};
use serde_json::json;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::{Message, WebSocket};

use crate::backend::tick_index;
use crate::runtime::{OutputSystem, RobotHandle, StepSnapshot};

use super::teleop::{TeleopHub, TeleopMessage};
use super::IoError;

pub const TELEMETRY_PROTOCOL: &str = "rems-telemetry/1";
pub const TELEMETRY_PATH: &str = "/ws";
/// Frames a listener may have queued before it is dropped.
pub const LISTENER_QUEUE: usize = 100;

const POLL: Duration = Duration::from_millis(5);
const WRITE_TIMEOUT: Duration = Duration::from_millis(500);

struct Listener {
    id: u64,
    tx: Sender<Arc<str>>,
}

struct Inner {
    addr: SocketAddr,
    hub: TeleopHub,
    listeners: Mutex<Vec<Listener>>,
    stop: AtomicBool,
    next_id: AtomicU64,
    dropped: AtomicU64,
    teleop_received: AtomicU64,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

/// The `/ws` endpoint. Cloning shares the same server.
#[derive(Clone)]
pub struct TelemetryServer {
    inner: Arc<Inner>,
}

impl TelemetryServer {
    /// Bind and start accepting. Teleop messages from clients go to `hub`.
    pub fn bind(addr: &str, hub: TeleopHub) -> Result<Self, IoError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let inner = Arc::new(Inner {
            addr: listener.local_addr()?,
            hub,
            listeners: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
            next_id: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            teleop_received: AtomicU64::new(0),
            threads: Mutex::new(Vec::new()),
        });
        let server = TelemetryServer { inner };
        let accept = {
            let inner = server.inner.clone();
            std::thread::Builder::new()
                .name("telemetry-accept".into())
                .spawn(move || accept_loop(listener, inner))?
        };
        server.lock_threads().push(accept);
        Ok(server)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}{TELEMETRY_PATH}", self.inner.addr)
    }

    pub fn hub(&self) -> &TeleopHub {
        &self.inner.hub
    }

    pub fn listener_count(&self) -> usize {
        self.lock_listeners().len()
    }

    /// Listeners disconnected because their queue overflowed.
    pub fn dropped_listeners(&self) -> u64 {
        self.inner.dropped.load(Ordering::SeqCst)
    }

    pub fn teleop_received(&self) -> u64 {
        self.inner.teleop_received.load(Ordering::SeqCst)
    }

    /// Queue `text` for every listener without blocking. A listener whose
    /// queue is full is dropped.
    pub fn publish(&self, text: &str) {
        let text: Arc<str> = Arc::from(text);
        let mut ls = self.lock_listeners();
        ls.retain(|l| match l.tx.try_send(text.clone()) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                log::warn!("telemetry listener {} fell behind and was dropped", l.id);
                self.inner.dropped.fetch_add(1, Ordering::SeqCst);
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
    }

    pub fn shutdown(&self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        self.lock_listeners().clear();
        let threads: Vec<_> = self.lock_threads().drain(..).collect();
        for t in threads {
            let _ = t.join();
        }
    }

    fn lock_listeners(&self) -> std::sync::MutexGuard<'_, Vec<Listener>> {
        self.inner
            .listeners
            .lock()
            .unwrap_or_else(|e| e.into_inner())
    }

    fn lock_threads(&self) -> std::sync::MutexGuard<'_, Vec<JoinHandle<()>>> {
        self.inner.threads.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<Inner>) {
    let mut conns = Vec::new();
    while !inner.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let inner = inner.clone();
                conns.push(std::thread::spawn(move || {
                    if let Err(e) = connection(stream, &inner) {
                        log::debug!("telemetry connection from {peer} ended: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::error!("telemetry accept failed: {e}");
                break;
            }
        }
        conns.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in conns {
        let _ = c.join();
    }
}

fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == TELEMETRY_PATH {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some(format!("no endpoint at {}", req.uri().path())));
        *err.status_mut() = tungstenite::http::StatusCode::NOT_FOUND;
        Err(err)
    }
}

fn connection(stream: TcpStream, inner: &Inner) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    stream
        .set_write_timeout(Some(WRITE_TIMEOUT))
        .map_err(|e| e.to_string())?;
    let mut ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| e.to_string())?;
    ws.get_ref()
        .set_read_timeout(Some(POLL))
        .map_err(|e| e.to_string())?;
    let id = inner.next_id.fetch_add(1, Ordering::SeqCst) + 1;
    let (tx, rx) = crossbeam_channel::bounded(LISTENER_QUEUE);
    inner
        .listeners
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push(Listener { id, tx });
    let source = format!("ws-{id}");
    let result = serve_listener(&mut ws, &rx, inner, &source);
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn serve_listener(
    ws: &mut WebSocket<TcpStream>,
    rx: &Receiver<Arc<str>>,
    inner: &Inner,
    source: &str,
) -> Result<(), String> {
    while !inner.stop.load(Ordering::SeqCst) {
        loop {
            match rx.try_recv() {
                Ok(text) => ws
                    .send(Message::Text(text.to_string()))
                    .map_err(|e| e.to_string())?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Err("dropped from registry".into()),
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match TeleopMessage::parse(&text, source, inner.hub.now()) {
                Ok(cmd) => {
                    inner.teleop_received.fetch_add(1, Ordering::SeqCst);
                    inner.hub.push(cmd);
                }
                Err(e) => log::warn!("ignoring message from {source}: {e}"),
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(())
}

/// One telemetry frame as JSON.
pub fn telemetry_frame(
    step: &StepSnapshot,
    names: &BTreeMap<String, (String, String)>,
) -> serde_json::Value {
    let robots: Vec<serde_json::Value> = step
        .robots
        .iter()
        .filter_map(|r| {
            let (definition, implementation) = names.get(&r.id)?;
            Some(json!({
                "id": r.id,
                "definition": definition,
                "implementation": implementation,
                "state": r.state.flatten(),
                "output": r.output.flatten(),
                "stale": r.stale,
            }))
        })
        .collect();
    json!({ "protocol": TELEMETRY_PROTOCOL, "t": step.t, "robots": robots })
}

/// Output system publishing decimated frames to a [`TelemetryServer`].
pub struct Broadcaster {
    server: TelemetryServer,
    rate: f64,
    last_tick: i64,
    only: Option<BTreeSet<String>>,
    names: BTreeMap<String, (String, String)>,
    frames: u64,
}

impl Broadcaster {
    pub fn new(server: TelemetryServer, rate: f64) -> Result<Self, IoError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(IoError::Message(format!(
                "broadcast rate must be > 0, got {rate}"
            )));
        }
        Ok(Broadcaster {
            server,
            rate,
            last_tick: 0,
            only: None,
            names: BTreeMap::new(),
            frames: 0,
        })
    }

    pub fn for_robots(mut self, ids: impl IntoIterator<Item = String>) -> Self {
        self.only = Some(ids.into_iter().collect());
        self
    }
}

impl OutputSystem for Broadcaster {
    fn name(&self) -> String {
        format!("broadcast:{}", self.server.local_addr())
    }

    fn start(&mut self, robots: &[RobotHandle]) -> Result<(), IoError> {
        self.names = robots
            .iter()
            .filter(|h| self.only.as_ref().is_none_or(|s| s.contains(&h.id)))
            .map(|h| {
                (
                    h.id.clone(),
                    (h.definition.clone(), h.implementation.clone()),
                )
            })
            .collect();
        Ok(())
    }

    fn consume(&mut self, step: &StepSnapshot) -> Result<(), IoError> {
        let tick = tick_index(step.t, self.rate);
        if tick <= self.last_tick {
            return Ok(());
        }
        self.last_tick = tick;
        self.frames += 1;
        self.server
            .publish(&telemetry_frame(step, &self.names).to_string());
        Ok(())
    }

    fn finalize(&mut self) -> Result<Vec<(String, std::path::PathBuf)>, IoError> {
        log::info!("broadcast {} telemetry frames", self.frames);
        Ok(Vec::new())
    }
}

//! Remote implementation over a WebSocket. Socket I/O runs on a dedicated
//! communication thread; the robot worker talks to it through channels with
//! bounded waits.

pub mod protocol;
pub mod server;

use std::net::{TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use tungstenite::{Message, WebSocket};

use crate::record::DefRecord;
use crate::robot::RobotDefinition;

use super::{conform, tick_index, Backend, BackendError};

pub use protocol::{decode, encode, BridgeMessage, Hello, MessageType, SeqGuard, PROTOCOL};
pub use server::{LoopbackMode, LoopbackServer};

pub const DEFAULT_BRIDGE_RATE: f64 = 20.0;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(2);
const POLL: Duration = Duration::from_millis(2);

enum Inbound {
    Frame(BridgeMessage),
    Closed(String),
}

struct Live {
    def: RobotDefinition,
    out: Option<Sender<String>>,
    inbox: Receiver<Inbound>,
    comm: Option<JoinHandle<()>>,
    seq: u64,
    guard: SeqGuard,
    t_last: f64,
    output: DefRecord,
    state: DefRecord,
    stale: bool,
    closed: bool,
    pending: Option<u64>,
    state_seq: u64,
    reading_tick: Option<i64>,
}

pub struct BridgeBackend {
    url: String,
    rate: f64,
    name: String,
    live: Option<Live>,
}

impl BridgeBackend {
    pub fn new(url: impl Into<String>) -> Self {
        let url = url.into();
        BridgeBackend {
            name: format!("bridge:{url}"),
            url,
            rate: DEFAULT_BRIDGE_RATE,
            live: None,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Result<Self, BackendError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(BackendError::InvalidProfile(format!(
                "bridge rate must be > 0, got {rate}"
            )));
        }
        self.rate = rate;
        Ok(self)
    }

    /// Reply timeout: two device periods, but never below half a second.
    pub fn sense_timeout(&self) -> Duration {
        Duration::from_secs_f64((2.0 / self.rate).max(0.5))
    }

    fn live(&mut self) -> Result<&mut Live, BackendError> {
        self.live.as_mut().ok_or(BackendError::NotInitialized)
    }

    fn connect(&self, def: &RobotDefinition) -> Result<WebSocket<TcpStream>, BackendError> {
        let fail = |reason: String| BackendError::Connect {
            url: self.url.clone(),
            reason,
        };
        let uri: tungstenite::http::Uri = self.url.parse().map_err(|e| fail(format!("{e}")))?;
        let host = uri.host().ok_or_else(|| fail("missing host".into()))?;
        let port = uri.port_u16().unwrap_or(80);
        let addr = (host, port)
            .to_socket_addrs()
            .map_err(|e| fail(e.to_string()))?
            .next()
            .ok_or_else(|| fail("host did not resolve".into()))?;
        let stream =
            TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(|e| fail(e.to_string()))?;
        stream
            .set_read_timeout(Some(HANDSHAKE_TIMEOUT))
            .map_err(|e| fail(e.to_string()))?;
        stream.set_nodelay(true).map_err(|e| fail(e.to_string()))?;
        let (mut ws, _) =
            tungstenite::client(self.url.as_str(), stream).map_err(|e| fail(e.to_string()))?;

        let hash = def.schema_digest();
        ws.send(Message::Text(encode(&BridgeMessage::hello(
            0,
            def.name(),
            &hash,
        ))))
        .map_err(|e| fail(e.to_string()))?;
        let deadline = Instant::now() + HANDSHAKE_TIMEOUT;
        loop {
            if Instant::now() > deadline {
                return Err(fail("no hello from remote".into()));
            }
            match ws.read() {
                Ok(Message::Text(text)) => {
                    let msg = decode(&text)?;
                    let Some(h) = msg.hello else { continue };
                    if h.protocol != PROTOCOL {
                        return Err(BackendError::MalformedFrame(format!(
                            "remote speaks `{}`",
                            h.protocol
                        )));
                    }
                    if h.schema_hash != hash {
                        let _ = ws.close(None);
                        return Err(BackendError::SchemaHashMismatch {
                            local: hash,
                            remote: h.schema_hash,
                        });
                    }
                    break;
                }
                Ok(_) => continue,
                Err(e) => return Err(fail(e.to_string())),
            }
        }
        ws.get_ref()
            .set_read_timeout(Some(POLL))
            .map_err(|e| fail(e.to_string()))?;
        Ok(ws)
    }
}

fn comm_loop(mut ws: WebSocket<TcpStream>, out: Receiver<String>, inbox: Sender<Inbound>) {
    loop {
        loop {
            match out.try_recv() {
                Ok(text) => {
                    if let Err(e) = ws.send(Message::Text(text)) {
                        let _ = inbox.send(Inbound::Closed(e.to_string()));
                        return;
                    }
                }
                Err(crossbeam_channel::TryRecvError::Empty) => break,
                Err(crossbeam_channel::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return;
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match decode(&text) {
                Ok(m) => {
                    if inbox.send(Inbound::Frame(m)).is_err() {
                        return;
                    }
                }
                Err(e) => log::warn!("bridge: dropping frame: {e}"),
            },
            Ok(Message::Close(_)) => {
                let _ = inbox.send(Inbound::Closed("remote closed".into()));
                return;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) => {}
            Err(e) => {
                let _ = inbox.send(Inbound::Closed(e.to_string()));
                return;
            }
        }
    }
}

impl Live {
    fn send(&mut self, msg: BridgeMessage) {
        let ok = self
            .out
            .as_ref()
            .is_some_and(|tx| tx.send(encode(&msg)).is_ok());
        if !ok {
            self.lose("communication thread ended");
        }
    }

    fn lose(&mut self, why: &str) {
        if !self.closed {
            log::warn!("bridge for `{}` lost: {why}", self.def.name());
        }
        self.closed = true;
        self.stale = true;
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Apply one inbound event. Returns true when the pending sense request
    /// has been answered.
    fn absorb(&mut self, ev: Inbound) -> bool {
        match ev {
            Inbound::Closed(why) => {
                self.lose(&why);
                false
            }
            Inbound::Frame(m) => {
                if !self.guard.accept(&m) {
                    log::warn!("bridge: non-monotone seq {} on {}", m.seq, m.kind.as_str());
                    return false;
                }
                let answered = self.pending == Some(m.seq);
                match m.kind {
                    MessageType::SenseReply => {
                        match DefRecord::from_flat(self.def.output_schema(), &m.data) {
                            Ok(r) => {
                                self.output = r;
                                if answered {
                                    self.pending = None;
                                    self.stale = self.closed;
                                }
                                return answered;
                            }
                            Err(e) => log::warn!("bridge: bad sense reply: {e}"),
                        }
                    }
                    MessageType::ObserveReply => {
                        match DefRecord::from_flat(self.def.state_schema(), &m.data) {
                            Ok(r) => {
                                self.state = r;
                                self.state_seq = m.seq;
                            }
                            Err(e) => log::warn!("bridge: bad observe reply: {e}"),
                        }
                    }
                    MessageType::Bye => self.lose("remote said bye"),
                    _ => {}
                }
                false
            }
        }
    }

    fn drain(&mut self) {
        while let Ok(ev) = self.inbox.try_recv() {
            self.absorb(ev);
        }
    }
}

impl Backend for BridgeBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        if def.parts().is_empty() {
            return Err(BackendError::SchemaIncompatible(
                "definition has no parts".into(),
            ));
        }
        Ok(())
    }

    fn init(&mut self, def: &RobotDefinition, t0: f64, _seed: u64) -> Result<(), BackendError> {
        self.supports(def)?;
        let ws = self.connect(def)?;
        let (out_tx, out_rx) = crossbeam_channel::unbounded();
        let (in_tx, in_rx) = crossbeam_channel::unbounded();
        let comm = std::thread::Builder::new()
            .name(format!("bridge-{}", def.name()))
            .spawn(move || comm_loop(ws, out_rx, in_tx))
            .map_err(|e| BackendError::ConnectionLost(e.to_string()))?;
        self.live = Some(Live {
            output: DefRecord::new(def.output_schema()),
            state: def.initial_state()?,
            def: def.clone(),
            out: Some(out_tx),
            inbox: in_rx,
            comm: Some(comm),
            seq: 0,
            guard: SeqGuard::default(),
            t_last: t0,
            stale: false,
            closed: false,
            pending: None,
            state_seq: 0,
            reading_tick: None,
        });
        Ok(())
    }

    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        let live = self.live()?;
        let input = conform(input, live.def.input_schema())?;
        if t < live.t_last {
            return Err(BackendError::TimeReversal {
                t,
                last: live.t_last,
            });
        }
        live.t_last = t;
        if !live.closed {
            let seq = live.next_seq();
            live.send(BridgeMessage::new(
                MessageType::Drive,
                t,
                seq,
                input.flatten(),
            ));
        }
        Ok(())
    }

    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        let timeout = self.sense_timeout();
        let rate = self.rate;
        let live = self.live()?;
        live.drain();
        let tick = tick_index(live.t_last, rate);
        if live.reading_tick != Some(tick) && !live.closed {
            live.reading_tick = Some(tick);
            match live.pending {
                // still waiting on an earlier request: do not block again
                Some(_) => {}
                None => {
                    let seq = live.next_seq();
                    live.pending = Some(seq);
                    let t = live.t_last;
                    live.send(BridgeMessage::new(
                        MessageType::SenseRequest,
                        t,
                        seq,
                        Vec::new(),
                    ));
                    let deadline = Instant::now() + timeout;
                    loop {
                        let left = deadline.saturating_duration_since(Instant::now());
                        match live.inbox.recv_timeout(left) {
                            Ok(ev) => {
                                if live.absorb(ev) {
                                    // the observe reply follows right behind
                                    while live.state_seq < seq && !live.closed {
                                        let left =
                                            deadline.saturating_duration_since(Instant::now());
                                        match live.inbox.recv_timeout(left) {
                                            Ok(ev) => {
                                                live.absorb(ev);
                                            }
                                            Err(_) => break,
                                        }
                                    }
                                    break;
                                }
                                if live.closed {
                                    break;
                                }
                            }
                            Err(RecvTimeoutError::Timeout) => {
                                live.stale = true;
                                break;
                            }
                            Err(RecvTimeoutError::Disconnected) => {
                                live.lose("communication thread ended");
                                break;
                            }
                        }
                    }
                }
            }
        }
        Ok(live
            .output
            .clone()
            .with_timestamp(live.t_last)
            .with_stale(live.stale))
    }

    fn observe_state(&mut self) -> Result<DefRecord, BackendError> {
        let live = self.live()?;
        live.drain();
        Ok(live
            .state
            .clone()
            .with_timestamp(live.t_last)
            .with_stale(live.stale))
    }

    fn close(&mut self) -> Result<(), BackendError> {
        if let Some(mut live) = self.live.take() {
            if !live.closed {
                let seq = live.next_seq();
                let t = live.t_last;
                live.send(BridgeMessage::new(MessageType::Bye, t, seq, Vec::new()));
            }
            live.out = None;
            if let Some(h) = live.comm.take() {
                let _ = h.join();
            }
        }
        Ok(())
    }

    fn device_timestep(&self) -> Option<f64> {
        Some(1.0 / self.rate)
    }
}

//! In-process bridge server for tests and demos.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use crate::backend::{AnalyticalBackend, Backend};
use crate::record::DefRecord;
use crate::robot::RobotDefinition;

use super::protocol::{decode, encode, BridgeMessage, MessageType};

#[derive(Debug, Clone)]
pub enum LoopbackMode {
    /// Reply to every sense request with fixed records.
    Echo { state: DefRecord, output: DefRecord },
    /// Run the analytical model on received drive frames.
    Model,
    /// Complete the handshake, then never answer.
    Silent,
}

pub struct LoopbackServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    drives: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    /// Serve `def` on `bind` (use port 0 for an ephemeral port).
    pub fn start(def: RobotDefinition, mode: LoopbackMode, bind: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let drives = Arc::new(AtomicU64::new(0));
        let (st, dr) = (stop.clone(), drives.clone());
        let handle = std::thread::Builder::new()
            .name("bridge-loopback".into())
            .spawn(move || accept_loop(listener, def, mode, st, dr))?;
        Ok(LoopbackServer {
            addr,
            stop,
            drives,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("ws://{}/bridge", self.addr)
    }

    /// Drive frames received so far across all connections.
    pub fn drives_received(&self) -> u64 {
        self.drives.load(Ordering::SeqCst)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    def: RobotDefinition,
    mode: LoopbackMode,
    stop: Arc<AtomicBool>,
    drives: Arc<AtomicU64>,
) {
    let mut sessions = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (def, mode, stop, drives) =
                    (def.clone(), mode.clone(), stop.clone(), drives.clone());
                sessions.push(std::thread::spawn(move || {
                    if let Err(e) = session(stream, def, mode, stop, drives) {
                        log::debug!("loopback session ended: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5))
            }
            Err(_) => break,
        }
    }
    for s in sessions {
        let _ = s.join();
    }
}

fn session(
    stream: TcpStream,
    def: RobotDefinition,
    mode: LoopbackMode,
    stop: Arc<AtomicBool>,
    drives: Arc<AtomicU64>,
) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_ref()
        .set_read_timeout(Some(Duration::from_millis(5)))
        .map_err(|e| e.to_string())?;
    let mut model = AnalyticalBackend::new();
    model.init(&def, 0.0, 0).map_err(|e| e.to_string())?;
    let mut seq = 0u64;
    let send =
        |ws: &mut WebSocket<TcpStream>, msg: BridgeMessage| ws.send(Message::Text(encode(&msg)));

    while !stop.load(Ordering::SeqCst) {
        let text = match ws.read() {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => continue,
            Err(tungstenite::Error::Io(e))
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                continue
            }
            Err(e) => return Err(e.to_string()),
        };
        let msg = decode(&text).map_err(|e| e.to_string())?;
        match msg.kind {
            MessageType::Hello => {
                seq += 1;
                send(
                    &mut ws,
                    BridgeMessage::hello(seq, def.name(), &def.schema_digest()),
                )
                .map_err(|e| e.to_string())?;
            }
            MessageType::Drive => {
                drives.fetch_add(1, Ordering::SeqCst);
                if let LoopbackMode::Model = mode {
                    let input = DefRecord::from_flat(def.input_schema(), &msg.data)
                        .map_err(|e| e.to_string())?;
                    model.drive(&input, msg.t).map_err(|e| e.to_string())?;
                }
            }
            MessageType::SenseRequest => {
                let (state, output) = match &mode {
                    LoopbackMode::Silent => continue,
                    LoopbackMode::Echo { state, output } => (state.clone(), output.clone()),
                    LoopbackMode::Model => (
                        model.observe_state().map_err(|e| e.to_string())?,
                        model.sense().map_err(|e| e.to_string())?,
                    ),
                };
                // replies echo the request's sequence number
                send(
                    &mut ws,
                    BridgeMessage::new(MessageType::SenseReply, msg.t, msg.seq, output.flatten()),
                )
                .map_err(|e| e.to_string())?;
                send(
                    &mut ws,
                    BridgeMessage::new(MessageType::ObserveReply, msg.t, msg.seq, state.flatten()),
                )
                .map_err(|e| e.to_string())?;
            }
            MessageType::Bye => return Ok(()),
            _ => {}
        }
    }
    let _ = ws.close(None);
    Ok(())
}

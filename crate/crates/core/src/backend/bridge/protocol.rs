//! JSON text frames exchanged with a remote implementation.
//!
//! `{"type":"drive","t":0.01,"seq":1,"data":[["wh.l",6.2832,"rad/s"]]}`

use serde::{Deserialize, Serialize};

use crate::record::{FlatEntry, Unit};

use super::super::BackendError;

pub const PROTOCOL: &str = "rems-bridge/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageType {
    Hello,
    Drive,
    SenseRequest,
    SenseReply,
    ObserveReply,
    Bye,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Hello => "hello",
            MessageType::Drive => "drive",
            MessageType::SenseRequest => "sense_request",
            MessageType::SenseReply => "sense_reply",
            MessageType::ObserveReply => "observe_reply",
            MessageType::Bye => "bye",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hello" => MessageType::Hello,
            "drive" => MessageType::Drive,
            "sense_request" => MessageType::SenseRequest,
            "sense_reply" => MessageType::SenseReply,
            "observe_reply" => MessageType::ObserveReply,
            "bye" => MessageType::Bye,
            _ => return None,
        })
    }
}

/// Handshake fields, present only on `hello`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub protocol: String,
    pub definition: String,
    pub schema_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeMessage {
    pub kind: MessageType,
    pub t: f64,
    pub seq: u64,
    pub data: Vec<FlatEntry>,
    pub hello: Option<Hello>,
}

impl BridgeMessage {
    pub fn new(kind: MessageType, t: f64, seq: u64, data: Vec<FlatEntry>) -> Self {
        BridgeMessage {
            kind,
            t,
            seq,
            data,
            hello: None,
        }
    }

    pub fn hello(seq: u64, definition: &str, schema_hash: &str) -> Self {
        BridgeMessage {
            hello: Some(Hello {
                protocol: PROTOCOL.to_string(),
                definition: definition.to_string(),
                schema_hash: schema_hash.to_string(),
            }),
            ..BridgeMessage::new(MessageType::Hello, 0.0, seq, Vec::new())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    #[serde(rename = "type")]
    kind: String,
    t: f64,
    seq: u64,
    #[serde(default)]
    data: Vec<FlatEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    protocol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    definition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_hash: Option<String>,
}

pub fn encode(msg: &BridgeMessage) -> String {
    let hello = msg.hello.as_ref();
    let wire = Wire {
        kind: msg.kind.as_str().to_string(),
        t: msg.t,
        seq: msg.seq,
        data: msg.data.clone(),
        protocol: hello.map(|h| h.protocol.clone()),
        definition: hello.map(|h| h.definition.clone()),
        schema_hash: hello.map(|h| h.schema_hash.clone()),
    };
    serde_json::to_string(&wire).expect("frame serializes")
}

pub fn decode(text: &str) -> Result<BridgeMessage, BackendError> {
    let w: Wire =
        serde_json::from_str(text).map_err(|e| BackendError::MalformedFrame(e.to_string()))?;
    let kind = MessageType::parse(&w.kind).ok_or_else(|| {
        BackendError::MalformedFrame(format!("unknown message type `{}`", w.kind))
    })?;
    if !w.t.is_finite() {
        return Err(BackendError::MalformedFrame("non-finite t".into()));
    }
    for FlatEntry(k, v, u) in &w.data {
        Unit::lookup(u)
            .map_err(|_| BackendError::MalformedFrame(format!("bad unit `{u}` for `{k}`")))?;
        if !v.is_finite() {
            return Err(BackendError::MalformedFrame(format!(
                "non-finite value for `{k}`"
            )));
        }
    }
    let hello = match kind {
        MessageType::Hello => Some(Hello {
            protocol: w
                .protocol
                .ok_or_else(|| BackendError::MalformedFrame("hello without protocol".into()))?,
            definition: w.definition.unwrap_or_default(),
            schema_hash: w
                .schema_hash
                .ok_or_else(|| BackendError::MalformedFrame("hello without schema_hash".into()))?,
        }),
        _ => None,
    };
    Ok(BridgeMessage {
        kind,
        t: w.t,
        seq: w.seq,
        data: w.data,
        hello,
    })
}

/// Tracks the last sequence number seen per message type on one direction
/// of a connection.
#[derive(Debug, Default)]
pub struct SeqGuard {
    last: std::collections::BTreeMap<MessageType, u64>,
}

impl SeqGuard {
    /// False if `msg` does not advance its type's sequence.
    pub fn accept(&mut self, msg: &BridgeMessage) -> bool {
        match self.last.get(&msg.kind) {
            Some(&s) if msg.seq <= s => false,
            _ => {
                self.last.insert(msg.kind, msg.seq);
                true
            }
        }
    }
}

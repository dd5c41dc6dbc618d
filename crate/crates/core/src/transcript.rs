//! Channel transcripts: every message a protocol run puts on the wire.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ZInit,
    DeltaHat,
    XBroadcast,
    Share,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::ZInit => "z_init",
            MessageKind::DeltaHat => "delta_hat",
            MessageKind::XBroadcast => "x_broadcast",
            MessageKind::Share => "share",
        }
    }
}

/// Message payload: a real number, or an element of `Z_p` for shares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Real(f64),
    Field(u64),
}

impl Payload {
    pub fn real(self) -> Option<f64> {
        match self {
            Payload::Real(v) => Some(v),
            Payload::Field(_) => None,
        }
    }

    pub fn field(self) -> Option<u64> {
        match self {
            Payload::Field(v) => Some(v),
            Payload::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub t: usize,
    pub from: usize,
    pub to: usize,
    pub kind: MessageKind,
    /// Secure messages are invisible to an eavesdropper.
    pub secure: bool,
    pub payload: Payload,
    /// Quantizer level index for `delta_hat`; lane index for multi-lane
    /// `x_broadcast` runs.
    pub level_index: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: Message) {
        self.messages.push(msg);
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter()
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.kind == kind)
    }

    pub fn extend(&mut self, other: Transcript) {
        self.messages.extend(other.messages);
    }

    /// CSV with header `t,from,to,kind,secure,value,level_index`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,from,to,kind,secure,value,level_index\n");
        for m in &self.messages {
            let value = match m.payload {
                Payload::Real(v) => format!("{v:?}"),
                Payload::Field(v) => v.to_string(),
            };
            let level = m.level_index.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.t,
                m.from,
                m.to,
                m.kind.as_str(),
                m.secure,
                value,
                level
            );
        }
        out
    }
}

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

/// Fixed per-message header charge, in bytes.
pub const HEADER_BYTES: u64 = 32;

/// Bytes on the wire for a payload of `elements` f64 values.
pub fn message_bytes(elements: usize) -> u64 {
    8 * elements as u64 + HEADER_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Smashed,
    SmashedGrad,
    ClientParams,
    GlobalParams,
    ClientGrads,
    Control,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Smashed => "smashed",
            MessageKind::SmashedGrad => "smashed-grad",
            MessageKind::ClientParams => "client-params",
            MessageKind::GlobalParams => "global-params",
            MessageKind::ClientGrads => "client-grads",
            MessageKind::Control => "control",
        }
    }
}

/// A protocol participant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    Client(usize),
    /// The main (or only) server.
    Server,
    /// The SplitFed aggregator of client-side updates.
    FedServer,
}

impl Party {
    pub fn is_client(self) -> bool {
        matches!(self, Party::Client(_))
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Client(i) => write!(f, "client-{i}"),
            Party::Server => f.write_str("server"),
            Party::FedServer => f.write_str("fed-server"),
        }
    }
}

impl Serialize for Party {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Direction of a message relative to the clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Client to a server.
    Up,
    /// A server to a client.
    Down,
    /// Client to client (sequential handoff).
    Peer,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Peer => "peer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: Party,
    pub receiver: Party,
    pub epoch: usize,
    /// Synchronization step or batch index within the epoch.
    pub step: usize,
    pub elements: usize,
    pub bytes: u64,
}

impl Message {
    pub fn new(kind: MessageKind, sender: Party, receiver: Party, epoch: usize, step: usize, elements: usize) -> Self {
        Message {
            kind,
            sender,
            receiver,
            epoch,
            step,
            elements,
            bytes: message_bytes(elements),
        }
    }

    pub fn direction(&self) -> Direction {
        match (self.sender.is_client(), self.receiver.is_client()) {
            (true, true) => Direction::Peer,
            (true, false) => Direction::Up,
            _ => Direction::Down,
        }
    }
}

/// Append-only message log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<Message>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub messages: u64,
    pub bytes: u64,
}

impl Tally {
    fn add(&mut self, m: &Message) {
        self.messages += 1;
        self.bytes += m.bytes;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub total: Tally,
    pub by_kind: BTreeMap<String, Tally>,
    pub by_direction: BTreeMap<String, Tally>,
}

impl Transcript {
    pub fn log(&mut self, m: Message) {
        self.messages.push(m);
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    pub fn summarize<'a>(messages: impl IntoIterator<Item = &'a Message>) -> TranscriptSummary {
        let mut s = TranscriptSummary::default();
        for m in messages {
            s.total.add(m);
            s.by_kind.entry(m.kind.as_str().to_string()).or_default().add(m);
            s.by_direction
                .entry(m.direction().as_str().to_string())
                .or_default()
                .add(m);
        }
        s
    }

    pub fn summary(&self) -> TranscriptSummary {
        Self::summarize(&self.messages)
    }

    pub fn epoch_summary(&self, epoch: usize) -> TranscriptSummary {
        Self::summarize(self.messages.iter().filter(|m| m.epoch == epoch))
    }
}

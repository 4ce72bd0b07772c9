use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// The sender started a broadcast; the digest is that of the payload.
    Bcast,
    /// A message was handed to its recipient.
    Dispatch(&'static str),
    /// The adversary removed a message from a batch.
    Drop,
    /// A correct node delivered; the digest is that of the delivered payload.
    Deliver,
}

const DISPATCH_KINDS: [&str; 5] = ["SEND", "FORWARD", "BUNDLE", "ECHO", "RAW"];

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Bcast => "BCAST",
            EventKind::Dispatch(k) => k,
            EventKind::Drop => "DROP",
            EventKind::Deliver => "DELIVER",
        }
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "BCAST" => Ok(EventKind::Bcast),
            "DROP" => Ok(EventKind::Drop),
            "DELIVER" => Ok(EventKind::Deliver),
            other => DISPATCH_KINDS
                .iter()
                .find(|k| **k == other)
                .map(|k| EventKind::Dispatch(k))
                .ok_or(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub idx: u64,
    pub kind: EventKind,
    pub from: NodeId,
    pub to: NodeId,
    /// First 8 bytes of the SHA-256 digest of the message.
    pub digest: [u8; 8],
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} ", self.idx, self.kind.as_str(), self.from, self.to)?;
        for b in self.digest {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed event log line {line}: {text:?}")]
pub struct LogParseError {
    pub line: usize,
    pub text: String,
}

/// Ordered record of everything observable in a run.
///
/// Serializes to one `idx kind from to digest16` line per event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, kind: EventKind, from: NodeId, to: NodeId, digest: &[u8]) {
        self.events.push(Event {
            idx: self.events.len() as u64,
            kind,
            from,
            to,
            digest: digest[..8].try_into().expect("digest of at least 8 bytes"),
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 40);
        for e in &self.events {
            writeln!(out, "{e}").expect("writing to a String");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LogParseError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = || LogParseError { line: i + 1, text: line.to_string() };
            let f: Vec<&str> = line.split(' ').collect();
            let [idx, kind, from, to, digest] = f[..] else {
                return Err(err());
            };
            if digest.len() != 16 {
                return Err(err());
            }
            let mut d = [0u8; 8];
            for (j, b) in d.iter_mut().enumerate() {
                *b = u8::from_str_radix(&digest[2 * j..2 * j + 2], 16).map_err(|_| err())?;
            }
            let event = Event {
                idx: idx.parse().map_err(|_| err())?,
                kind: kind.parse().map_err(|_| err())?,
                from: NodeId(from.parse().map_err(|_| err())?),
                to: NodeId(to.parse().map_err(|_| err())?),
                digest: d,
            };
            if event.idx != events.len() as u64 {
                return Err(err());
            }
            events.push(event);
        }
        Ok(Self { events })
    }
}

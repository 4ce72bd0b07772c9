//! The contract between a broadcast node state machine and the simulator.

use std::fmt;

use bytes::Bytes;

use crate::crypto::{hash, Commitment, Digest};
use crate::NodeId;

/// A protocol message as seen by the network: it has a kind for the event
/// log, a metered size and a canonical byte encoding.
pub trait WireMessage: Clone + fmt::Debug {
    fn kind_name(&self) -> &'static str;

    fn metered_size_bits(&self) -> u64;

    /// Streams the canonical encoding into `sink`.
    fn write_canonical(&self, sink: &mut dyn FnMut(&[u8]));

    /// Messages a correct node addresses to itself that it processes
    /// internally before the adversary sees the batch.
    fn immediate_self_delivery(&self) -> bool {
        false
    }

    /// How much a content-aware adversary wants to suppress this message.
    fn content_weight(&self) -> u8 {
        0
    }

    fn canonical_digest(&self) -> Digest {
        use sha2::Digest as _;
        let mut h = sha2::Sha256::new();
        self.write_canonical(&mut |b| h.update(b));
        h.finalize().into()
    }
}

/// Output of a send-to-all primitive.
#[derive(Debug, Clone, PartialEq)]
pub enum Transmission<M> {
    /// One message per node, in id order; `None` is an empty slot.
    Comm(Vec<Option<M>>),
    /// The same message to every node.
    Broadcast(M),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub message: Bytes,
    pub at_event: u64,
}

impl Delivery {
    pub fn digest(&self) -> Digest {
        hash(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<M> {
    pub transmissions: Vec<Transmission<M>>,
    pub delivery: Option<Delivery>,
}

impl<M> Default for Step<M> {
    fn default() -> Self {
        Self {
            transmissions: Vec::new(),
            delivery: None,
        }
    }
}

impl<M> Step<M> {
    pub fn broadcast(msg: M) -> Self {
        Self {
            transmissions: vec![Transmission::Broadcast(msg)],
            delivery: None,
        }
    }

    pub fn extend(&mut self, other: Step<M>) {
        self.transmissions.extend(other.transmissions);
        if other.delivery.is_some() {
            debug_assert!(self.delivery.is_none(), "two deliveries in one step");
            self.delivery = other.delivery;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.transmissions.is_empty() && self.delivery.is_none()
    }
}

/// Observable end state of a correct node, used by the property checkers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalState {
    pub id: NodeId,
    /// The single commitment this node vouched for, if any.
    pub signed: Option<Commitment>,
    pub delivered: Option<Delivery>,
    /// Commitment of the delivered message.
    pub delivered_commitment: Option<Commitment>,
}

/// A single-owner node state machine driven one event at a time.
pub trait Engine {
    type Message: WireMessage;
    type Error: std::error::Error + Send + Sync + 'static;

    fn id(&self) -> NodeId;

    /// Starts a broadcast of `payload`; only the designated sender may call it.
    fn start_broadcast(&mut self, payload: &[u8], at: u64) -> Result<Step<Self::Message>, Self::Error>;

    fn receive(&mut self, from: NodeId, msg: &Self::Message, at: u64) -> Step<Self::Message>;

    /// Parses raw bytes off the wire; malformed input yields `None`.
    fn decode(&self, raw: &[u8]) -> Option<Self::Message>;

    fn final_state(&self) -> FinalState;

    /// Checks internal invariants, returning a description of the first violation.
    fn audit(&self) -> Result<(), String> {
        Ok(())
    }
}

//! Uncoded signed echo broadcast, used only to compare communication cost.
//!
//! The sender broadcasts the whole message with its share on the message
//! hash. A node that first accepts the message adds its own share and
//! re-broadcasts the message with every share it holds. Once more than
//! (n + t) / 2 shares are held the node delivers and broadcasts the message
//! with the full share set, unless its previous broadcast already carried a
//! quorum. Each node broadcasts at most twice, so every re-broadcasting node
//! pays at least n * |m| bytes.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;
use thiserror::Error;

use crate::crypto::{Commitment, Keyring, SignatureShare};
use crate::engine::{Delivery, Engine, FinalState, Step, WireMessage};
use crate::NodeId;

const FRAMING_BITS: u64 = 24;
const ECHO_TAG: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EchoMessage {
    pub payload: Bytes,
    pub shares: Vec<SignatureShare>,
}

impl WireMessage for EchoMessage {
    fn kind_name(&self) -> &'static str {
        "ECHO"
    }

    fn metered_size_bits(&self) -> u64 {
        FRAMING_BITS
            + 8 * self.payload.len() as u64
            + self.shares.iter().map(SignatureShare::metered_size_bits).sum::<u64>()
    }

    fn write_canonical(&self, sink: &mut dyn FnMut(&[u8])) {
        sink(&[ECHO_TAG]);
        sink(&(self.payload.len() as u32).to_be_bytes());
        sink(&self.payload);
        sink(&(self.shares.len() as u16).to_be_bytes());
        for s in &self.shares {
            sink(&(s.signer().0 as u16).to_be_bytes());
            sink(s.mac());
        }
    }
}

impl EchoMessage {
    fn decode(raw: &[u8], n: usize) -> Option<Self> {
        let (&tag, rest) = raw.split_first()?;
        if tag != ECHO_TAG || rest.len() < 4 {
            return None;
        }
        let (len, rest) = rest.split_at(4);
        let len = u32::from_be_bytes(len.try_into().ok()?) as usize;
        if rest.len() < len + 2 {
            return None;
        }
        let (payload, rest) = rest.split_at(len);
        let (count, mut rest) = rest.split_at(2);
        let count = u16::from_be_bytes(count.try_into().ok()?) as usize;
        if rest.len() != count * 34 {
            return None;
        }
        let c = Commitment::plain_hash(payload);
        let mut shares = Vec::with_capacity(count);
        for _ in 0..count {
            let (head, tail) = rest.split_at(34);
            let signer = NodeId(u16::from_be_bytes([head[0], head[1]]) as usize);
            shares.push(SignatureShare::from_parts(signer, c, head[2..].try_into().ok()?, n));
            rest = tail;
        }
        Some(Self {
            payload: Bytes::copy_from_slice(payload),
            shares,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("node {0} is not the designated sender")]
    NotSender(NodeId),
    #[error("this instance already broadcast a message")]
    DoubleBroadcast,
    #[error("payload must not be empty")]
    EmptyPayload,
}

#[derive(Debug, Clone)]
pub struct EchoNode {
    id: NodeId,
    sender: NodeId,
    keyring: Arc<Keyring>,
    accepted: Option<(Commitment, Bytes)>,
    shares: BTreeMap<NodeId, SignatureShare>,
    broadcasts: u8,
    last_broadcast_had_quorum: bool,
    delivered: Option<Delivery>,
}

impl EchoNode {
    pub fn new(id: NodeId, sender: NodeId, keyring: Arc<Keyring>) -> Self {
        Self {
            id,
            sender,
            keyring,
            accepted: None,
            shares: BTreeMap::new(),
            broadcasts: 0,
            last_broadcast_had_quorum: false,
            delivered: None,
        }
    }

    pub fn broadcasts(&self) -> u8 {
        self.broadcasts
    }

    pub fn delivered(&self) -> Option<&Delivery> {
        self.delivered.as_ref()
    }

    fn has_quorum(&self) -> bool {
        self.shares.len() >= self.keyring.tau()
    }

    fn echo(&mut self) -> EchoMessage {
        let (_, payload) = self.accepted.as_ref().expect("echo after accepting");
        self.broadcasts += 1;
        self.last_broadcast_had_quorum = self.shares.len() >= self.keyring.tau();
        EchoMessage {
            payload: payload.clone(),
            shares: self.shares.values().cloned().collect(),
        }
    }

    fn accept(&mut self, c: Commitment, payload: Bytes) {
        let own = self.keyring.ts_sign_share(self.id, &c).expect("node ids come from the keyring");
        self.shares.insert(self.id, own);
        self.accepted = Some((c, payload));
    }

    pub fn baseline_broadcast(&mut self, payload: &[u8]) -> Result<Step<EchoMessage>, BaselineError> {
        if self.id != self.sender {
            return Err(BaselineError::NotSender(self.id));
        }
        if self.accepted.is_some() {
            return Err(BaselineError::DoubleBroadcast);
        }
        if payload.is_empty() {
            return Err(BaselineError::EmptyPayload);
        }
        let payload = Bytes::copy_from_slice(payload);
        self.accept(Commitment::plain_hash(&payload), payload);
        Ok(Step::broadcast(self.echo()))
    }

    pub fn handle(&mut self, from: NodeId, msg: &EchoMessage, at: u64) -> Step<EchoMessage> {
        let _ = from;
        let c = match &self.accepted {
            Some((c, p)) if *p == msg.payload => *c,
            Some(_) => return Step::default(),
            None => Commitment::plain_hash(&msg.payload),
        };
        let all_valid = msg.shares.iter().all(|s| {
            self.shares.get(&s.signer()) == Some(s) || self.keyring.ts_verify_share(&c, s, s.signer())
        });
        let has_sender = msg.shares.iter().any(|s| s.signer() == self.sender);
        if msg.payload.is_empty() || !all_valid || !has_sender {
            return Step::default();
        }
        let first = self.accepted.is_none();
        if first {
            self.accept(c, msg.payload.clone());
        }
        for s in &msg.shares {
            self.shares.entry(s.signer()).or_insert_with(|| s.clone());
        }

        let mut step = Step::default();
        if first {
            step = Step::broadcast(self.echo());
        }
        if self.delivered.is_none() && self.has_quorum() {
            let (_, payload) = self.accepted.as_ref().expect("accepted above");
            let delivery = Delivery {
                message: payload.clone(),
                at_event: at,
            };
            self.delivered = Some(delivery.clone());
            step.delivery = Some(delivery);
            if !self.last_broadcast_had_quorum && self.broadcasts < 2 {
                let echo = self.echo();
                step.transmissions.push(crate::engine::Transmission::Broadcast(echo));
            }
        }
        step
    }
}

impl Engine for EchoNode {
    type Message = EchoMessage;
    type Error = BaselineError;

    fn id(&self) -> NodeId {
        self.id
    }

    fn start_broadcast(&mut self, payload: &[u8], _at: u64) -> Result<Step<EchoMessage>, BaselineError> {
        self.baseline_broadcast(payload)
    }

    fn receive(&mut self, from: NodeId, msg: &EchoMessage, at: u64) -> Step<EchoMessage> {
        self.handle(from, msg, at)
    }

    fn decode(&self, raw: &[u8]) -> Option<EchoMessage> {
        EchoMessage::decode(raw, self.keyring.n())
    }

    fn final_state(&self) -> FinalState {
        let signed = self.accepted.as_ref().map(|(c, _)| *c);
        FinalState {
            id: self.id,
            signed,
            delivered: self.delivered.clone(),
            delivered_commitment: self.delivered.as_ref().and(signed),
        }
    }
}

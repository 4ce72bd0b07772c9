use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;
use rand::seq::index;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::Wire;
use crate::baseline::EchoMessage;
use crate::crypto::{
    Commitment, InclusionProof, Keyring, SignatureShare, ThresholdSignature, VectorCommitment,
};
use crate::ecc::Fragment;
use crate::engine::{Engine, Transmission};
use crate::protocol::{compute_frag_vec_commit, CodedNode, FragmentTuple, ProtocolConfig, ProtocolMessage};
use crate::NodeId;

/// A point-to-point message emitted by a Byzantine node.
#[derive(Debug, Clone)]
pub struct Unicast<M> {
    pub to: NodeId,
    pub wire: Wire<M>,
}

pub struct ByzContext<'a> {
    pub n: usize,
    pub at: u64,
    pub rng: &'a mut ChaCha8Rng,
}

impl ByzContext<'_> {
    /// A uniformly random non-empty subset of nodes other than `me`.
    fn random_targets(&mut self, me: NodeId) -> Vec<NodeId> {
        let others: Vec<NodeId> = NodeId::all(self.n).filter(|&i| i != me).collect();
        if others.is_empty() {
            return others;
        }
        let count = self.rng.gen_range(1..=others.len());
        let mut picked: Vec<NodeId> = index::sample(self.rng, others.len(), count)
            .into_iter()
            .map(|i| others[i])
            .collect();
        picked.sort_unstable();
        picked
    }

    fn random_bytes(&mut self, max: usize) -> Bytes {
        let mut buf = vec![0u8; self.rng.gen_range(0..=max)];
        self.rng.fill_bytes(&mut buf);
        Bytes::from(buf)
    }

    fn digest(&mut self) -> [u8; 32] {
        let mut d = [0u8; 32];
        self.rng.fill_bytes(&mut d);
        d
    }
}

/// Behavior of a Byzantine node. Output bypasses the message adversary; the
/// simulator caps how many messages each Byzantine node may send.
pub trait ByzantineActor<M> {
    fn on_start(&mut self, _ctx: &mut ByzContext<'_>) -> Vec<Unicast<M>> {
        Vec::new()
    }

    fn on_message(&mut self, _from: NodeId, _wire: &Wire<M>, _ctx: &mut ByzContext<'_>) -> Vec<Unicast<M>> {
        Vec::new()
    }
}

/// Crashed or silent: never sends.
pub struct Inert;

impl<M> ByzantineActor<M> for Inert {}

fn to_all<M>(targets: &[NodeId], msg: M) -> Vec<Unicast<M>> {
    let msg = Arc::new(msg);
    targets
        .iter()
        .map(|&to| Unicast { to, wire: Wire::Msg(msg.clone()) })
        .collect()
}

fn raw_to<M>(targets: &[NodeId], bytes: Bytes) -> Vec<Unicast<M>> {
    targets
        .iter()
        .map(|&to| Unicast { to, wire: Wire::Raw(bytes.clone()) })
        .collect()
}

/// Emits random bytes and plausible but invalid coded-protocol messages. It
/// also signs every commitment it sees, which a Byzantine node may do.
pub struct CodedGarbage {
    id: NodeId,
    config: Arc<ProtocolConfig>,
    /// Genuine sender shares observed per commitment.
    seen: BTreeMap<Commitment, SignatureShare>,
}

impl CodedGarbage {
    pub fn new(id: NodeId, config: Arc<ProtocolConfig>) -> Self {
        Self { id, config, seen: BTreeMap::new() }
    }

    fn random_tuple(&self, index: usize, ctx: &mut ByzContext<'_>) -> FragmentTuple {
        let mut data = vec![0u8; self.config.params.fragment_len];
        ctx.rng.fill_bytes(&mut data);
        let path = ctx.random_bytes(96);
        FragmentTuple {
            fragment: Fragment { index, data: Bytes::from(data) },
            proof: InclusionProof {
                index,
                path,
                metered_size_bits: self.config.vc.proof_size_bits(self.config.n()),
            },
        }
    }

    fn forged_share(&self, signer: NodeId, c: Commitment, ctx: &mut ByzContext<'_>) -> SignatureShare {
        SignatureShare::from_parts(signer, c, ctx.digest(), self.config.n())
    }

    fn burst(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<ProtocolMessage>> {
        let targets = ctx.random_targets(self.id);
        let Some(&first) = targets.first() else {
            return Vec::new();
        };
        let keyring = &self.config.keyring;
        let sender = self.config.sender;
        let known = (!self.seen.is_empty()).then(|| {
            let i = ctx.rng.gen_range(0..self.seen.len());
            let (c, s) = self.seen.iter().nth(i).expect("index in range");
            (*c, s.clone())
        });
        let random_c = Commitment { digest: ctx.digest(), scheme: self.config.vc.scheme_id() };
        let c = known.as_ref().map_or(random_c, |(c, _)| *c);
        let own = keyring.ts_sign_share(self.id, &c).expect("own id is in the keyring");
        let sender_share = match &known {
            Some((_, s)) => s.clone(),
            None => self.forged_share(sender, c, ctx),
        };

        match ctx.rng.gen_range(0..5) {
            0 => raw_to(&targets, ctx.random_bytes(128)),
            1 => {
                let tuple = self.random_tuple(first.0, ctx);
                let share = self.forged_share(sender, random_c, ctx);
                to_all(&targets, ProtocolMessage::Send { commitment: random_c, tuple, sender_share: share })
            }
            2 => {
                let tuple = self.random_tuple(self.id.0, ctx);
                to_all(&targets, ProtocolMessage::Forward { commitment: c, tuple: Some(tuple), shares: [sender_share, own] })
            }
            3 => to_all(&targets, ProtocolMessage::Forward { commitment: c, tuple: None, shares: [sender_share, own] }),
            _ => {
                let evidence: Vec<SignatureShare> = NodeId::all(keyring.tau())
                    .map(|i| if i == self.id { own.clone() } else { self.forged_share(i, c, ctx) })
                    .collect();
                let sigma = ThresholdSignature::from_evidence_unchecked(c, evidence);
                let own_tuple = self.random_tuple(self.id.0, ctx);
                let yours = Some(self.random_tuple(first.0, ctx));
                to_all(&targets, ProtocolMessage::Bundle { commitment: c, own: own_tuple, yours, sigma })
            }
        }
    }
}

impl ByzantineActor<ProtocolMessage> for CodedGarbage {
    fn on_start(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<ProtocolMessage>> {
        self.burst(ctx)
    }

    fn on_message(
        &mut self,
        _from: NodeId,
        wire: &Wire<ProtocolMessage>,
        ctx: &mut ByzContext<'_>,
    ) -> Vec<Unicast<ProtocolMessage>> {
        if let Wire::Msg(m) = wire {
            let shares: &[SignatureShare] = match &**m {
                ProtocolMessage::Send { sender_share, .. } => std::slice::from_ref(sender_share),
                ProtocolMessage::Forward { shares, .. } => shares,
                ProtocolMessage::Bundle { .. } => &[],
            };
            let keyring = &self.config.keyring;
            for s in shares {
                if s.signer() == self.config.sender && keyring.ts_verify_share(s.commitment(), s, s.signer()) {
                    self.seen.entry(*s.commitment()).or_insert_with(|| s.clone());
                }
            }
        }
        if ctx.rng.gen_ratio(1, 3) {
            self.burst(ctx)
        } else {
            Vec::new()
        }
    }
}

/// Garbage for the uncoded comparator: random bytes and echoes of random
/// payloads with forged sender shares.
pub struct EchoGarbage {
    id: NodeId,
    keyring: Arc<Keyring>,
    sender: NodeId,
}

impl EchoGarbage {
    pub fn new(id: NodeId, sender: NodeId, keyring: Arc<Keyring>) -> Self {
        Self { id, keyring, sender }
    }

    fn burst(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<EchoMessage>> {
        let targets = ctx.random_targets(self.id);
        if ctx.rng.gen_bool(0.5) {
            return raw_to(&targets, ctx.random_bytes(128));
        }
        let payload = ctx.random_bytes(64);
        let c = Commitment::plain_hash(&payload);
        let own = self.keyring.ts_sign_share(self.id, &c).expect("own id is in the keyring");
        let forged = SignatureShare::from_parts(self.sender, c, ctx.digest(), self.keyring.n());
        to_all(&targets, EchoMessage { payload, shares: vec![forged, own] })
    }
}

impl ByzantineActor<EchoMessage> for EchoGarbage {
    fn on_start(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<EchoMessage>> {
        self.burst(ctx)
    }

    fn on_message(&mut self, _from: NodeId, _wire: &Wire<EchoMessage>, ctx: &mut ByzContext<'_>) -> Vec<Unicast<EchoMessage>> {
        if ctx.rng.gen_ratio(1, 3) {
            self.burst(ctx)
        } else {
            Vec::new()
        }
    }
}

/// A Byzantine sender that commits to two messages and interleaves the SENDs
/// so that even-id nodes see the first commitment first and odd-id nodes the
/// second.
pub struct Equivocator {
    id: NodeId,
    config: Arc<ProtocolConfig>,
    messages: [Bytes; 2],
}

impl Equivocator {
    pub fn new(id: NodeId, config: Arc<ProtocolConfig>, m1: Bytes, m2: Bytes) -> Self {
        Self { id, config, messages: [m1, m2] }
    }
}

impl ByzantineActor<ProtocolMessage> for Equivocator {
    fn on_start(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<ProtocolMessage>> {
        let keyring = &self.config.keyring;
        let halves: Vec<_> = self
            .messages
            .iter()
            .map(|m| {
                let (c, tuples) = compute_frag_vec_commit(m, &self.config).expect("payload matches the code parameters");
                let share = keyring.ts_sign_share(self.id, &c).expect("sender is in the keyring");
                (c, tuples, share)
            })
            .collect();
        let mut out = Vec::new();
        for to in NodeId::all(ctx.n).filter(|&j| j != self.id) {
            let order: [usize; 2] = if to.0 % 2 == 0 { [0, 1] } else { [1, 0] };
            for h in order {
                let (c, tuples, share) = &halves[h];
                let i = to.index().expect("valid id");
                let me = self.id.index().expect("valid id");
                for msg in [
                    ProtocolMessage::Send { commitment: *c, tuple: tuples[i].clone(), sender_share: share.clone() },
                    ProtocolMessage::Forward {
                        commitment: *c,
                        tuple: Some(tuples[me].clone()),
                        shares: [share.clone(), share.clone()],
                    },
                ] {
                    out.push(Unicast { to, wire: Wire::Msg(Arc::new(msg)) });
                }
            }
        }
        out
    }
}

/// Runs the protocol faithfully but flips a byte of every fragment it sends,
/// keeping the original inclusion proof.
pub struct Mutator {
    node: CodedNode,
    payload: Option<Bytes>,
}

impl Mutator {
    /// `payload` is broadcast at start when this node is the sender.
    pub fn new(node: CodedNode, payload: Option<Bytes>) -> Self {
        Self { node, payload }
    }

    fn mutate(tuple: &mut FragmentTuple) {
        let mut data = tuple.fragment.data.to_vec();
        if let Some(b) = data.first_mut() {
            *b ^= 0x01;
        }
        tuple.fragment.data = Bytes::from(data);
    }

    fn corrupt(mut msg: ProtocolMessage) -> ProtocolMessage {
        match &mut msg {
            ProtocolMessage::Send { tuple, .. } => Self::mutate(tuple),
            ProtocolMessage::Forward { tuple, .. } => tuple.iter_mut().for_each(Self::mutate),
            ProtocolMessage::Bundle { own, yours, .. } => {
                Self::mutate(own);
                yours.iter_mut().for_each(Self::mutate);
            }
        }
        msg
    }

    fn relay(&self, transmissions: Vec<Transmission<ProtocolMessage>>, n: usize) -> Vec<Unicast<ProtocolMessage>> {
        let mut out = Vec::new();
        for tx in transmissions {
            match tx {
                Transmission::Comm(slots) => {
                    for (to, msg) in NodeId::all(n).zip(slots) {
                        if let Some(m) = msg.filter(|_| to != self.node.id()) {
                            out.push(Unicast { to, wire: Wire::Msg(Arc::new(Self::corrupt(m))) });
                        }
                    }
                }
                Transmission::Broadcast(m) => {
                    let targets: Vec<NodeId> = NodeId::all(n).filter(|&j| j != self.node.id()).collect();
                    out.extend(to_all(&targets, Self::corrupt(m)));
                }
            }
        }
        out
    }
}

impl ByzantineActor<ProtocolMessage> for Mutator {
    fn on_start(&mut self, ctx: &mut ByzContext<'_>) -> Vec<Unicast<ProtocolMessage>> {
        let Some(payload) = self.payload.take() else {
            return Vec::new();
        };
        match self.node.mbrb_broadcast(&payload) {
            Ok(step) => self.relay(step.transmissions, ctx.n),
            Err(_) => Vec::new(),
        }
    }

    fn on_message(
        &mut self,
        from: NodeId,
        wire: &Wire<ProtocolMessage>,
        ctx: &mut ByzContext<'_>,
    ) -> Vec<Unicast<ProtocolMessage>> {
        let msg = match wire {
            Wire::Msg(m) => (**m).clone(),
            Wire::Raw(raw) => match self.node.decode(raw) {
                Some(m) => m,
                None => return Vec::new(),
            },
        };
        let step = self.node.handle_message(from, &msg, ctx.at);
        self.relay(step.transmissions, ctx.n)
    }
}

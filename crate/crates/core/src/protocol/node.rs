use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use bytes::Bytes;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::message::{FragmentTuple, ProtocolMessage};
use crate::crypto::{
    Commitment, CryptoError, Digest, Keyring, SignatureShare, ThresholdSignature, VcScheme,
    VectorCommitment,
};
use crate::ecc::{self, CodeParams, EccError};
use crate::engine::{Delivery, Engine, FinalState, Step, Transmission};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("node {0} is not the designated sender")]
    NotSender(NodeId),
    #[error("this instance already broadcast a message")]
    DoubleBroadcast,
    #[error(transparent)]
    Ecc(#[from] EccError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Parameters shared by every node of one broadcast instance.
#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub sender: NodeId,
    pub params: CodeParams,
    pub vc: VcScheme,
    pub keyring: Arc<Keyring>,
}

impl ProtocolConfig {
    pub fn new(
        keyring: Arc<Keyring>,
        k: usize,
        payload_len: usize,
        sender: NodeId,
        vc: VcScheme,
    ) -> Result<Self, ProtocolError> {
        let params = CodeParams::derive(keyring.n(), k, payload_len)?;
        Ok(Self { sender, params, vc, keyring })
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    /// Index and length checks every fragment tuple must pass before any
    /// cryptographic verification.
    pub fn well_formed(&self, tuple: &FragmentTuple) -> bool {
        let i = tuple.index();
        (1..=self.n()).contains(&i)
            && tuple.proof.index == i
            && tuple.fragment.data.len() == self.params.fragment_len
    }
}

/// Encodes `message`, commits to the fragment vector and pairs every
/// fragment with its inclusion proof.
pub fn compute_frag_vec_commit(
    message: &[u8],
    config: &ProtocolConfig,
) -> Result<(Commitment, Vec<FragmentTuple>), ProtocolError> {
    let fragments = ecc::encode_split(message, &config.params)?;
    let elements: Vec<&[u8]> = fragments.iter().map(|f| &f.data[..]).collect();
    let (commitment, proofs) = config.vc.vc_commit(&elements)?;
    let tuples = fragments
        .into_iter()
        .zip(proofs)
        .map(|(fragment, proof)| FragmentTuple { fragment, proof })
        .collect();
    Ok((commitment, tuples))
}

/// Signatures carried by a message: a set of shares or one threshold signature.
#[derive(Debug, Clone, Copy)]
pub enum Signatures<'a> {
    Shares(&'a [SignatureShare]),
    Threshold(&'a ThresholdSignature),
}

/// Checks the signatures and inclusion proofs of a received message against `c`.
///
/// Share sets must all verify and include the designated sender's share; a
/// threshold signature must verify. Every present fragment tuple must carry a
/// valid inclusion proof.
pub fn is_valid(
    config: &ProtocolConfig,
    c: &Commitment,
    frags: &[Option<&FragmentTuple>],
    sigs: Signatures<'_>,
) -> bool {
    Validator { config, known: None }.is_valid(c, frags, sigs)
}

/// Skips re-verifying objects byte-identical to ones already verified and stored.
struct Validator<'a> {
    config: &'a ProtocolConfig,
    known: Option<&'a CommitmentStore>,
}

impl Validator<'_> {
    fn share_ok(&self, c: &Commitment, share: &SignatureShare) -> bool {
        let known = self
            .known
            .and_then(|s| s.shares.get(&share.signer()))
            .is_some_and(|s| s == share);
        known || self.config.keyring.ts_verify_share(c, share, share.signer())
    }

    fn tuple_ok(&self, c: &Commitment, tuple: &FragmentTuple) -> bool {
        let known = self
            .known
            .and_then(|s| s.fragments.get(&tuple.index()))
            .is_some_and(|t| t == tuple);
        known
            || self
                .config
                .vc
                .vc_verify(c, &tuple.proof, &tuple.fragment.data, tuple.index())
    }

    fn sigma_ok(&self, c: &Commitment, sigma: &ThresholdSignature) -> bool {
        let known = self
            .known
            .and_then(|s| s.sigma.as_ref())
            .is_some_and(|s| s == sigma);
        known || self.config.keyring.ts_verify(c, sigma)
    }

    fn is_valid(&self, c: &Commitment, frags: &[Option<&FragmentTuple>], sigs: Signatures<'_>) -> bool {
        let sigs_ok = match sigs {
            Signatures::Shares(shares) => {
                shares.iter().all(|s| self.share_ok(c, s))
                    && shares.iter().any(|s| s.signer() == self.config.sender)
            }
            Signatures::Threshold(sigma) => self.sigma_ok(c, sigma),
        };
        sigs_ok && frags.iter().flatten().all(|t| self.tuple_ok(c, t))
    }
}

/// Everything a node stored for one commitment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitmentStore {
    pub fragments: BTreeMap<usize, FragmentTuple>,
    pub shares: BTreeMap<NodeId, SignatureShare>,
    pub sigma: Option<ThresholdSignature>,
}

/// State of one node running the coded broadcast.
#[derive(Debug, Clone)]
pub struct CodedNode {
    id: NodeId,
    config: Arc<ProtocolConfig>,
    signed: Option<Commitment>,
    stores: BTreeMap<Commitment, CommitmentStore>,
    // Commitments whose reconstruction did not re-encode to themselves.
    poisoned: BTreeSet<Commitment>,
    broadcast_started: bool,
    forwarded_after_send: bool,
    forward_sent: bool,
    bundle_sent: bool,
    delivered: Option<(Delivery, Commitment)>,
}

impl CodedNode {
    pub fn new(id: NodeId, config: Arc<ProtocolConfig>) -> Self {
        Self {
            id,
            config,
            signed: None,
            stores: BTreeMap::new(),
            poisoned: BTreeSet::new(),
            broadcast_started: false,
            forwarded_after_send: false,
            forward_sent: false,
            bundle_sent: false,
            delivered: None,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn is_sender(&self) -> bool {
        self.id == self.config.sender
    }

    pub fn signed_commitment(&self) -> Option<&Commitment> {
        self.signed.as_ref()
    }

    pub fn store(&self, c: &Commitment) -> Option<&CommitmentStore> {
        self.stores.get(c)
    }

    pub fn delivered(&self) -> Option<&Delivery> {
        self.delivered.as_ref().map(|(d, _)| d)
    }

    pub fn forward_sent(&self) -> bool {
        self.forward_sent
    }

    pub fn bundle_sent(&self) -> bool {
        self.bundle_sent
    }

    pub fn is_poisoned(&self, c: &Commitment) -> bool {
        self.poisoned.contains(c)
    }

    fn validator(&self, c: &Commitment) -> Validator<'_> {
        Validator {
            config: &self.config,
            known: self.stores.get(c),
        }
    }

    fn entry(&mut self, c: &Commitment) -> &mut CommitmentStore {
        self.stores.entry(*c).or_default()
    }

    fn sign(&mut self, c: &Commitment) -> SignatureShare {
        debug_assert!(self.signed.is_none_or(|s| s == *c), "signing a second commitment");
        self.signed = Some(*c);
        let share = self
            .config
            .keyring
            .ts_sign_share(self.id, c)
            .expect("node ids come from the keyring");
        let id = self.id;
        self.entry(c).shares.insert(id, share.clone());
        share
    }

    fn signed_other(&self, c: &Commitment) -> bool {
        self.signed.is_some_and(|s| s != *c)
    }

    fn sender_share<'s>(&self, shares: &'s [SignatureShare]) -> &'s SignatureShare {
        shares
            .iter()
            .find(|s| s.signer() == self.config.sender)
            .expect("validated share sets contain the sender's share")
    }

    /// Starts the broadcast of `message`: one SEND per node, each carrying
    /// that node's fragment and the sender's share on the commitment.
    pub fn mbrb_broadcast(&mut self, message: &[u8]) -> Result<Step<ProtocolMessage>, ProtocolError> {
        if !self.is_sender() {
            return Err(ProtocolError::NotSender(self.id));
        }
        if self.broadcast_started {
            return Err(ProtocolError::DoubleBroadcast);
        }
        let (commitment, tuples) = compute_frag_vec_commit(message, &self.config)?;
        self.broadcast_started = true;
        let sender_share = self.sign(&commitment);
        let sends = tuples
            .into_iter()
            .map(|tuple| {
                Some(ProtocolMessage::Send {
                    commitment,
                    tuple,
                    sender_share: sender_share.clone(),
                })
            })
            .collect();
        Ok(Step {
            transmissions: vec![Transmission::Comm(sends)],
            delivery: None,
        })
    }

    /// Applies one received message and then re-evaluates the delivery condition.
    pub fn handle_message(&mut self, from: NodeId, msg: &ProtocolMessage, at: u64) -> Step<ProtocolMessage> {
        let mut step = match msg {
            ProtocolMessage::Send { commitment, tuple, sender_share } => {
                self.handle_send(from, commitment, tuple, sender_share)
            }
            ProtocolMessage::Forward { commitment, tuple, shares } => {
                self.handle_forward(from, commitment, tuple.as_ref(), shares)
            }
            ProtocolMessage::Bundle { commitment, own, yours, sigma } => {
                self.handle_bundle(from, commitment, own, yours.as_ref(), sigma)
            }
        };
        step.extend(self.check_quorum_and_deliver(at));
        step
    }

    pub fn handle_send(
        &mut self,
        from: NodeId,
        c: &Commitment,
        tuple: &FragmentTuple,
        sender_share: &SignatureShare,
    ) -> Step<ProtocolMessage> {
        if from != self.config.sender
            || tuple.index() != self.id.0
            || !self.config.well_formed(tuple)
        {
            return Step::default();
        }
        let valid = self.validator(c).is_valid(
            c,
            &[Some(tuple)],
            Signatures::Shares(std::slice::from_ref(sender_share)),
        );
        if !valid || self.forwarded_after_send || self.signed_other(c) {
            return Step::default();
        }
        let own_share = self.sign(c);
        let store = self.entry(c);
        store.fragments.insert(tuple.index(), tuple.clone());
        store.shares.insert(sender_share.signer(), sender_share.clone());
        self.forwarded_after_send = true;
        self.forward_sent = true;
        Step::broadcast(ProtocolMessage::Forward {
            commitment: *c,
            tuple: Some(tuple.clone()),
            shares: [sender_share.clone(), own_share],
        })
    }

    pub fn handle_forward(
        &mut self,
        from: NodeId,
        c: &Commitment,
        tuple: Option<&FragmentTuple>,
        shares: &[SignatureShare; 2],
    ) -> Step<ProtocolMessage> {
        if let Some(t) = tuple {
            if t.index() != from.0 || !self.config.well_formed(t) {
                return Step::default();
            }
        }
        let valid = self
            .validator(c)
            .is_valid(c, &[tuple], Signatures::Shares(shares));
        if !valid || self.signed_other(c) {
            return Step::default();
        }
        let sender_share = self.sender_share(shares).clone();
        let store = self.entry(c);
        for s in shares {
            store.shares.insert(s.signer(), s.clone());
        }
        if let Some(t) = tuple {
            store.fragments.insert(t.index(), t.clone());
        }
        if self.forward_sent {
            return Step::default();
        }
        let own_share = self.sign(c);
        self.forward_sent = true;
        Step::broadcast(ProtocolMessage::Forward {
            commitment: *c,
            tuple: None,
            shares: [sender_share, own_share],
        })
    }

    pub fn handle_bundle(
        &mut self,
        from: NodeId,
        c: &Commitment,
        theirs: &FragmentTuple,
        mine: Option<&FragmentTuple>,
        sigma: &ThresholdSignature,
    ) -> Step<ProtocolMessage> {
        if theirs.index() != from.0 || !self.config.well_formed(theirs) {
            return Step::default();
        }
        if let Some(t) = mine {
            if t.index() != self.id.0 || !self.config.well_formed(t) {
                return Step::default();
            }
        }
        let valid = self
            .validator(c)
            .is_valid(c, &[Some(theirs), mine], Signatures::Threshold(sigma));
        if !valid {
            return Step::default();
        }
        let store = self.entry(c);
        store.fragments.insert(theirs.index(), theirs.clone());
        store.sigma.get_or_insert_with(|| sigma.clone());
        let Some(mine) = mine.filter(|_| !self.bundle_sent) else {
            return Step::default();
        };
        self.entry(c).fragments.insert(mine.index(), mine.clone());
        self.bundle_sent = true;
        Step::broadcast(ProtocolMessage::Bundle {
            commitment: *c,
            own: mine.clone(),
            yours: None,
            sigma: sigma.clone(),
        })
    }

    /// The stored threshold signature for `c`, or one combined from stored
    /// shares once more than (n + t) / 2 distinct signers are present.
    pub fn get_thresh_sig(&self, c: &Commitment) -> Option<ThresholdSignature> {
        let store = self.stores.get(c)?;
        if let Some(sigma) = &store.sigma {
            return Some(sigma.clone());
        }
        if store.shares.len() < self.config.keyring.tau() {
            return None;
        }
        self.config.keyring.ts_combine(store.shares.values()).ok()
    }

    /// Delivers once some commitment has a threshold signature and at least
    /// k fragments whose reconstruction re-encodes to that same commitment.
    /// Commitments are scanned in digest order.
    pub fn check_quorum_and_deliver(&mut self, at: u64) -> Step<ProtocolMessage> {
        if self.delivered.is_some() {
            return Step::default();
        }
        let k = self.config.k();
        let candidates: Vec<Commitment> = self
            .stores
            .iter()
            .filter(|(c, s)| s.fragments.len() >= k && !self.poisoned.contains(c))
            .map(|(c, _)| *c)
            .collect();
        for c in candidates {
            let Some(sigma) = self.get_thresh_sig(&c) else {
                continue;
            };
            let store = &self.stores[&c];
            let reconstructed = ecc::reconstruct(
                store.fragments.values().take(k).map(|t| &t.fragment),
                &self.config.params,
            );
            let recomputed = reconstructed
                .ok()
                .and_then(|m| compute_frag_vec_commit(&m, &self.config).ok().map(|r| (m, r)));
            let Some((message, (commitment, tuples))) = recomputed.filter(|(_, (cc, _))| *cc == c)
            else {
                self.poisoned.insert(c);
                continue;
            };
            let own = tuples[self.id.0 - 1].clone();
            let bundles = tuples
                .into_iter()
                .map(|yours| {
                    Some(ProtocolMessage::Bundle {
                        commitment,
                        own: own.clone(),
                        yours: Some(yours),
                        sigma: sigma.clone(),
                    })
                })
                .collect();
            self.bundle_sent = true;
            let delivery = Delivery {
                message: Bytes::from(message),
                at_event: at,
            };
            self.delivered = Some((delivery.clone(), commitment));
            return Step {
                transmissions: vec![Transmission::Comm(bundles)],
                delivery: Some(delivery),
            };
        }
        Step::default()
    }

    /// Digest of the complete node state, for replay comparisons.
    pub fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update((self.id.0 as u64).to_be_bytes());
        let flags = [
            self.broadcast_started,
            self.forwarded_after_send,
            self.forward_sent,
            self.bundle_sent,
        ];
        h.update(flags.map(u8::from));
        h.update(self.signed.map(|c| c.digest).unwrap_or_default());
        for c in &self.poisoned {
            h.update(b"P");
            h.update(c.digest);
        }
        for (c, store) in &self.stores {
            h.update(b"C");
            h.update(c.digest);
            for (i, t) in &store.fragments {
                h.update((*i as u64).to_be_bytes());
                h.update(&t.fragment.data);
                h.update(&t.proof.path);
            }
            for (id, s) in &store.shares {
                h.update((id.0 as u64).to_be_bytes());
                h.update(s.mac());
            }
            if let Some(sigma) = &store.sigma {
                h.update(b"S");
                for s in sigma.evidence() {
                    h.update((s.signer().0 as u64).to_be_bytes());
                    h.update(s.mac());
                }
            }
        }
        if let Some((d, c)) = &self.delivered {
            h.update(b"D");
            h.update(&d.message);
            h.update(d.at_event.to_be_bytes());
            h.update(c.digest);
        }
        h.finalize().into()
    }

    /// Verifies that everything stored is valid for the commitment it is stored under.
    pub fn check_invariants(&self) -> Result<(), String> {
        let kr = &self.config.keyring;
        for (c, store) in &self.stores {
            for (i, t) in &store.fragments {
                let ok = *i == t.index()
                    && self.config.well_formed(t)
                    && self.config.vc.vc_verify(c, &t.proof, &t.fragment.data, *i);
                if !ok {
                    return Err(format!("node {}: invalid fragment {i} stored for {c:?}", self.id));
                }
            }
            for (id, s) in &store.shares {
                if !kr.ts_verify_share(c, s, *id) {
                    return Err(format!("node {}: invalid share by {id} stored for {c:?}", self.id));
                }
            }
            if let Some(sigma) = &store.sigma {
                if !kr.ts_verify(c, sigma) {
                    return Err(format!("node {}: invalid threshold signature for {c:?}", self.id));
                }
            }
        }
        if let Some((d, c)) = &self.delivered {
            if d.message.is_empty() {
                return Err(format!("node {}: empty delivery", self.id));
            }
            if !self.stores.contains_key(c) {
                return Err(format!("node {}: delivered without a store", self.id));
            }
        }
        Ok(())
    }
}

impl Engine for CodedNode {
    type Message = ProtocolMessage;
    type Error = ProtocolError;

    fn id(&self) -> NodeId {
        self.id
    }

    fn start_broadcast(&mut self, payload: &[u8], _at: u64) -> Result<Step<ProtocolMessage>, ProtocolError> {
        self.mbrb_broadcast(payload)
    }

    fn receive(&mut self, from: NodeId, msg: &ProtocolMessage, at: u64) -> Step<ProtocolMessage> {
        self.handle_message(from, msg, at)
    }

    fn decode(&self, raw: &[u8]) -> Option<ProtocolMessage> {
        ProtocolMessage::decode(raw, self.config.vc, self.config.n()).ok()
    }

    fn final_state(&self) -> FinalState {
        FinalState {
            id: self.id,
            signed: self.signed,
            delivered: self.delivered.as_ref().map(|(d, _)| d.clone()),
            delivered_commitment: self.delivered.as_ref().map(|(_, c)| *c),
        }
    }

    fn audit(&self) -> Result<(), String> {
        self.check_invariants()
    }
}

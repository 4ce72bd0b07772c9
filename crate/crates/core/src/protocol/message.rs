//! Wire messages of the coded broadcast and their canonical encoding.
//!
//! Encoding layout (all integers big-endian):
//!
//! ```text
//! kind:u8 | commitment digest:32 | slot_a | slot_b | signatures
//! slot      = 0x00 | 0x01 index:u16 len:u32 data path_len:u16 path
//! shares    = count:u8 (signer:u16 mac:32)*     -- SEND, FORWARD
//! threshold = count:u8 (signer:u16 mac:32)*     -- BUNDLE evidence
//! ```
//!
//! Metered size is independent of the byte layout: 24 framing bits (kind tag
//! and two presence flags), `KAPPA_BITS` for the commitment, fragment bytes
//! plus the scheme's proof size per present slot, and the metered size of
//! the signatures.

use bytes::Bytes;
use thiserror::Error;

use crate::crypto::{
    Commitment, InclusionProof, SignatureShare, ThresholdSignature, VcScheme,
    VectorCommitment, DIGEST_LEN,
};
use crate::ecc::Fragment;
use crate::engine::WireMessage;
use crate::NodeId;

pub const FRAMING_BITS: u64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Send,
    Forward,
    Bundle,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Send => "SEND",
            MessageKind::Forward => "FORWARD",
            MessageKind::Bundle => "BUNDLE",
        }
    }

    fn tag(self) -> u8 {
        match self {
            MessageKind::Send => 1,
            MessageKind::Forward => 2,
            MessageKind::Bundle => 3,
        }
    }
}

/// A fragment together with its inclusion proof.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FragmentTuple {
    pub fragment: Fragment,
    pub proof: InclusionProof,
}

impl FragmentTuple {
    pub fn index(&self) -> usize {
        self.fragment.index
    }

    pub fn metered_size_bits(&self) -> u64 {
        8 * self.fragment.data.len() as u64 + self.proof.metered_size_bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    Send {
        commitment: Commitment,
        tuple: FragmentTuple,
        sender_share: SignatureShare,
    },
    Forward {
        commitment: Commitment,
        tuple: Option<FragmentTuple>,
        /// The designated sender's share and the forwarder's own share.
        shares: [SignatureShare; 2],
    },
    Bundle {
        commitment: Commitment,
        /// The bundling node's own fragment.
        own: FragmentTuple,
        /// The recipient's fragment, if the bundler knows it.
        yours: Option<FragmentTuple>,
        sigma: ThresholdSignature,
    },
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::Send { .. } => MessageKind::Send,
            ProtocolMessage::Forward { .. } => MessageKind::Forward,
            ProtocolMessage::Bundle { .. } => MessageKind::Bundle,
        }
    }

    pub fn commitment(&self) -> &Commitment {
        match self {
            ProtocolMessage::Send { commitment, .. }
            | ProtocolMessage::Forward { commitment, .. }
            | ProtocolMessage::Bundle { commitment, .. } => commitment,
        }
    }

    pub fn slots(&self) -> [Option<&FragmentTuple>; 2] {
        match self {
            ProtocolMessage::Send { tuple, .. } => [Some(tuple), None],
            ProtocolMessage::Forward { tuple, .. } => [tuple.as_ref(), None],
            ProtocolMessage::Bundle { own, yours, .. } => [Some(own), yours.as_ref()],
        }
    }

    fn signature_bits(&self) -> u64 {
        match self {
            ProtocolMessage::Send { sender_share, .. } => sender_share.metered_size_bits(),
            ProtocolMessage::Forward { shares, .. } => {
                shares.iter().map(SignatureShare::metered_size_bits).sum()
            }
            ProtocolMessage::Bundle { sigma, .. } => sigma.metered_size_bits(),
        }
    }

    fn signature_shares(&self) -> &[SignatureShare] {
        match self {
            ProtocolMessage::Send { sender_share, .. } => std::slice::from_ref(sender_share),
            ProtocolMessage::Forward { shares, .. } => shares,
            ProtocolMessage::Bundle { sigma, .. } => sigma.evidence(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_canonical(&mut |b| out.extend_from_slice(b));
        out
    }

    pub fn decode(bytes: &[u8], scheme: VcScheme, n: usize) -> Result<Self, DecodeError> {
        Decoder { buf: bytes, scheme, n }.message()
    }
}

impl WireMessage for ProtocolMessage {
    fn kind_name(&self) -> &'static str {
        self.kind().as_str()
    }

    fn metered_size_bits(&self) -> u64 {
        FRAMING_BITS
            + self.commitment().metered_size_bits()
            + self
                .slots()
                .iter()
                .flatten()
                .map(|t| t.metered_size_bits())
                .sum::<u64>()
            + self.signature_bits()
    }

    fn write_canonical(&self, sink: &mut dyn FnMut(&[u8])) {
        sink(&[self.kind().tag()]);
        sink(&self.commitment().digest);
        for slot in self.slots() {
            match slot {
                None => sink(&[0]),
                Some(t) => {
                    sink(&[1]);
                    sink(&(t.fragment.index as u16).to_be_bytes());
                    sink(&(t.fragment.data.len() as u32).to_be_bytes());
                    sink(&t.fragment.data);
                    sink(&(t.proof.path.len() as u16).to_be_bytes());
                    sink(&t.proof.path);
                }
            }
        }
        let shares = self.signature_shares();
        sink(&[shares.len() as u8]);
        for s in shares {
            sink(&(s.signer().0 as u16).to_be_bytes());
            sink(s.mac());
        }
    }

    fn immediate_self_delivery(&self) -> bool {
        self.kind() == MessageKind::Send
    }

    fn content_weight(&self) -> u8 {
        match self {
            ProtocolMessage::Bundle { yours: Some(_), .. } => 3,
            ProtocolMessage::Send { .. } | ProtocolMessage::Bundle { .. } => 2,
            ProtocolMessage::Forward { tuple: Some(_), .. } => 1,
            ProtocolMessage::Forward { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated message")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("invalid presence flag {0}")]
    BadFlag(u8),
    #[error("wrong field arity for this message kind")]
    Arity,
    #[error("trailing bytes after message")]
    Trailing,
}

struct Decoder<'a> {
    buf: &'a [u8],
    scheme: VcScheme,
    n: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < len {
            return Err(DecodeError::Truncated);
        }
        let (head, rest) = self.buf.split_at(len);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn digest(&mut self) -> Result<[u8; DIGEST_LEN], DecodeError> {
        Ok(self.take(DIGEST_LEN)?.try_into().expect("digest length"))
    }

    fn slot(&mut self) -> Result<Option<FragmentTuple>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let index = self.u16()? as usize;
                let len = self.u32()? as usize;
                let data = Bytes::copy_from_slice(self.take(len)?);
                let path_len = self.u16()? as usize;
                let path = Bytes::copy_from_slice(self.take(path_len)?);
                Ok(Some(FragmentTuple {
                    fragment: Fragment { index, data },
                    proof: InclusionProof {
                        index,
                        path,
                        metered_size_bits: self.scheme.proof_size_bits(self.n),
                    },
                }))
            }
            other => Err(DecodeError::BadFlag(other)),
        }
    }

    fn shares(&mut self, commitment: Commitment) -> Result<Vec<SignatureShare>, DecodeError> {
        let count = self.u8()?;
        (0..count)
            .map(|_| {
                let signer = NodeId(self.u16()? as usize);
                let mac = self.digest()?;
                Ok(SignatureShare::from_parts(signer, commitment, mac, self.n))
            })
            .collect()
    }

    fn message(mut self) -> Result<ProtocolMessage, DecodeError> {
        let tag = self.u8()?;
        let commitment = Commitment {
            digest: self.digest()?,
            scheme: self.scheme.scheme_id(),
        };
        let a = self.slot()?;
        let b = self.slot()?;
        let shares = self.shares(commitment)?;
        if !self.buf.is_empty() {
            return Err(DecodeError::Trailing);
        }
        let msg = match tag {
            1 => {
                let (Some(tuple), None) = (a, b) else {
                    return Err(DecodeError::Arity);
                };
                let [sender_share] = <[_; 1]>::try_from(shares).map_err(|_| DecodeError::Arity)?;
                ProtocolMessage::Send { commitment, tuple, sender_share }
            }
            2 => {
                if b.is_some() {
                    return Err(DecodeError::Arity);
                }
                let shares = <[_; 2]>::try_from(shares).map_err(|_| DecodeError::Arity)?;
                ProtocolMessage::Forward { commitment, tuple: a, shares }
            }
            3 => {
                let own = a.ok_or(DecodeError::Arity)?;
                let sigma = ThresholdSignature::from_evidence_unchecked(commitment, shares);
                ProtocolMessage::Bundle { commitment, own, yours: b, sigma }
            }
            other => return Err(DecodeError::UnknownKind(other)),
        };
        Ok(msg)
    }
}


//! Simulated cryptography with honest size metering.
//!
//! Two vector commitment schemes share one Merkle tree implementation and
//! differ only in the proof size they report. Threshold signatures are
//! simulated with per-node HMAC keys: a combined signature carries its
//! shares as hidden evidence but is metered as a single `KAPPA_BITS` object.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::NodeId;

/// Security parameter: digest, share and threshold signature size in bits.
pub const KAPPA_BITS: u64 = 256;
pub const DIGEST_LEN: usize = 32;

pub type Digest = [u8; DIGEST_LEN];

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;
// Fills the tree up to a power of two. Not the output of any leaf hash.
const EMPTY_LEAF: Digest = [0u8; DIGEST_LEN];

pub fn hash(data: &[u8]) -> Digest {
    Sha256::digest(data).into()
}

/// ceil(log2(n)) for n >= 1.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("cannot commit to an empty vector")]
    EmptyVector,
    #[error("vector elements must all have the same length")]
    UnequalElements,
    #[error("unknown signer {0}")]
    UnknownSigner(NodeId),
    #[error("{distinct} distinct valid shares, threshold is {tau}")]
    BelowThreshold { distinct: usize, tau: usize },
    #[error("shares refer to different commitments")]
    MixedCommitments,
    #[error("share by {0} does not verify")]
    InvalidShare(NodeId),
}

/// Identifies what produced a [`Commitment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    Merkle,
    ConstantSizeSimulated,
    /// Plain digest of a whole message (uncoded comparator).
    PlainHash,
}

impl SchemeId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Merkle => "merkle",
            SchemeId::ConstantSizeSimulated => "constant-size-simulated",
            SchemeId::PlainHash => "plain-hash",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            SchemeId::Merkle => 1,
            SchemeId::ConstantSizeSimulated => 2,
            SchemeId::PlainHash => 3,
        }
    }
}

/// Fixed-size digest binding an ordered vector. Ordered by digest bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Commitment {
    pub digest: Digest,
    pub scheme: SchemeId,
}

impl Commitment {
    pub fn plain_hash(message: &[u8]) -> Self {
        Self {
            digest: hash(message),
            scheme: SchemeId::PlainHash,
        }
    }

    pub fn metered_size_bits(&self) -> u64 {
        KAPPA_BITS
    }

    pub fn short_hex(&self) -> String {
        hex16(&self.digest)
    }
}

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({}:{})", self.scheme.as_str(), self.short_hex())
    }
}

/// First 8 bytes of a digest as 16 lowercase hex characters.
pub fn hex16(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InclusionProof {
    /// 1-based position of the element in the committed vector.
    pub index: usize,
    /// Sibling digests from the leaf level up, concatenated.
    pub path: Bytes,
    pub metered_size_bits: u64,
}

pub trait VectorCommitment {
    fn scheme_id(&self) -> SchemeId;

    fn proof_size_bits(&self, n: usize) -> u64;

    fn vc_commit(&self, elements: &[&[u8]]) -> Result<(Commitment, Vec<InclusionProof>), CryptoError>;

    fn vc_verify(
        &self,
        commitment: &Commitment,
        proof: &InclusionProof,
        element: &[u8],
        index: usize,
    ) -> bool;
}

/// The vector commitment schemes selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VcScheme {
    /// Merkle tree; proofs are metered at their true size.
    #[default]
    Merkle,
    /// Same Merkle paths, metered as a constant-size scheme.
    ConstantSizeSimulated,
}

impl VcScheme {
    pub fn as_str(self) -> &'static str {
        self.scheme_id().as_str()
    }
}

impl fmt::Display for VcScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VcScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merkle" => Ok(VcScheme::Merkle),
            "constant-size-simulated" => Ok(VcScheme::ConstantSizeSimulated),
            other => Err(format!(
                "unknown vc scheme {other:?} (expected merkle or constant-size-simulated)"
            )),
        }
    }
}

fn leaf_hash(element: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(element);
    h.finalize().into()
}

fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

impl VectorCommitment for VcScheme {
    fn scheme_id(&self) -> SchemeId {
        match self {
            VcScheme::Merkle => SchemeId::Merkle,
            VcScheme::ConstantSizeSimulated => SchemeId::ConstantSizeSimulated,
        }
    }

    fn proof_size_bits(&self, n: usize) -> u64 {
        match self {
            // A single-element tree has an empty path; it is still charged one digest.
            VcScheme::Merkle => KAPPA_BITS * u64::from(ceil_log2(n).max(1)),
            VcScheme::ConstantSizeSimulated => KAPPA_BITS,
        }
    }

    fn vc_commit(&self, elements: &[&[u8]]) -> Result<(Commitment, Vec<InclusionProof>), CryptoError> {
        let n = elements.len();
        if n == 0 {
            return Err(CryptoError::EmptyVector);
        }
        if elements.iter().any(|e| e.len() != elements[0].len()) {
            return Err(CryptoError::UnequalElements);
        }
        let width = 1usize << ceil_log2(n);
        let mut levels: Vec<Vec<Digest>> = Vec::new();
        let mut level: Vec<Digest> = elements.iter().map(|e| leaf_hash(e)).collect();
        level.resize(width, EMPTY_LEAF);
        while level.len() > 1 {
            let next = level
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(std::mem::replace(&mut level, next));
        }
        let commitment = Commitment {
            digest: level[0],
            scheme: self.scheme_id(),
        };
        let metered = self.proof_size_bits(n);
        let proofs = (0..n)
            .map(|pos| {
                let mut path = Vec::with_capacity(levels.len() * DIGEST_LEN);
                let mut at = pos;
                for lvl in &levels {
                    path.extend_from_slice(&lvl[at ^ 1]);
                    at >>= 1;
                }
                InclusionProof {
                    index: pos + 1,
                    path: Bytes::from(path),
                    metered_size_bits: metered,
                }
            })
            .collect();
        Ok((commitment, proofs))
    }

    fn vc_verify(
        &self,
        commitment: &Commitment,
        proof: &InclusionProof,
        element: &[u8],
        index: usize,
    ) -> bool {
        if commitment.scheme != self.scheme_id() || proof.index != index || index == 0 {
            return false;
        }
        if !proof.path.len().is_multiple_of(DIGEST_LEN) {
            return false;
        }
        let depth = proof.path.len() / DIGEST_LEN;
        if depth >= usize::BITS as usize || (index - 1) >> depth != 0 {
            return false;
        }
        let mut acc = leaf_hash(element);
        let mut at = index - 1;
        for sibling in proof.path.chunks_exact(DIGEST_LEN) {
            let sibling: &Digest = sibling.try_into().expect("exact chunk");
            acc = if at & 1 == 0 {
                node_hash(&acc, sibling)
            } else {
                node_hash(sibling, &acc)
            };
            at >>= 1;
        }
        acc == commitment.digest
    }
}

pub fn threshold_for(n: usize, t: usize) -> usize {
    (n + t) / 2 + 1
}

/// A node's share on a commitment. Only [`Keyring::ts_sign_share`] creates
/// shares from public code.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignatureShare {
    signer: NodeId,
    commitment: Commitment,
    mac: Digest,
    metered_size_bits: u64,
}

impl SignatureShare {
    pub fn signer(&self) -> NodeId {
        self.signer
    }

    pub fn commitment(&self) -> &Commitment {
        &self.commitment
    }

    pub fn mac(&self) -> &Digest {
        &self.mac
    }

    /// `KAPPA_BITS` plus the signer identifier.
    pub fn metered_size_bits(&self) -> u64 {
        self.metered_size_bits
    }

    /// Builds a share from raw parts, as a wire decoder or a forger would.
    /// Verification is what decides whether it is genuine.
    pub(crate) fn from_parts(signer: NodeId, commitment: Commitment, mac: Digest, n: usize) -> Self {
        Self {
            signer,
            commitment,
            mac,
            metered_size_bits: share_size_bits(n),
        }
    }
}

impl fmt::Debug for SignatureShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Share({} on {:?})", self.signer, self.commitment)
    }
}

fn share_size_bits(n: usize) -> u64 {
    KAPPA_BITS + u64::from(ceil_log2(n))
}

/// Aggregate attesting that at least tau distinct nodes signed one commitment.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ThresholdSignature {
    commitment: Commitment,
    evidence: Vec<SignatureShare>,
}

impl ThresholdSignature {
    pub fn commitment(&self) -> &Commitment {
        &self.commitment
    }

    pub fn metered_size_bits(&self) -> u64 {
        KAPPA_BITS
    }

    pub(crate) fn evidence(&self) -> &[SignatureShare] {
        &self.evidence
    }

    pub(crate) fn from_evidence_unchecked(commitment: Commitment, evidence: Vec<SignatureShare>) -> Self {
        Self { commitment, evidence }
    }
}

impl fmt::Debug for ThresholdSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ThresholdSignature({:?})", self.commitment)
    }
}

/// Per-node signing seeds plus the system parameters. Immutable after setup.
#[derive(Clone)]
pub struct Keyring {
    n: usize,
    t: usize,
    tau: usize,
    seeds: Vec<[u8; 32]>,
}

impl fmt::Debug for Keyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keyring")
            .field("n", &self.n)
            .field("t", &self.t)
            .field("tau", &self.tau)
            .finish_non_exhaustive()
    }
}

type HmacSha256 = Hmac<Sha256>;

impl Keyring {
    pub fn generate(n: usize, t: usize, master_seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        let seeds = (0..n)
            .map(|_| {
                let mut s = [0u8; 32];
                rng.fill_bytes(&mut s);
                s
            })
            .collect();
        Self {
            n,
            t,
            tau: threshold_for(n, t),
            seeds,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    fn mac(&self, signer: NodeId, commitment: &Commitment) -> Option<Digest> {
        let seed = self.seeds.get(signer.index()?)?;
        let mut mac = HmacSha256::new_from_slice(seed).expect("hmac accepts any key length");
        mac.update(&[commitment.scheme.tag()]);
        mac.update(&commitment.digest);
        Some(mac.finalize().into_bytes().into())
    }

    pub fn ts_sign_share(&self, signer: NodeId, commitment: &Commitment) -> Result<SignatureShare, CryptoError> {
        let mac = self
            .mac(signer, commitment)
            .ok_or(CryptoError::UnknownSigner(signer))?;
        Ok(SignatureShare::from_parts(signer, *commitment, mac, self.n))
    }

    pub fn ts_verify_share(&self, commitment: &Commitment, share: &SignatureShare, signer: NodeId) -> bool {
        share.signer == signer
            && share.commitment == *commitment
            && self.mac(signer, commitment).is_some_and(|m| m == share.mac)
    }

    pub fn ts_combine<'a, I>(&self, shares: I) -> Result<ThresholdSignature, CryptoError>
    where
        I: IntoIterator<Item = &'a SignatureShare>,
    {
        let mut distinct: BTreeMap<NodeId, &SignatureShare> = BTreeMap::new();
        let mut commitment: Option<Commitment> = None;
        for share in shares {
            match commitment {
                None => commitment = Some(share.commitment),
                Some(c) if c != share.commitment => return Err(CryptoError::MixedCommitments),
                Some(_) => {}
            }
            if !self.ts_verify_share(&share.commitment, share, share.signer) {
                return Err(CryptoError::InvalidShare(share.signer));
            }
            distinct.insert(share.signer, share);
        }
        let below = CryptoError::BelowThreshold {
            distinct: distinct.len(),
            tau: self.tau,
        };
        let commitment = commitment.ok_or(below.clone())?;
        if distinct.len() < self.tau {
            return Err(below);
        }
        let evidence = distinct.into_values().take(self.tau).cloned().collect();
        Ok(ThresholdSignature { commitment, evidence })
    }

    pub fn ts_verify(&self, commitment: &Commitment, sigma: &ThresholdSignature) -> bool {
        if sigma.commitment != *commitment {
            return false;
        }
        let mut signers = std::collections::BTreeSet::new();
        for share in &sigma.evidence {
            if self.ts_verify_share(commitment, share, share.signer) {
                signers.insert(share.signer);
            }
        }
        signers.len() >= self.tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(n: usize, len: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| vec![i as u8; len]).collect()
    }

    fn refs(v: &[Vec<u8>]) -> Vec<&[u8]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn ceil_log2_values() {
        let expected = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (9, 4), (16, 4), (255, 8)];
        for (n, l) in expected {
            assert_eq!(ceil_log2(n), l, "n = {n}");
        }
    }

    #[test]
    fn commit_is_deterministic_and_proofs_verify() {
        for n in 1..=9 {
            let v = vector(n, 5);
            for scheme in [VcScheme::Merkle, VcScheme::ConstantSizeSimulated] {
                let (c, proofs) = scheme.vc_commit(&refs(&v)).unwrap();
                assert_eq!((c, proofs.clone()), scheme.vc_commit(&refs(&v)).unwrap());
                for (i, p) in proofs.iter().enumerate() {
                    assert!(scheme.vc_verify(&c, p, &v[i], i + 1));
                }
            }
        }
    }

    #[test]
    fn flipped_byte_changes_digest() {
        let v = vector(6, 4);
        let mut w = v.clone();
        w[3][2] ^= 0x80;
        let (c1, _) = VcScheme::Merkle.vc_commit(&refs(&v)).unwrap();
        let (c2, _) = VcScheme::Merkle.vc_commit(&refs(&w)).unwrap();
        assert_ne!(c1.digest, c2.digest);
    }

    #[test]
    fn commit_errors() {
        assert_eq!(VcScheme::Merkle.vc_commit(&[]), Err(CryptoError::EmptyVector));
        let v: [&[u8]; 2] = [b"ab", b"c"];
        assert_eq!(VcScheme::Merkle.vc_commit(&v), Err(CryptoError::UnequalElements));
    }

    #[test]
    fn index_swap_rejected() {
        let v = vector(8, 3);
        let (c, proofs) = VcScheme::Merkle.vc_commit(&refs(&v)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert!(!VcScheme::Merkle.vc_verify(&c, &proofs[i], &v[i], j + 1));
                    let moved = InclusionProof { index: j + 1, ..proofs[i].clone() };
                    assert!(!VcScheme::Merkle.vc_verify(&c, &moved, &v[i], j + 1));
                }
            }
        }
    }

    #[test]
    fn malformed_proofs_rejected() {
        let v = vector(5, 3);
        let (c, proofs) = VcScheme::Merkle.vc_commit(&refs(&v)).unwrap();
        let truncated = InclusionProof {
            path: proofs[0].path.slice(..40),
            ..proofs[0].clone()
        };
        assert!(!VcScheme::Merkle.vc_verify(&c, &truncated, &v[0], 1));
        assert!(!VcScheme::Merkle.vc_verify(&c, &proofs[0], &v[0], 0));
        // Padding positions of the tree never verify.
        let pad = InclusionProof { index: 7, ..proofs[0].clone() };
        assert!(!VcScheme::Merkle.vc_verify(&c, &pad, &[], 7));
        // A commitment from the other scheme is rejected.
        let other = Commitment { scheme: SchemeId::ConstantSizeSimulated, ..c };
        assert!(!VcScheme::Merkle.vc_verify(&other, &proofs[0], &v[0], 1));
    }

    #[test]
    fn proof_metering() {
        let v = vector(8, 2);
        let (_, p) = VcScheme::Merkle.vc_commit(&refs(&v)).unwrap();
        assert_eq!(p[0].metered_size_bits, 3 * KAPPA_BITS);
        assert_eq!(p[0].path.len(), 3 * DIGEST_LEN);
        let (_, p) = VcScheme::ConstantSizeSimulated.vc_commit(&refs(&v)).unwrap();
        assert_eq!(p[0].metered_size_bits, KAPPA_BITS);
        let (_, p) = VcScheme::Merkle.vc_commit(&refs(&vector(1, 2))).unwrap();
        assert!(p[0].path.is_empty());
        assert_eq!(p[0].metered_size_bits, KAPPA_BITS);
    }

    fn commitment(tag: u8) -> Commitment {
        Commitment::plain_hash(&[tag])
    }

    #[test]
    fn shares_bind_signer_and_commitment() {
        let kr = Keyring::generate(8, 2, 11);
        let c = commitment(1);
        let c2 = commitment(2);
        let s3 = kr.ts_sign_share(NodeId(3), &c).unwrap();
        assert!(kr.ts_verify_share(&c, &s3, NodeId(3)));
        assert_eq!(s3, kr.ts_sign_share(NodeId(3), &c).unwrap());
        for other in (1..=8).filter(|&i| i != 3) {
            assert!(!kr.ts_verify_share(&c, &s3, NodeId(other)));
        }
        assert!(!kr.ts_verify_share(&c2, &s3, NodeId(3)));
        assert_eq!(s3.metered_size_bits(), KAPPA_BITS + 3);
        assert_eq!(kr.ts_sign_share(NodeId(9), &c), Err(CryptoError::UnknownSigner(NodeId(9))));
        assert_eq!(kr.ts_sign_share(NodeId(0), &c), Err(CryptoError::UnknownSigner(NodeId(0))));
    }

    #[test]
    fn forged_mac_rejected() {
        let kr = Keyring::generate(4, 1, 5);
        let c = commitment(7);
        let forged = SignatureShare::from_parts(NodeId(2), c, [0xAB; 32], 4);
        assert!(!kr.ts_verify_share(&c, &forged, NodeId(2)));
        assert_eq!(kr.ts_combine([&forged]), Err(CryptoError::InvalidShare(NodeId(2))));
    }

    #[test]
    fn combine_thresholds() {
        let kr = Keyring::generate(8, 2, 3);
        assert_eq!(kr.tau(), 6);
        let c = commitment(1);
        let shares: Vec<_> = (1..=8).map(|i| kr.ts_sign_share(NodeId(i), &c).unwrap()).collect();

        let sigma = kr.ts_combine(&shares[..6]).unwrap();
        assert!(kr.ts_verify(&c, &sigma));
        assert!(!kr.ts_verify(&commitment(2), &sigma));
        assert_eq!(sigma.metered_size_bits(), KAPPA_BITS);

        assert_eq!(
            kr.ts_combine(&shares[..5]),
            Err(CryptoError::BelowThreshold { distinct: 5, tau: 6 })
        );
        let mut dup = shares[..5].to_vec();
        dup.push(shares[0].clone());
        assert_eq!(
            kr.ts_combine(&dup),
            Err(CryptoError::BelowThreshold { distinct: 5, tau: 6 })
        );
        assert_eq!(
            kr.ts_combine(std::iter::empty()),
            Err(CryptoError::BelowThreshold { distinct: 0, tau: 6 })
        );

        let mut mixed = shares[..6].to_vec();
        mixed[5] = kr.ts_sign_share(NodeId(6), &commitment(2)).unwrap();
        assert_eq!(kr.ts_combine(&mixed), Err(CryptoError::MixedCommitments));
    }

    #[test]
    fn hand_built_sigma_with_invalid_share_rejected() {
        let kr = Keyring::generate(8, 2, 3);
        let c = commitment(1);
        let mut evidence: Vec<_> = (1..=5).map(|i| kr.ts_sign_share(NodeId(i), &c).unwrap()).collect();
        evidence.push(SignatureShare::from_parts(NodeId(6), c, [0; 32], 8));
        let sigma = ThresholdSignature::from_evidence_unchecked(c, evidence.clone());
        assert!(!kr.ts_verify(&c, &sigma));
        // Duplicate valid share does not make up the difference either.
        evidence[5] = evidence[0].clone();
        let sigma = ThresholdSignature::from_evidence_unchecked(c, evidence);
        assert!(!kr.ts_verify(&c, &sigma));
    }

    #[test]
    fn keyrings_are_seeded() {
        let c = commitment(1);
        let a = Keyring::generate(4, 1, 1).ts_sign_share(NodeId(1), &c).unwrap();
        let b = Keyring::generate(4, 1, 2).ts_sign_share(NodeId(1), &c).unwrap();
        assert_ne!(a.mac(), b.mac());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [VcScheme::Merkle, VcScheme::ConstantSizeSimulated] {
            assert_eq!(s.as_str().parse::<VcScheme>().unwrap(), s);
        }
        assert!("pairing".parse::<VcScheme>().is_err());
    }
}

//! k-of-n erasure coding of application messages.
//!
//! A message is zero-padded to `k * fragment_len` bytes and split into `k`
//! data shards; `n - k` Reed-Solomon parity shards over GF(2^8) follow them.
//! Any `k` distinct fragments of a codeword recover the message. The code is
//! systematic, so with `k == n` encoding degenerates to plain splitting.

use std::collections::BTreeMap;

use bytes::Bytes;
use reed_solomon_erasure::galois_8::ReedSolomon;
use thiserror::Error;

/// Largest fragment count a GF(2^8) code supports.
pub const MAX_FRAGMENTS: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EccError {
    #[error("invalid threshold: k = {k} with n = {n} (need 1 <= k <= n)")]
    InvalidThreshold { n: usize, k: usize },
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("n = {0} exceeds the GF(2^8) limit of {MAX_FRAGMENTS} fragments")]
    TooManyFragments(usize),
    #[error("message length {actual} does not match payload_len {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("fragment {index} is malformed for these code parameters")]
    MalformedFragment { index: usize },
    #[error("only {have} distinct fragments, need {need}")]
    InsufficientFragments { have: usize, need: usize },
    #[error("fragments are not consistent with a single codeword")]
    InconsistentCodeword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeParams {
    pub n: usize,
    pub k: usize,
    pub fragment_len: usize,
    pub payload_len: usize,
}

impl CodeParams {
    pub fn derive(n: usize, k: usize, payload_len: usize) -> Result<Self, EccError> {
        if k < 1 || k > n {
            return Err(EccError::InvalidThreshold { n, k });
        }
        if n > MAX_FRAGMENTS {
            return Err(EccError::TooManyFragments(n));
        }
        if payload_len == 0 {
            return Err(EccError::EmptyPayload);
        }
        Ok(Self {
            n,
            k,
            fragment_len: payload_len.div_ceil(k),
            payload_len,
        })
    }

    /// Zero bytes appended to the message before splitting.
    pub fn padding(&self) -> usize {
        self.k * self.fragment_len - self.payload_len
    }

    fn codec(&self) -> Option<ReedSolomon> {
        (self.n > self.k).then(|| {
            ReedSolomon::new(self.k, self.n - self.k).expect("parameters checked in derive")
        })
    }
}

/// One shard of a codeword. `index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fragment {
    pub index: usize,
    pub data: Bytes,
}

pub fn encode_split(message: &[u8], params: &CodeParams) -> Result<Vec<Fragment>, EccError> {
    if message.len() != params.payload_len {
        return Err(EccError::LengthMismatch {
            expected: params.payload_len,
            actual: message.len(),
        });
    }
    let flen = params.fragment_len;
    let mut padded = message.to_vec();
    padded.resize(params.k * flen, 0);
    let data: Vec<&[u8]> = padded.chunks(flen).collect();

    let mut parity = vec![vec![0u8; flen]; params.n - params.k];
    if let Some(rs) = params.codec() {
        rs.encode_sep(&data, &mut parity)
            .expect("shard counts and lengths match the codec");
    }

    let fragments = data
        .iter()
        .map(|d| Bytes::copy_from_slice(d))
        .chain(parity.into_iter().map(Bytes::from))
        .enumerate()
        .map(|(i, data)| Fragment { index: i + 1, data })
        .collect();
    Ok(fragments)
}

/// Recovers the message from any `k` distinct fragments of one codeword.
///
/// Duplicated indices must carry identical bytes. When more than `k`
/// distinct fragments are supplied, the surplus is checked against the
/// re-encoded codeword.
pub fn reconstruct<'a, I>(fragments: I, params: &CodeParams) -> Result<Vec<u8>, EccError>
where
    I: IntoIterator<Item = &'a Fragment>,
{
    let mut by_index: BTreeMap<usize, &Fragment> = BTreeMap::new();
    for f in fragments {
        if f.index < 1 || f.index > params.n || f.data.len() != params.fragment_len {
            return Err(EccError::MalformedFragment { index: f.index });
        }
        if let Some(prev) = by_index.insert(f.index, f) {
            if prev.data != f.data {
                return Err(EccError::InconsistentCodeword);
            }
        }
    }
    if by_index.len() < params.k {
        return Err(EccError::InsufficientFragments {
            have: by_index.len(),
            need: params.k,
        });
    }

    let mut shards: Vec<Option<Vec<u8>>> = vec![None; params.n];
    for (&idx, f) in by_index.iter().take(params.k) {
        shards[idx - 1] = Some(f.data.to_vec());
    }
    if let Some(rs) = params.codec() {
        rs.reconstruct_data(&mut shards)
            .expect("k shards of the right length are present");
    }

    let mut message = Vec::with_capacity(params.k * params.fragment_len);
    for shard in shards.iter().take(params.k) {
        message.extend_from_slice(shard.as_deref().expect("data shards reconstructed"));
    }
    message.truncate(params.payload_len);

    if by_index.len() > params.k {
        let codeword = encode_split(&message, params)?;
        let consistent = by_index
            .values()
            .all(|f| codeword[f.index - 1].data == f.data);
        if !consistent {
            return Err(EccError::InconsistentCodeword);
        }
    }
    Ok(message)
}

//! The coded broadcast node: three message kinds (SEND, FORWARD, BUNDLE)
//! driving a single-shot, single-sender instance.
//!
//! The sender erasure-codes its message into `n` fragments, commits to the
//! fragment vector and sends every node its own fragment. Nodes forward their
//! fragment together with a signature share on the commitment. Once a node
//! holds a threshold signature and `k` fragments for one commitment it
//! reconstructs the message, checks that re-encoding yields the same
//! commitment, bundles every node's fragment with the threshold signature and
//! delivers.

mod message;
mod node;

pub use message::{DecodeError, FragmentTuple, MessageKind, ProtocolMessage, FRAMING_BITS};
pub use node::{
    compute_frag_vec_commit, is_valid, CodedNode, CommitmentStore, ProtocolConfig, ProtocolError,
    Signatures,
};

//! Erasure-coded Byzantine reliable broadcast that tolerates both Byzantine
//! nodes and a message adversary dropping messages of every send-to-all.
//!
//! The crate is organised bottom-up:
//!
//! * [`ecc`]: k-of-n Reed-Solomon coding of application messages.
//! * [`crypto`]: Merkle vector commitments and simulated threshold signatures.
//! * [`protocol`]: the coded broadcast node state machine.
//! * [`baseline`]: an uncoded signed echo broadcast used as a cost comparator.
//! * [`simnet`]: a deterministic asynchronous network with a message adversary
//!   and Byzantine behaviours.
//! * [`metrics`]: message and bit accounting plus the delivery property checks.
//! * [`experiment`]: runs one configured simulation end to end.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod baseline;
pub mod crypto;
pub mod engine;
pub mod ecc;
pub mod experiment;
pub mod metrics;
pub mod protocol;
pub mod simnet;

/// 1-based node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    /// 0-based position, or `None` for the invalid id 0.
    pub fn index(self) -> Option<usize> {
        self.0.checked_sub(1)
    }

    pub fn all(n: usize) -> impl Iterator<Item = NodeId> {
        (1..=n).map(NodeId)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

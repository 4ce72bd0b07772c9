//! Message and bit accounting, the delivery-power bound and the delivery
//! property checks.
//!
//! Verdicts are computed from the event log and the final node states only,
//! so they can be recomputed from a serialized log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::threshold_for;
use crate::engine::{FinalState, WireMessage};
use crate::simnet::{EventKind, EventLog, ProtocolKind, SimConfig, SENDER};
use crate::NodeId;

/// Non-negative rational slack in the delivery-power target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Epsilon(Ratio<u64>);

impl Epsilon {
    pub const ONE: Epsilon = Epsilon(Ratio::new_raw(1, 1));

    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den != 0).then(|| Epsilon(Ratio::new(num, den)))
    }

    pub fn ratio(self) -> Ratio<u64> {
        self.0
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Epsilon {
    type Err = String;

    /// Accepts `1`, `1/2` or a decimal such as `0.25`.
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid epsilon {s:?}");
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num = num.trim().parse().map_err(|_| bad())?;
            let den = den.trim().parse().map_err(|_| bad())?;
            return Epsilon::new(num, den).ok_or_else(bad);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        int.checked_mul(scale)
            .and_then(|v| v.checked_add(frac))
            .and_then(|num| Epsilon::new(num, scale))
            .ok_or_else(bad)
    }
}

impl TryFrom<String> for Epsilon {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Epsilon> for String {
    fn from(e: Epsilon) -> String {
        e.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid regime: c - d = {} must exceed k - 1 = {}", *c as i64 - *d as i64, *k as i64 - 1)]
pub struct InvalidRegime {
    pub c: usize,
    pub d: usize,
    pub k: usize,
}

/// Guaranteed number of correct deliveries once one correct node delivers:
/// `c - d (c - d) / ((c - d) - (k - 1))`.
pub fn compute_ell_bound(c: usize, d: usize, k: usize) -> Result<Ratio<i64>, InvalidRegime> {
    let err = InvalidRegime { c, d, k };
    if k == 0 || c <= d || c - d < k {
        return Err(err);
    }
    let (c, d, k) = (c as i64, d as i64, k as i64);
    let slack = (c - d) - (k - 1);
    Ok(Ratio::from_integer(c) - Ratio::new(d * (c - d), slack))
}

/// Minimum number of correct deliveries required by the global-delivery check.
pub fn required_deliveries(c: usize, d: usize, k: usize) -> Result<usize, InvalidRegime> {
    let ell = compute_ell_bound(c, d, k)?;
    Ok(ell.ceil().to_integer().max(0) as usize)
}

/// Largest `k` accepted by [`validate_k`], or `None` if no `k >= 1` is.
pub fn max_k(n: usize, t: usize, d: usize, epsilon: Epsilon) -> Option<usize> {
    let (a, e) = k_bounds(n, t, d, epsilon);
    let m = a.min(e);
    (m >= 1).then_some(m as usize)
}

fn k_bounds(n: usize, t: usize, d: usize, epsilon: Epsilon) -> (i64, i64) {
    let (n, t, d) = (n as i64, t as i64, d as i64);
    let assumption = n - t - 2 * d;
    let eps = epsilon.ratio();
    let (p, q) = (*eps.numer() as i128, *eps.denom() as i128);
    // eps / (1 + eps) = p / (p + q)
    let eps_bound = (p * (n - t - d) as i128).div_euclid(p + q) as i64 + 1;
    (assumption, eps_bound)
}

/// Which upper bound on `k` failed, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub struct KViolation {
    pub k: usize,
    pub assumption_bound: i64,
    pub epsilon_bound: i64,
    pub epsilon: Epsilon,
}

impl KViolation {
    pub fn new(n: usize, t: usize, d: usize, epsilon: Epsilon, k: usize) -> Self {
        let (assumption_bound, epsilon_bound) = k_bounds(n, t, d, epsilon);
        Self { k, assumption_bound, epsilon_bound, epsilon }
    }

    pub fn assumption_failed(&self) -> bool {
        self.k as i64 > self.assumption_bound
    }

    pub fn epsilon_failed(&self) -> bool {
        self.k as i64 > self.epsilon_bound
    }
}

impl fmt::Display for KViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k = {} violates", self.k)?;
        let mut sep = " ";
        if self.assumption_failed() {
            write!(f, "{sep}k <= n - t - 2d = {}", self.assumption_bound)?;
            sep = " and ";
        }
        if self.epsilon_failed() {
            write!(f, "{sep}the epsilon = {} bound {}", self.epsilon, self.epsilon_bound)?;
        }
        if !self.assumption_failed() && !self.epsilon_failed() {
            write!(f, " k >= 1")?;
        }
        Ok(())
    }
}

pub fn validate_k(n: usize, t: usize, d: usize, epsilon: Epsilon, k: usize) -> Result<(), KViolation> {
    let v = KViolation::new(n, t, d, epsilon, k);
    if k == 0 || v.assumption_failed() || v.epsilon_failed() {
        return Err(v);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    #[serde(rename = "n.a.")]
    NotApplicable,
}

impl Verdict {
    fn check(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "n.a.",
        }
    }

    pub fn failed(self) -> bool {
        self == Verdict::Fail
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub validity: Verdict,
    pub no_duplication: Verdict,
    pub no_duplicity: Verdict,
    pub local_delivery: Verdict,
    pub global_delivery: Verdict,
    /// Every delivered message was broadcast by the sender and its commitment
    /// could have gathered a signature quorum given the correct signers.
    pub quorum_backed: Verdict,
}

impl Verdicts {
    pub const NAMES: [&'static str; 6] = [
        "validity",
        "no_duplication",
        "no_duplicity",
        "local_delivery",
        "global_delivery",
        "quorum_backed",
    ];

    pub fn as_array(&self) -> [Verdict; 6] {
        [
            self.validity,
            self.no_duplication,
            self.no_duplicity,
            self.local_delivery,
            self.global_delivery,
            self.quorum_backed,
        ]
    }

    pub fn any_failed(&self) -> bool {
        self.as_array().iter().any(|v| v.failed())
    }
}

/// Evaluates the broadcast properties of a completed run.
///
/// `finals` holds the end states of the correct nodes.
pub fn check_properties(log: &EventLog, finals: &[FinalState], config: &SimConfig) -> Verdicts {
    let byzantine = config.byzantine().unwrap_or_default();
    let correct = |id: &NodeId| !byzantine.contains_key(id);
    let sender_correct = correct(&SENDER);
    let c = config.n - byzantine.len();

    let mut broadcast = BTreeSet::new();
    let mut deliveries: BTreeMap<NodeId, Vec<[u8; 8]>> = BTreeMap::new();
    for e in log.events() {
        match e.kind {
            EventKind::Bcast => {
                broadcast.insert(e.digest);
            }
            EventKind::Deliver if correct(&e.to) => deliveries.entry(e.to).or_default().push(e.digest),
            _ => {}
        }
    }
    let delivered: BTreeSet<[u8; 8]> = deliveries.values().flatten().copied().collect();
    let any = !deliveries.is_empty();

    let validity = if sender_correct {
        Verdict::check(delivered.iter().all(|d| broadcast.contains(d)) && broadcast.len() <= 1)
    } else {
        Verdict::NotApplicable
    };
    let no_duplication = Verdict::check(deliveries.values().all(|v| v.len() <= 1));
    let no_duplicity = Verdict::check(delivered.len() <= 1);
    let local_delivery = if sender_correct { Verdict::check(any) } else { Verdict::NotApplicable };
    let global_delivery = match (config.protocol, any, required_deliveries(c, config.d, config.k)) {
        (ProtocolKind::Coded, true, Ok(need)) => Verdict::check(deliveries.len() >= need),
        _ => Verdict::NotApplicable,
    };

    let quorum_backed = if any {
        let tau = threshold_for(config.n, config.t);
        let backed = finals.iter().filter(|f| f.delivered.is_some()).all(|f| {
            let Some(dc) = f.delivered_commitment else { return false };
            let signers = finals.iter().filter(|g| g.signed == Some(dc)).count();
            let digest = f.delivered.as_ref().map(|d| first8(&d.digest()));
            signers + byzantine.len() >= tau && digest.is_some_and(|d| broadcast.contains(&d))
        });
        Verdict::check(backed && delivered.iter().all(|d| broadcast.contains(d)))
    } else {
        Verdict::NotApplicable
    };

    Verdicts {
        validity,
        no_duplication,
        no_duplicity,
        local_delivery,
        global_delivery,
        quorum_backed,
    }
}

pub(crate) fn first8(digest: &[u8]) -> [u8; 8] {
    digest[..8].try_into().expect("digest is at least 8 bytes")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub messages_sent: u64,
    pub bits_sent: u64,
    /// Number of comm or broadcast invocations.
    pub send_to_all: u64,
}

/// Append-only per-run ledger of traffic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    correct: Vec<NodeCounters>,
    byzantine: NodeCounters,
    max_batch_drops: usize,
    dropped: u64,
}

impl Ledger {
    pub fn new(n: usize) -> Self {
        Self {
            correct: vec![NodeCounters::default(); n],
            byzantine: NodeCounters::default(),
            max_batch_drops: 0,
            dropped: 0,
        }
    }

    /// Records how many messages the adversary removed from one batch.
    pub fn record_drops(&mut self, count: usize) {
        self.max_batch_drops = self.max_batch_drops.max(count);
        self.dropped += count as u64;
    }

    pub fn max_batch_drops(&self) -> usize {
        self.max_batch_drops
    }

    /// Counts one message from a correct node; an empty slot costs nothing.
    pub fn record_message<M: WireMessage>(&mut self, from: NodeId, message: Option<&M>) {
        if let Some(m) = message {
            let c = &mut self.correct[from.index().expect("valid node id")];
            c.messages_sent += 1;
            c.bits_sent += m.metered_size_bits();
        }
    }

    pub fn record_send_to_all(&mut self, from: NodeId) {
        self.correct[from.index().expect("valid node id")].send_to_all += 1;
    }

    pub fn record_byzantine(&mut self, bits: u64) {
        self.byzantine.messages_sent += 1;
        self.byzantine.bits_sent += bits;
    }

    pub fn node(&self, id: NodeId) -> &NodeCounters {
        &self.correct[id.index().expect("valid node id")]
    }

    pub fn byzantine(&self) -> &NodeCounters {
        &self.byzantine
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    #[serde(flatten)]
    pub counters: NodeCounters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub messages_sent: u64,
    pub bits_sent: u64,
}

/// Everything measured about one run; serialized as the per-run JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config: SimConfig,
    pub c: usize,
    /// Delivery-power bound as `num/den`, absent outside the valid regime.
    pub ell_bound: Option<String>,
    pub required_deliveries: Option<usize>,
    pub deliveries: usize,
    /// Payload holds at least one field symbol per node, so fragments are
    /// not dominated by padding.
    pub payload_regime: bool,
    /// Hex digest prefix of the delivered message per correct node.
    pub delivered: BTreeMap<NodeId, Option<String>>,
    /// Correct nodes only.
    pub per_node: Vec<NodeReport>,
    pub totals: Totals,
    pub byzantine_traffic: Totals,
    pub dropped: u64,
    pub max_drops_per_batch: usize,
    /// Delivery verdicts are `n.a.` when the run is inconclusive.
    pub verdicts: Verdicts,
    pub events: u64,
    pub inconclusive: bool,
}

impl RunMetrics {
    pub fn assemble(
        config: &SimConfig,
        ledger: &Ledger,
        log: &EventLog,
        finals: &[FinalState],
        events: u64,
        inconclusive: bool,
    ) -> Self {
        let c = config.correct_count();
        let mut verdicts = check_properties(log, finals, config);
        // a truncated run says nothing about liveness
        if inconclusive {
            verdicts.local_delivery = Verdict::NotApplicable;
            verdicts.global_delivery = Verdict::NotApplicable;
        }
        let per_node: Vec<NodeReport> = finals
            .iter()
            .map(|f| NodeReport { id: f.id, counters: *ledger.node(f.id) })
            .collect();
        let totals = per_node.iter().fold(Totals::default(), |acc, r| Totals {
            messages_sent: acc.messages_sent + r.counters.messages_sent,
            bits_sent: acc.bits_sent + r.counters.bits_sent,
        });
        let delivered = finals
            .iter()
            .map(|f| (f.id, f.delivered.as_ref().map(|d| hex(&first8(&d.digest())))))
            .collect();
        Self {
            config: config.clone(),
            c,
            ell_bound: compute_ell_bound(c, config.d, config.k).ok().map(|r| r.to_string()),
            required_deliveries: required_deliveries(c, config.d, config.k).ok(),
            deliveries: finals.iter().filter(|f| f.delivered.is_some()).count(),
            payload_regime: config.payload_len >= config.n,
            delivered,
            per_node,
            totals,
            byzantine_traffic: Totals {
                messages_sent: ledger.byzantine().messages_sent,
                bits_sent: ledger.byzantine().bits_sent,
            },
            dropped: ledger.dropped,
            max_drops_per_batch: ledger.max_batch_drops,
            verdicts,
            events,
            inconclusive,
        }
    }

    pub fn max_send_to_all(&self) -> u64 {
        self.per_node.iter().map(|r| r.counters.send_to_all).max().unwrap_or(0)
    }

    pub fn max_messages_sent(&self) -> u64 {
        self.per_node.iter().map(|r| r.counters.messages_sent).max().unwrap_or(0)
    }

    /// Mean bytes sent per correct node.
    pub fn mean_bytes_per_node(&self) -> f64 {
        if self.per_node.is_empty() {
            return 0.0;
        }
        self.totals.bits_sent as f64 / 8.0 / self.per_node.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::VcScheme;
use crate::ecc::MAX_FRAGMENTS;
use crate::metrics::{validate_k, Epsilon, KViolation};
use crate::NodeId;

/// The designated sender of every simulated instance.
pub const SENDER: NodeId = NodeId(1);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("need n > 3t + 2d, got n = {n}, t = {t}, d = {d}")]
    ResilienceViolated { n: usize, t: usize, d: usize },
    #[error(transparent)]
    BadThreshold(#[from] KViolation),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("n = {0} is outside 1..={MAX_FRAGMENTS}")]
    BadNodeCount(usize),
    #[error("payload length must be at least 1 byte")]
    EmptyPayload,
    #[error("{count} Byzantine nodes configured but t = {t}")]
    TooManyByzantine { count: usize, t: usize },
    #[error("node {0} is outside 1..=n")]
    UnknownNode(NodeId),
    #[error("behavior {behavior} is only meaningful for the sender, not node {node}")]
    SenderOnlyBehavior { behavior: ByzantineBehavior, node: NodeId },
    #[error("behavior {0} is not supported by the {1} protocol")]
    UnsupportedBehavior(ByzantineBehavior, ProtocolKind),
    #[error("{0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    #[default]
    Coded,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryStrategy {
    /// Drops d uniformly chosen correct recipients of every batch.
    #[default]
    Random,
    /// Always drops the messages to a fixed victim set.
    FixedSet,
    /// Isolates a victim set chosen at the start of the run and spends any
    /// unused budget on the most valuable remaining messages.
    AdaptiveIsolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerPolicy {
    /// Uniformly random among in-flight messages.
    #[default]
    Random,
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ByzantineBehavior {
    /// Never takes a step.
    Crash,
    /// Receives but never sends.
    Silent,
    /// Sender only: broadcasts two different messages to interleaved halves.
    Equivocate,
    /// Emits random bytes and malformed protocol messages.
    Garbage,
    /// Follows the protocol but corrupts every fragment it sends.
    MutateFragments,
}

macro_rules! kebab_names {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = ConfigError;

            fn from_str(s: &str) -> Result<Self, ConfigError> {
                match s {
                    $($name => Ok(<$ty>::$variant),)*
                    other => Err(ConfigError::Parse(format!(
                        concat!("unknown ", stringify!($ty), " {:?}; expected one of: ", $($name, " "),*),
                        other
                    ))),
                }
            }
        }
    };
}

kebab_names!(ProtocolKind { Coded => "coded", Baseline => "baseline" });
kebab_names!(AdversaryStrategy {
    Random => "random",
    FixedSet => "fixed-set",
    AdaptiveIsolate => "adaptive-isolate",
});
kebab_names!(SchedulerPolicy { Random => "random", Fifo => "fifo" });
kebab_names!(ByzantineBehavior {
    Crash => "crash",
    Silent => "silent",
    Equivocate => "equivocate",
    Garbage => "garbage",
    MutateFragments => "mutate-fragments",
});

/// Assignment of Byzantine behaviors to node ids, written as a `+`-joined
/// list such as `equivocate+garbage` or `sender:crash`.
///
/// `equivocate` and any item prefixed with `sender:` go to the sender (node
/// 1). Other items go to the highest ids in order. Remaining Byzantine slots
/// up to `t` are filled with `silent`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BehaviorSpec {
    pub sender: Option<ByzantineBehavior>,
    pub others: Vec<ByzantineBehavior>,
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self {
            sender: None,
            others: vec![ByzantineBehavior::Silent],
        }
    }
}

impl BehaviorSpec {
    pub fn assign(&self, n: usize, t: usize) -> Result<BTreeMap<NodeId, ByzantineBehavior>, ConfigError> {
        let mut out = BTreeMap::new();
        if let Some(b) = self.sender {
            out.insert(SENDER, b);
        }
        let fill = ByzantineBehavior::Silent;
        let mut others = self.others.iter().copied().chain(std::iter::repeat(fill));
        let mut id = n;
        while out.len() < t && id > SENDER.0 {
            out.insert(NodeId(id), others.next().expect("infinite iterator"));
            id -= 1;
        }
        let explicit = usize::from(self.sender.is_some()) + self.others.len();
        if explicit > t && !(self.sender.is_none() && self.others == [fill]) {
            return Err(ConfigError::TooManyByzantine { count: explicit, t });
        }
        Ok(out)
    }
}

impl fmt::Display for BehaviorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        match self.sender {
            Some(ByzantineBehavior::Equivocate) => parts.push("equivocate".to_string()),
            Some(b) => parts.push(format!("sender:{b}")),
            None => {}
        }
        parts.extend(self.others.iter().map(|b| b.to_string()));
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for BehaviorSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let mut spec = BehaviorSpec { sender: None, others: Vec::new() };
        for item in s.split('+').map(str::trim).filter(|i| !i.is_empty()) {
            let (to_sender, name) = match item.strip_prefix("sender:") {
                Some(rest) => (true, rest),
                None => (false, item),
            };
            let b: ByzantineBehavior = name.parse()?;
            if to_sender || b == ByzantineBehavior::Equivocate {
                if spec.sender.replace(b).is_some() {
                    return Err(ConfigError::Parse(format!("two sender behaviors in {s:?}")));
                }
            } else {
                spec.others.push(b);
            }
        }
        if spec.sender.is_none() && spec.others.is_empty() {
            return Ok(BehaviorSpec::default());
        }
        Ok(spec)
    }
}

impl TryFrom<String> for BehaviorSpec {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, ConfigError> {
        s.parse()
    }
}

impl From<BehaviorSpec> for String {
    fn from(b: BehaviorSpec) -> String {
        b.to_string()
    }
}

/// Full description of one simulated broadcast instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub protocol: ProtocolKind,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub k: usize,
    pub epsilon: Epsilon,
    pub payload_len: usize,
    pub seed: u64,
    pub adversary: AdversaryStrategy,
    pub behavior: BehaviorSpec,
    pub scheduler: SchedulerPolicy,
    pub vc_scheme: VcScheme,
    pub max_events: u64,
    /// Explicit victims for the fixed-set adversary; empty picks the `d`
    /// highest-id correct nodes other than the sender.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub victims: Vec<NodeId>,
    pub allow_unsafe: bool,
    /// Re-check node invariants and message integrity after every event.
    #[serde(default)]
    pub audit: bool,
}

impl SimConfig {
    pub const DEFAULT_MAX_EVENTS: u64 = 5_000_000;

    /// A coded run with `t` silent Byzantine nodes and a correct sender.
    pub fn new(n: usize, t: usize, d: usize, k: usize) -> Self {
        Self {
            protocol: ProtocolKind::Coded,
            n,
            t,
            d,
            k,
            epsilon: Epsilon::ONE,
            payload_len: 256,
            seed: 0,
            adversary: AdversaryStrategy::Random,
            behavior: BehaviorSpec::default(),
            scheduler: SchedulerPolicy::Random,
            vc_scheme: VcScheme::Merkle,
            max_events: Self::DEFAULT_MAX_EVENTS,
            victims: Vec::new(),
            allow_unsafe: false,
            audit: false,
        }
    }

    pub fn byzantine(&self) -> Result<BTreeMap<NodeId, ByzantineBehavior>, ConfigError> {
        self.behavior.assign(self.n, self.t)
    }

    pub fn is_correct(&self, id: NodeId) -> bool {
        self.byzantine().map(|b| !b.contains_key(&id)).unwrap_or(true)
    }

    /// Number of correct nodes.
    pub fn correct_count(&self) -> usize {
        self.n - self.byzantine().map(|b| b.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 || self.n > MAX_FRAGMENTS {
            return Err(ConfigError::BadNodeCount(self.n));
        }
        if self.k == 0 {
            return Err(ConfigError::ZeroK);
        }
        if self.payload_len == 0 {
            return Err(ConfigError::EmptyPayload);
        }
        let byz = self.byzantine()?;
        for (&id, &b) in &byz {
            if id.0 < 1 || id.0 > self.n {
                return Err(ConfigError::UnknownNode(id));
            }
            if b == ByzantineBehavior::Equivocate && id != SENDER {
                return Err(ConfigError::SenderOnlyBehavior { behavior: b, node: id });
            }
            let coded_only = matches!(b, ByzantineBehavior::Equivocate | ByzantineBehavior::MutateFragments);
            if coded_only && self.protocol == ProtocolKind::Baseline {
                return Err(ConfigError::UnsupportedBehavior(b, self.protocol));
            }
        }
        for &v in &self.victims {
            if v.0 < 1 || v.0 > self.n {
                return Err(ConfigError::UnknownNode(v));
            }
        }
        if self.allow_unsafe {
            if self.k > self.n {
                return Err(KViolation::new(self.n, self.t, self.d, self.epsilon, self.k).into());
            }
            return Ok(());
        }
        if self.n <= 3 * self.t + 2 * self.d {
            return Err(ConfigError::ResilienceViolated { n: self.n, t: self.t, d: self.d });
        }
        validate_k(self.n, self.t, self.d, self.epsilon, self.k)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resilience_bound() {
        let cfg = SimConfig::new(7, 2, 1, 2);
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::ResilienceViolated { n: 7, t: 2, d: 1 })
        );
        let cfg = SimConfig { allow_unsafe: true, ..cfg };
        assert_eq!(cfg.validate(), Ok(()));
        assert!(SimConfig::new(10, 1, 1, 5).validate().is_ok());
        assert!(matches!(
            SimConfig::new(10, 1, 1, 6).validate(),
            Err(ConfigError::BadThreshold(_))
        ));
    }

    #[test]
    fn behavior_assignment() {
        let spec: BehaviorSpec = "equivocate+garbage".parse().unwrap();
        let m = spec.assign(8, 2).unwrap();
        assert_eq!(m[&NodeId(1)], ByzantineBehavior::Equivocate);
        assert_eq!(m[&NodeId(8)], ByzantineBehavior::Garbage);
        assert_eq!(m.len(), 2);

        let m = BehaviorSpec::default().assign(10, 3).unwrap();
        let ids: Vec<_> = m.keys().map(|i| i.0).collect();
        assert_eq!(ids, [8, 9, 10]);

        let m: BTreeMap<_, _> = "sender:crash".parse::<BehaviorSpec>().unwrap().assign(5, 1).unwrap();
        assert_eq!(m[&NodeId(1)], ByzantineBehavior::Crash);

        assert!(BehaviorSpec::default().assign(5, 0).unwrap().is_empty());
        let spec: BehaviorSpec = "garbage+garbage".parse().unwrap();
        assert!(spec.assign(8, 1).is_err());
        assert_eq!(spec.to_string(), "garbage+garbage");
        assert!("bogus".parse::<BehaviorSpec>().is_err());
    }

    #[test]
    fn equivocation_requires_sender_and_coded() {
        let mut cfg = SimConfig::new(8, 2, 0, 3);
        cfg.behavior = "equivocate".parse().unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.correct_count(), 6);
        cfg.protocol = ProtocolKind::Baseline;
        assert!(matches!(cfg.validate(), Err(ConfigError::UnsupportedBehavior(..))));
    }

    #[test]
    fn config_serializes() {
        let mut cfg = SimConfig::new(8, 2, 0, 3);
        cfg.behavior = "equivocate+garbage".parse().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"behavior\":\"equivocate+garbage\""), "{json}");
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}

//! Builds and runs one configured broadcast instance end to end.

use std::sync::Arc;

use bytes::Bytes;
use rand::RngCore;
use thiserror::Error;

use crate::baseline::EchoNode;
use crate::crypto::Keyring;
use crate::engine::{Engine, FinalState};
use crate::metrics::RunMetrics;
use crate::protocol::{CodedNode, ProtocolConfig, ProtocolError};
use crate::simnet::{
    rng_for, ByzantineActor, ByzantineBehavior, CodedGarbage, ConfigError, EchoGarbage, Equivocator,
    EventLog, Inert, Mutator, NodeSlot, Outcome, ProtocolKind, RngStream, SimConfig, Simulation, SENDER,
};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("protocol setup failed: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("the sender could not start: {0}")]
    Start(String),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub metrics: RunMetrics,
    pub log: EventLog,
    pub finals: Vec<FinalState>,
    /// Node invariant or channel integrity violations; empty in a sound run.
    pub violations: Vec<String>,
}

impl RunReport {
    /// A verdict failed or an audit found a violation.
    pub fn failed(&self) -> bool {
        self.metrics.verdicts.any_failed() || !self.violations.is_empty()
    }
}

/// The payloads the sender intends to broadcast: two distinct ones for an
/// equivocating sender.
pub fn payloads(config: &SimConfig) -> Vec<Bytes> {
    let mut rng = rng_for(config.seed, RngStream::Payload);
    let mut draw = || {
        let mut m = vec![0u8; config.payload_len];
        rng.fill_bytes(&mut m);
        m
    };
    let m1 = draw();
    let equivocating = config
        .byzantine()
        .is_ok_and(|b| b.get(&SENDER) == Some(&ByzantineBehavior::Equivocate));
    if !equivocating {
        return vec![Bytes::from(m1)];
    }
    let mut m2 = draw();
    if m2 == m1 {
        m2[0] ^= 0xff;
    }
    vec![Bytes::from(m1), Bytes::from(m2)]
}

/// Runs `config` with its seed replaced by `seed`.
pub fn run_experiment(config: &SimConfig, seed: u64) -> Result<RunReport, ExperimentError> {
    let config = SimConfig { seed, ..config.clone() };
    config.validate()?;
    let payloads = payloads(&config);
    let keyring = Arc::new(Keyring::generate(config.n, config.t, seed));
    let byzantine = config.byzantine()?;

    match config.protocol {
        ProtocolKind::Coded => {
            let pc = Arc::new(ProtocolConfig::new(
                keyring,
                config.k,
                config.payload_len,
                SENDER,
                config.vc_scheme,
            )?);
            let slots = NodeId::all(config.n)
                .map(|id| match byzantine.get(&id) {
                    None => NodeSlot::Correct(CodedNode::new(id, pc.clone())),
                    Some(&b) => NodeSlot::Byzantine(coded_actor(b, id, &pc, &payloads)),
                })
                .collect();
            finish(&config, slots, &payloads)
        }
        ProtocolKind::Baseline => {
            let slots = NodeId::all(config.n)
                .map(|id| match byzantine.get(&id) {
                    None => NodeSlot::Correct(EchoNode::new(id, SENDER, keyring.clone())),
                    Some(ByzantineBehavior::Garbage) => {
                        NodeSlot::Byzantine(Box::new(EchoGarbage::new(id, SENDER, keyring.clone())))
                    }
                    Some(_) => NodeSlot::Byzantine(Box::new(Inert)),
                })
                .collect();
            finish(&config, slots, &payloads)
        }
    }
}

fn coded_actor(
    behavior: ByzantineBehavior,
    id: NodeId,
    pc: &Arc<ProtocolConfig>,
    payloads: &[Bytes],
) -> Box<dyn ByzantineActor<crate::protocol::ProtocolMessage>> {
    match behavior {
        ByzantineBehavior::Crash | ByzantineBehavior::Silent => Box::new(Inert),
        ByzantineBehavior::Garbage => Box::new(CodedGarbage::new(id, pc.clone())),
        ByzantineBehavior::Equivocate => Box::new(Equivocator::new(
            id,
            pc.clone(),
            payloads[0].clone(),
            payloads[1].clone(),
        )),
        ByzantineBehavior::MutateFragments => {
            let payload = (id == SENDER).then(|| payloads[0].clone());
            Box::new(Mutator::new(CodedNode::new(id, pc.clone()), payload))
        }
    }
}

fn finish<E>(config: &SimConfig, slots: Vec<NodeSlot<E>>, payloads: &[Bytes]) -> Result<RunReport, ExperimentError>
where
    E: Engine,
    E::Message: 'static,
{
    let mut sim = Simulation::new(config, slots);
    sim.start(payloads).map_err(|e| ExperimentError::Start(e.to_string()))?;
    let Outcome { log, finals, ledger, events, inconclusive, violations, .. } = sim.run_to_quiescence();
    let metrics = RunMetrics::assemble(config, &ledger, &log, &finals, events, inconclusive);
    Ok(RunReport { metrics, log, finals, violations })
}

//! Deterministic discrete-event network.
//!
//! Correct nodes talk through [`Simulation::comm`]: every invocation forms a
//! batch of `n` slots from which the message adversary removes at most `d`
//! messages addressed to correct nodes. Byzantine nodes unicast freely and
//! are not subject to drops. The scheduler then dispatches in-flight messages
//! one at a time until none remain or the event cap is hit.

use std::collections::VecDeque;
use std::sync::Arc;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{hash, Digest};
use crate::engine::{Engine, FinalState, Step, Transmission, WireMessage};
use crate::metrics::Ledger;
use crate::NodeId;

mod adversary;
mod byzantine;
mod config;
mod log;

pub use adversary::{Adversary, Candidate};
pub use byzantine::{
    ByzContext, ByzantineActor, CodedGarbage, EchoGarbage, Equivocator, Inert, Mutator, Unicast,
};
pub use config::{
    AdversaryStrategy, BehaviorSpec, ByzantineBehavior, ConfigError, ProtocolKind, SchedulerPolicy,
    SimConfig, SENDER,
};
pub use log::{Event, EventKind, EventLog, LogParseError};

/// Messages a Byzantine node may send over a whole run, per node of the system.
pub const BYZANTINE_BUDGET_PER_NODE: usize = 16;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Payload = 1,
    Scheduler = 2,
    Adversary = 3,
    Byzantine = 4,
}

pub fn rng_for(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// What travels on a link: a structured message or raw bytes.
#[derive(Debug, Clone)]
pub enum Wire<M> {
    Msg(Arc<M>),
    Raw(Bytes),
}

impl<M: WireMessage> Wire<M> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Wire::Msg(m) => m.kind_name(),
            Wire::Raw(_) => "RAW",
        }
    }

    fn digest(&self) -> Digest {
        match self {
            Wire::Msg(m) => m.canonical_digest(),
            Wire::Raw(b) => hash(b),
        }
    }

    fn metered_size_bits(&self) -> u64 {
        match self {
            Wire::Msg(m) => m.metered_size_bits(),
            Wire::Raw(b) => 8 * b.len() as u64,
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight<M> {
    from: NodeId,
    to: NodeId,
    wire: Wire<M>,
    digest: Digest,
}

pub enum NodeSlot<E: Engine> {
    Correct(E),
    Byzantine(Box<dyn ByzantineActor<E::Message>>),
}

/// Result of running a simulation to quiescence.
pub struct Outcome<E> {
    pub log: EventLog,
    /// End states of the correct nodes, in id order.
    pub finals: Vec<FinalState>,
    pub ledger: Ledger,
    pub events: u64,
    /// The event cap was hit before the network went quiet.
    pub inconclusive: bool,
    /// Invariant or integrity violations found by the per-event audit.
    pub violations: Vec<String>,
    /// The correct nodes themselves, for post-run inspection.
    pub engines: Vec<E>,
}

pub struct Simulation<E: Engine> {
    n: usize,
    d: usize,
    scheduler: SchedulerPolicy,
    max_events: u64,
    audit: bool,
    slots: Vec<NodeSlot<E>>,
    queue: VecDeque<InFlight<E::Message>>,
    local: VecDeque<InFlight<E::Message>>,
    adversary: Adversary,
    sched_rng: ChaCha8Rng,
    byz_rng: ChaCha8Rng,
    log: EventLog,
    ledger: Ledger,
    events: u64,
    byz_sent: Vec<usize>,
    byz_budget: usize,
    violations: Vec<String>,
}

impl<E: Engine> Simulation<E>
where
    E::Message: 'static,
{
    /// `slots` holds one entry per node in id order.
    pub fn new(config: &SimConfig, slots: Vec<NodeSlot<E>>) -> Self {
        let n = config.n;
        assert_eq!(slots.len(), n, "one slot per node");
        let eligible: Vec<NodeId> = NodeId::all(n)
            .filter(|&id| id != SENDER && matches!(slots[id.0 - 1], NodeSlot::Correct(_)))
            .collect();
        let adversary = Adversary::new(
            config.adversary,
            config.d,
            &eligible,
            &config.victims,
            rng_for(config.seed, RngStream::Adversary),
        );
        Self {
            n,
            d: config.d,
            scheduler: config.scheduler,
            max_events: config.max_events,
            audit: config.audit,
            slots,
            queue: VecDeque::new(),
            local: VecDeque::new(),
            adversary,
            sched_rng: rng_for(config.seed, RngStream::Scheduler),
            byz_rng: rng_for(config.seed, RngStream::Byzantine),
            log: EventLog::new(),
            ledger: Ledger::new(n),
            events: 0,
            byz_sent: vec![0; n],
            byz_budget: BYZANTINE_BUDGET_PER_NODE * n,
            violations: Vec::new(),
        }
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    fn is_correct(&self, id: NodeId) -> bool {
        matches!(self.slots[id.0 - 1], NodeSlot::Correct(_))
    }

    /// Records the sender's broadcast of each payload (two for an
    /// equivocating sender), starts the sender if correct and lets every
    /// Byzantine node act once.
    pub fn start(&mut self, payloads: &[Bytes]) -> Result<(), E::Error> {
        for p in payloads {
            self.log.push(EventKind::Bcast, SENDER, SENDER, &hash(p));
        }
        if let (NodeSlot::Correct(node), Some(p)) = (&mut self.slots[SENDER.0 - 1], payloads.first()) {
            let step = node.start_broadcast(p, 0)?;
            self.apply(SENDER, step);
        }
        for id in NodeId::all(self.n) {
            let out = match &mut self.slots[id.0 - 1] {
                NodeSlot::Byzantine(actor) => {
                    let mut ctx = ByzContext { n: self.n, at: 0, rng: &mut self.byz_rng };
                    actor.on_start(&mut ctx)
                }
                NodeSlot::Correct(_) => continue,
            };
            self.unicast(id, out);
        }
        Ok(())
    }

    /// Send-to-all by a correct node: `msgs` has one slot per node.
    pub fn comm(&mut self, from: NodeId, msgs: Vec<Option<E::Message>>) {
        assert_eq!(msgs.len(), self.n, "comm from {from} with wrong arity");
        let batch = msgs
            .into_iter()
            .map(|m| m.map(|m| {
                let digest = m.canonical_digest();
                (Arc::new(m), digest)
            }))
            .collect();
        self.enqueue_batch(from, batch);
    }

    pub fn broadcast_prim(&mut self, from: NodeId, msg: E::Message) {
        let digest = msg.canonical_digest();
        let msg = Arc::new(msg);
        self.enqueue_batch(from, vec![Some((msg, digest)); self.n]);
    }

    fn enqueue_batch(&mut self, from: NodeId, batch: Vec<Option<(Arc<E::Message>, Digest)>>) {
        self.ledger.record_send_to_all(from);
        for m in &batch {
            self.ledger.record_message(from, m.as_ref().map(|(m, _)| &**m));
        }
        let candidates: Vec<Candidate> = batch
            .iter()
            .enumerate()
            .filter_map(|(slot, m)| {
                let to = NodeId(slot + 1);
                let (m, _) = m.as_ref()?;
                (to != from && self.is_correct(to)).then(|| Candidate { slot, to, weight: m.content_weight() })
            })
            .collect();
        let drops = self.adversary.select_drops(&candidates);
        assert!(drops.len() <= self.d, "adversary dropped {} > d = {} messages", drops.len(), self.d);
        self.ledger.record_drops(drops.len());
        let mut dropped = vec![false; self.n];
        for i in drops {
            let c = candidates[i];
            dropped[c.slot] = true;
            let (_, digest) = batch[c.slot].as_ref().expect("candidates are non-empty slots");
            self.log.push(EventKind::Drop, from, c.to, digest);
        }
        for (slot, m) in batch.into_iter().enumerate() {
            let Some((msg, digest)) = m else { continue };
            if dropped[slot] {
                continue;
            }
            let to = NodeId(slot + 1);
            let local = to == from && msg.immediate_self_delivery();
            let f = InFlight { from, to, wire: Wire::Msg(msg), digest };
            if local {
                self.local.push_back(f);
            } else {
                self.queue.push_back(f);
            }
        }
    }

    fn unicast(&mut self, from: NodeId, out: Vec<Unicast<E::Message>>) {
        for u in out {
            let sent = &mut self.byz_sent[from.0 - 1];
            if *sent >= self.byz_budget {
                break;
            }
            *sent += 1;
            self.ledger.record_byzantine(u.wire.metered_size_bits());
            let digest = u.wire.digest();
            self.queue.push_back(InFlight { from, to: u.to, wire: u.wire, digest });
        }
    }

    fn apply(&mut self, from: NodeId, step: Step<E::Message>) {
        for tx in step.transmissions {
            match tx {
                Transmission::Comm(msgs) => self.comm(from, msgs),
                Transmission::Broadcast(m) => self.broadcast_prim(from, m),
            }
        }
        if let Some(d) = step.delivery {
            self.log.push(EventKind::Deliver, from, from, &d.digest());
        }
    }

    fn next(&mut self) -> Option<InFlight<E::Message>> {
        if let Some(f) = self.local.pop_front() {
            return Some(f);
        }
        match self.scheduler {
            SchedulerPolicy::Fifo => self.queue.pop_front(),
            SchedulerPolicy::Random if self.queue.is_empty() => None,
            SchedulerPolicy::Random => {
                let i = self.sched_rng.gen_range(0..self.queue.len());
                self.queue.swap_remove_back(i)
            }
        }
    }

    fn dispatch(&mut self, f: InFlight<E::Message>) {
        self.events += 1;
        let at = self.events;
        self.log.push(EventKind::Dispatch(f.wire.kind_name()), f.from, f.to, &f.digest);
        if self.audit && f.wire.digest() != f.digest {
            self.violations.push(format!("event {at}: message from {} altered in flight", f.from));
        }
        let out = match &mut self.slots[f.to.0 - 1] {
            NodeSlot::Correct(node) => {
                let decoded;
                let msg = match &f.wire {
                    Wire::Msg(m) => &**m,
                    Wire::Raw(raw) => match node.decode(raw) {
                        Some(m) => {
                            decoded = m;
                            &decoded
                        }
                        None => return,
                    },
                };
                let before = self.audit.then(|| node.final_state().signed);
                let step = node.receive(f.from, msg, at);
                if let Some(before) = before {
                    let after = node.final_state().signed;
                    if before.is_some() && before != after {
                        self.violations.push(format!("event {at}: node {} changed its signed commitment", f.to));
                    }
                    if let Err(e) = node.audit() {
                        self.violations.push(format!("event {at}: {e}"));
                    }
                }
                self.apply(f.to, step);
                return;
            }
            NodeSlot::Byzantine(actor) => {
                let mut ctx = ByzContext { n: self.n, at, rng: &mut self.byz_rng };
                actor.on_message(f.from, &f.wire, &mut ctx)
            }
        };
        self.unicast(f.to, out);
    }

    /// Dispatches until no message is in flight or the event cap is reached.
    pub fn run_to_quiescence(mut self) -> Outcome<E> {
        let mut inconclusive = false;
        while let Some(f) = self.next() {
            if self.events >= self.max_events {
                inconclusive = true;
                break;
            }
            self.dispatch(f);
        }
        let engines: Vec<E> = self
            .slots
            .into_iter()
            .filter_map(|s| match s {
                NodeSlot::Correct(e) => Some(e),
                NodeSlot::Byzantine(_) => None,
            })
            .collect();
        let mut violations = self.violations;
        violations.extend(engines.iter().filter_map(|e| e.audit().err()));
        Outcome {
            log: self.log,
            finals: engines.iter().map(Engine::final_state).collect(),
            ledger: self.ledger,
            events: self.events,
            inconclusive,
            violations,
            engines,
        }
    }
}

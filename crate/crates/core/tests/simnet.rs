use std::collections::BTreeSet;

use mbrb_core::crypto::VcScheme;
use mbrb_core::experiment::{payloads, run_experiment};
use mbrb_core::metrics::{check_properties, Verdict};
use mbrb_core::simnet::{
    AdversaryStrategy, ByzantineBehavior, EventKind, EventLog, ProtocolKind, SchedulerPolicy, SimConfig,
};
use mbrb_core::NodeId;

fn cfg(n: usize, t: usize, d: usize, k: usize) -> SimConfig {
    SimConfig { payload_len: 64, ..SimConfig::new(n, t, d, k) }
}

#[test]
fn full_delivery_without_faults() {
    let r = run_experiment(&cfg(7, 0, 0, 3), 1).unwrap();
    assert_eq!(r.metrics.deliveries, 7);
    assert!(!r.failed(), "{:?} {:?}", r.metrics.verdicts, r.violations);
    let m = &payloads(&cfg(7, 0, 0, 3).clone_with_seed(1))[0];
    assert!(r.finals.iter().all(|f| f.delivered.as_ref().unwrap().message == *m));
}

trait WithSeed {
    fn clone_with_seed(&self, seed: u64) -> SimConfig;
}

impl WithSeed for SimConfig {
    fn clone_with_seed(&self, seed: u64) -> SimConfig {
        SimConfig { seed, ..self.clone() }
    }
}

#[test]
fn bounded_delivery_with_drops() {
    for strategy in [AdversaryStrategy::Random, AdversaryStrategy::FixedSet, AdversaryStrategy::AdaptiveIsolate] {
        for seed in 0..20 {
            let c = SimConfig { adversary: strategy, ..cfg(10, 1, 1, 3) };
            let r = run_experiment(&c, seed).unwrap();
            assert!(!r.failed(), "{strategy} seed {seed}: {:?} {:?}", r.metrics.verdicts, r.violations);
            assert!(r.metrics.deliveries >= 8, "{strategy} seed {seed}: {}", r.metrics.deliveries);
            assert!(r.metrics.max_drops_per_batch <= 1);
        }
    }
}

#[test]
fn fixed_set_victims_never_hear_the_sender() {
    let c = SimConfig {
        adversary: AdversaryStrategy::FixedSet,
        victims: vec![NodeId(4), NodeId(5)],
        ..cfg(5, 0, 2, 1)
    };
    let r = run_experiment(&c, 3).unwrap();
    let first_batch: Vec<_> = r
        .log
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::Dispatch("SEND"))
        .map(|e| e.to.0)
        .collect();
    assert!(!first_batch.contains(&4) && !first_batch.contains(&5), "{first_batch:?}");
}

#[test]
fn adaptive_victims_are_isolated() {
    let c = SimConfig { adversary: AdversaryStrategy::AdaptiveIsolate, ..cfg(10, 1, 2, 3) };
    for seed in 0..10 {
        let r = run_experiment(&c, seed).unwrap();
        let from_others: BTreeSet<usize> = r
            .log
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Dispatch(_)) && e.from != e.to)
            .map(|e| e.to.0)
            .collect();
        let drops: BTreeSet<usize> = r
            .log
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Drop)
            .map(|e| e.to.0)
            .collect();
        let isolated: Vec<_> = (2..=9).filter(|i| !from_others.contains(i)).collect();
        assert_eq!(isolated.len(), 2, "seed {seed}: {isolated:?}");
        assert!(isolated.iter().all(|i| drops.contains(i)));
    }
}

#[test]
fn crashed_sender_delivers_nothing() {
    let c = SimConfig { behavior: "sender:crash".parse().unwrap(), ..cfg(7, 1, 1, 2) };
    let r = run_experiment(&c, 0).unwrap();
    assert_eq!(r.metrics.deliveries, 0);
    assert_eq!(r.metrics.totals.messages_sent, 0);
    assert_eq!(r.metrics.verdicts.validity, Verdict::NotApplicable);
}

#[test]
fn equivocation_never_splits_deliveries() {
    for (n, d) in [(8, 0), (10, 1)] {
        for scheduler in [SchedulerPolicy::Random, SchedulerPolicy::Fifo] {
            let c = SimConfig {
                behavior: "equivocate+garbage".parse().unwrap(),
                scheduler,
                ..cfg(n, 2, d, 2)
            };
            for seed in 0..20 {
                let r = run_experiment(&c, seed).unwrap();
                let v = r.metrics.verdicts;
                assert_eq!(v.no_duplicity, Verdict::Pass);
                assert_eq!(v.validity, Verdict::NotApplicable);
                assert_eq!(v.local_delivery, Verdict::NotApplicable);
                assert!(!r.failed(), "{v:?} {:?}", r.violations);
                assert!(r.metrics.byzantine_traffic.messages_sent > 0);
            }
        }
    }
}

#[test]
fn mutated_fragments_never_stored() {
    let c = SimConfig {
        behavior: "mutate-fragments+mutate-fragments".parse().unwrap(),
        audit: true,
        ..cfg(10, 2, 1, 3)
    };
    for seed in 0..5 {
        let r = run_experiment(&c, seed).unwrap();
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        assert!(!r.failed());
        assert!(r.metrics.deliveries >= 1);
    }
    let c = SimConfig { behavior: "sender:mutate-fragments".parse().unwrap(), audit: true, ..cfg(10, 2, 1, 3) };
    let r = run_experiment(&c, 0).unwrap();
    assert!(r.violations.is_empty(), "{:?}", r.violations);
    assert_eq!(r.metrics.deliveries, 0);
}

#[test]
fn garbage_is_harmless() {
    let c = SimConfig {
        behavior: ByzantineBehavior::Garbage.to_string().parse().unwrap(),
        audit: true,
        ..cfg(13, 2, 2, 3)
    };
    for seed in 0..5 {
        let r = run_experiment(&c, seed).unwrap();
        assert!(!r.failed(), "{:?} {:?}", r.metrics.verdicts, r.violations);
        assert!(r.log.events().iter().any(|e| e.kind == EventKind::Dispatch("RAW")));
    }
}

#[test]
fn same_seed_same_log_and_json() {
    let c = SimConfig { behavior: "garbage".parse().unwrap(), ..cfg(10, 1, 1, 3) };
    let a = run_experiment(&c, 42).unwrap();
    let b = run_experiment(&c, 42).unwrap();
    assert_eq!(a.log.to_text(), b.log.to_text());
    assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    let other = run_experiment(&c, 43).unwrap();
    assert_ne!(a.log.to_text(), other.log.to_text());
}

#[test]
fn verdicts_recomputed_from_serialized_log() {
    let c = SimConfig { behavior: "equivocate".parse().unwrap(), ..cfg(8, 2, 0, 2) };
    for seed in 0..5 {
        let r = run_experiment(&c, seed).unwrap();
        let parsed = EventLog::parse(&r.log.to_text()).unwrap();
        let config = r.metrics.config.clone();
        assert_eq!(check_properties(&parsed, &r.finals, &config), r.metrics.verdicts);
    }
}

#[test]
fn message_bound_holds() {
    for (n, t, d, k) in [(8, 1, 1, 3), (13, 2, 2, 3)] {
        for seed in 0..5 {
            let r = run_experiment(&cfg(n, t, d, k), seed).unwrap();
            assert!(r.metrics.max_send_to_all() <= 4);
            assert!(r.metrics.max_messages_sent() <= 4 * n as u64);
            assert!(r.metrics.totals.messages_sent <= 4 * (n * n) as u64);
        }
    }
}

#[test]
fn baseline_delivers_and_costs_n_messages_of_payload() {
    let c = SimConfig { protocol: ProtocolKind::Baseline, ..cfg(8, 0, 0, 3) };
    let r = run_experiment(&c, 0).unwrap();
    assert_eq!(r.metrics.deliveries, 8);
    assert!(!r.failed());
    assert_eq!(r.metrics.verdicts.global_delivery, Verdict::NotApplicable);
    for node in &r.metrics.per_node {
        assert!(node.counters.send_to_all <= 2);
        assert!(node.counters.bits_sent >= 8 * 64 * 8);
    }
}

#[test]
fn constant_size_commitments_run() {
    let c = SimConfig { vc_scheme: VcScheme::ConstantSizeSimulated, ..cfg(10, 1, 1, 5) };
    let r = run_experiment(&c, 9).unwrap();
    assert!(!r.failed());
    assert!(r.metrics.deliveries >= 7);
}

#[test]
fn invalid_configuration_rejected() {
    assert!(run_experiment(&cfg(7, 2, 1, 2), 0).is_err());
    assert!(run_experiment(&cfg(10, 1, 1, 6), 0).is_err());
    let unsafe_cfg = SimConfig { allow_unsafe: true, ..cfg(7, 2, 1, 2) };
    assert!(run_experiment(&unsafe_cfg, 0).is_ok());
}

#[test]
fn event_cap_marks_run_inconclusive() {
    let c = SimConfig { max_events: 10, ..cfg(7, 0, 0, 3) };
    let r = run_experiment(&c, 0).unwrap();
    assert!(r.metrics.inconclusive);
    assert_eq!(r.metrics.events, 10);
    assert_eq!(r.metrics.verdicts.local_delivery, Verdict::NotApplicable);
    assert!(!r.failed());
}

#[test]
fn baseline_cost_grows_linearly_in_n() {
    let bytes = |n: usize| {
        let c = SimConfig { protocol: ProtocolKind::Baseline, payload_len: 64 << 10, ..SimConfig::new(n, 0, 0, 1) };
        let r = run_experiment(&c, 0).unwrap();
        assert_eq!(r.metrics.deliveries, n);
        r.metrics.mean_bytes_per_node()
    };
    let ratio = bytes(32) / bytes(8);
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
}

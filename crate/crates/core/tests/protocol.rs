use std::collections::VecDeque;
use std::sync::Arc;

use bytes::Bytes;
use mbrb_core::crypto::{Commitment, Keyring, SignatureShare, VcScheme, VectorCommitment};
use mbrb_core::engine::{Step, Transmission, WireMessage};
use mbrb_core::metrics::Ledger;
use mbrb_core::protocol::{
    compute_frag_vec_commit, is_valid, CodedNode, FragmentTuple, ProtocolConfig, ProtocolError, ProtocolMessage,
    Signatures,
};
use mbrb_core::NodeId;

const N: usize = 7;
const T: usize = 1;
const K: usize = 3;
const LEN: usize = 9;

fn config() -> Arc<ProtocolConfig> {
    let kr = Arc::new(Keyring::generate(N, T, 5));
    Arc::new(ProtocolConfig::new(kr, K, LEN, NodeId(1), VcScheme::Merkle).unwrap())
}

fn node(pc: &Arc<ProtocolConfig>, id: usize) -> CodedNode {
    CodedNode::new(NodeId(id), pc.clone())
}

fn msg() -> Vec<u8> {
    b"coded-brb".to_vec()
}

fn share(pc: &ProtocolConfig, id: usize, c: &Commitment) -> SignatureShare {
    pc.keyring.ts_sign_share(NodeId(id), c).unwrap()
}

fn broadcast_of(step: &Step<ProtocolMessage>) -> &ProtocolMessage {
    match &step.transmissions[..] {
        [Transmission::Broadcast(m)] => m,
        other => panic!("expected one broadcast, got {other:?}"),
    }
}

fn comm_of(step: &Step<ProtocolMessage>) -> &[Option<ProtocolMessage>] {
    match &step.transmissions[..] {
        [Transmission::Comm(v)] => v,
        other => panic!("expected one comm, got {other:?}"),
    }
}

fn send_for(pc: &Arc<ProtocolConfig>, m: &[u8], to: usize) -> ProtocolMessage {
    let (commitment, tuples) = compute_frag_vec_commit(m, pc).unwrap();
    ProtocolMessage::Send {
        commitment,
        tuple: tuples[to - 1].clone(),
        sender_share: share(pc, 1, &commitment),
    }
}

#[test]
fn frag_vec_commit_is_deterministic_and_sound() {
    let pc = config();
    let (c1, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let (c2, _) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(tuples.len(), N);
    for (j, t) in tuples.iter().enumerate() {
        assert_eq!(t.index(), j + 1);
        assert_eq!(t.proof.index, t.index());
        assert!(pc.vc.vc_verify(&c1, &t.proof, &t.fragment.data, t.index()));
    }
    let (c3, _) = compute_frag_vec_commit(b"coded-brc", &pc).unwrap();
    assert_ne!(c1, c3);
    assert!(compute_frag_vec_commit(b"short", &pc).is_err());
}

#[test]
fn sender_emits_one_send_per_node() {
    let pc = config();
    let mut s = node(&pc, 1);
    let step = s.mbrb_broadcast(&msg()).unwrap();
    let sends = comm_of(&step);
    assert_eq!(sends.len(), N);
    for (j, m) in sends.iter().enumerate() {
        match m {
            Some(ProtocolMessage::Send { tuple, sender_share, .. }) => {
                assert_eq!(tuple.index(), j + 1);
                assert_eq!(sender_share.signer(), NodeId(1));
            }
            other => panic!("slot {j}: {other:?}"),
        }
    }
    assert!(matches!(s.mbrb_broadcast(&msg()), Err(ProtocolError::DoubleBroadcast)));
    assert!(matches!(node(&pc, 2).mbrb_broadcast(&msg()), Err(ProtocolError::NotSender(NodeId(2)))));
}

#[test]
fn validity_predicate() {
    let pc = config();
    let (c, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let s1 = share(&pc, 1, &c);
    assert!(is_valid(&pc, &c, &[Some(&tuples[1])], Signatures::Shares(std::slice::from_ref(&s1))));

    let without_sender = [share(&pc, 2, &c), share(&pc, 3, &c)];
    assert!(!is_valid(&pc, &c, &[None], Signatures::Shares(&without_sender)));

    let sigma = pc.keyring.ts_combine((1..=pc.keyring.tau()).map(|i| share(&pc, i, &c)).collect::<Vec<_>>().iter()).unwrap();
    assert!(is_valid(&pc, &c, &[Some(&tuples[0]), Some(&tuples[1])], Signatures::Threshold(&sigma)));
    let mut tampered = tuples[1].clone();
    let mut data = tampered.fragment.data.to_vec();
    data[0] ^= 0x40;
    tampered.fragment.data = Bytes::from(data);
    assert!(!is_valid(&pc, &c, &[Some(&tuples[0]), Some(&tampered)], Signatures::Threshold(&sigma)));
}

#[test]
fn send_handler() {
    let pc = config();
    let mut n2 = node(&pc, 2);
    let send = send_for(&pc, &msg(), 2);
    let step = n2.handle_message(NodeId(1), &send, 1);
    match broadcast_of(&step) {
        ProtocolMessage::Forward { tuple: Some(t), shares, .. } => {
            assert_eq!(t.index(), 2);
            assert_eq!(shares[0].signer(), NodeId(1));
            assert_eq!(shares[1].signer(), NodeId(2));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(n2.signed_commitment(), Some(send.commitment()));

    // forged sender share
    let mut n3 = node(&pc, 3);
    let ProtocolMessage::Send { commitment, tuple, .. } = send_for(&pc, &msg(), 3) else { unreachable!() };
    let forged = ProtocolMessage::Send { commitment, tuple, sender_share: share(&pc, 4, &commitment) };
    assert!(n3.handle_message(NodeId(1), &forged, 1).is_empty());
    assert_eq!(n3.signed_commitment(), None);

    // second commitment after signing the first
    let other = send_for(&pc, b"another-m", 2);
    assert!(n2.handle_message(NodeId(1), &other, 2).is_empty());
    assert!(n2.store(other.commitment()).is_none());

    // not from the sender, or not this node's fragment
    let mut n4 = node(&pc, 4);
    assert!(n4.handle_message(NodeId(5), &send_for(&pc, &msg(), 4), 1).is_empty());
    assert!(n4.handle_message(NodeId(1), &send_for(&pc, &msg(), 5), 1).is_empty());
}

#[test]
fn forward_handler() {
    let pc = config();
    let (c, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let mut n4 = node(&pc, 4);
    let fwd = ProtocolMessage::Forward {
        commitment: c,
        tuple: Some(tuples[2].clone()),
        shares: [share(&pc, 1, &c), share(&pc, 3, &c)],
    };
    let step = n4.handle_message(NodeId(3), &fwd, 1);
    match broadcast_of(&step) {
        ProtocolMessage::Forward { tuple: None, shares, .. } => {
            assert_eq!(shares.each_ref().map(|s| s.signer().0), [1, 4]);
        }
        other => panic!("{other:?}"),
    }
    let store = n4.store(&c).unwrap();
    assert_eq!(store.fragments.get(&3), Some(&tuples[2]));
    assert!(store.shares.contains_key(&NodeId(3)) && store.shares.contains_key(&NodeId(4)));

    let later = ProtocolMessage::Forward { commitment: c, tuple: None, shares: [share(&pc, 1, &c), share(&pc, 5, &c)] };
    assert!(n4.handle_message(NodeId(5), &later, 2).is_empty());
    assert!(n4.store(&c).unwrap().shares.contains_key(&NodeId(5)));

    // a tuple whose index does not match the forwarder is dropped whole
    let mismatched = ProtocolMessage::Forward {
        commitment: c,
        tuple: Some(tuples[5].clone()),
        shares: [share(&pc, 1, &c), share(&pc, 7, &c)],
    };
    assert!(n4.handle_message(NodeId(7), &mismatched, 3).is_empty());
    assert!(!n4.store(&c).unwrap().shares.contains_key(&NodeId(7)));
}

#[test]
fn threshold_signature_lookup() {
    let pc = config();
    let (c, _) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let tau = pc.keyring.tau();
    assert_eq!(tau, 5);
    let mut n6 = node(&pc, 6);
    // shares from the sender, nodes 2..tau-1 and n6 itself
    for j in 2..tau - 1 {
        let f = ProtocolMessage::Forward { commitment: c, tuple: None, shares: [share(&pc, 1, &c), share(&pc, j, &c)] };
        n6.handle_message(NodeId(j), &f, j as u64);
    }
    assert_eq!(n6.store(&c).unwrap().shares.len(), tau - 1);
    assert!(n6.get_thresh_sig(&c).is_none());
    let f = ProtocolMessage::Forward { commitment: c, tuple: None, shares: [share(&pc, 1, &c), share(&pc, 7, &c)] };
    n6.handle_message(NodeId(7), &f, 9);
    let sigma = n6.get_thresh_sig(&c).unwrap();
    assert!(pc.keyring.ts_verify(&c, &sigma));
    let expected = pc.keyring.ts_combine(n6.store(&c).unwrap().shares.values()).unwrap();
    assert_eq!(sigma, expected);
}

fn sigma_for(pc: &ProtocolConfig, c: &Commitment) -> mbrb_core::crypto::ThresholdSignature {
    let shares: Vec<_> = (1..=pc.keyring.tau()).map(|i| share(pc, i, c)).collect();
    pc.keyring.ts_combine(shares.iter()).unwrap()
}

#[test]
fn bundle_handler_and_stored_sigma() {
    let pc = config();
    let (c, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let sigma = sigma_for(&pc, &c);
    let mut n5 = node(&pc, 5);

    let no_own = ProtocolMessage::Bundle { commitment: c, own: tuples[1].clone(), yours: None, sigma: sigma.clone() };
    assert!(n5.handle_message(NodeId(2), &no_own, 1).is_empty());
    assert_eq!(n5.get_thresh_sig(&c), Some(sigma.clone()));
    assert!(!n5.bundle_sent());

    let with_own = ProtocolMessage::Bundle {
        commitment: c,
        own: tuples[2].clone(),
        yours: Some(tuples[4].clone()),
        sigma: sigma.clone(),
    };
    // fragments 2, 3 and 5 reach k = 3: re-broadcast, then deliver with a comm
    let step = n5.handle_message(NodeId(3), &with_own, 2);
    match &step.transmissions[..] {
        [Transmission::Broadcast(ProtocolMessage::Bundle { own, yours: None, .. }), Transmission::Comm(v)] => {
            assert_eq!(own.index(), 5);
            assert_eq!(v.len(), N);
        }
        other => panic!("{other:?}"),
    }
    assert!(n5.bundle_sent());
    assert!(step.delivery.is_some());

    let again = ProtocolMessage::Bundle {
        commitment: c,
        own: tuples[6].clone(),
        yours: Some(tuples[4].clone()),
        sigma: sigma.clone(),
    };
    assert!(n5.handle_message(NodeId(7), &again, 3).is_empty());
    assert!(n5.store(&c).unwrap().fragments.contains_key(&7));
}

#[test]
fn quorum_delivery_and_bundles() {
    let pc = config();
    let (c, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let sigma = sigma_for(&pc, &c);
    let mut n2 = node(&pc, 2);
    let b = |j: usize| ProtocolMessage::Bundle { commitment: c, own: tuples[j - 1].clone(), yours: None, sigma: sigma.clone() };
    assert!(n2.handle_message(NodeId(3), &b(3), 1).delivery.is_none());
    assert!(n2.handle_message(NodeId(4), &b(4), 2).delivery.is_none());
    let step = n2.handle_message(NodeId(6), &b(6), 3);
    assert_eq!(step.delivery.as_ref().unwrap().message, Bytes::from(msg()));
    assert_eq!(step.delivery.as_ref().unwrap().at_event, 3);
    let bundles = comm_of(&step);
    assert_eq!(bundles.len(), N);
    for (j, m) in bundles.iter().enumerate() {
        match m {
            Some(ProtocolMessage::Bundle { own, yours: Some(y), .. }) => {
                assert_eq!(own.index(), 2);
                assert_eq!(y.index(), j + 1);
                assert_eq!(y, &tuples[j]);
            }
            other => panic!("{other:?}"),
        }
    }
    // quorum condition again after delivery
    assert!(n2.handle_message(NodeId(7), &b(7), 4).is_empty());
    assert_eq!(n2.delivered().unwrap().at_event, 3);
}

#[test]
fn non_codeword_commitment_is_poisoned() {
    let pc = config();
    let (_, honest) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let mut frags: Vec<Vec<u8>> = honest.iter().map(|t| t.fragment.data.to_vec()).collect();
    frags[N - 1][0] ^= 0xff;
    let elements: Vec<&[u8]> = frags.iter().map(|f| &f[..]).collect();
    let (bad_c, proofs) = pc.vc.vc_commit(&elements).unwrap();
    let tuples: Vec<FragmentTuple> = frags
        .iter()
        .zip(proofs)
        .enumerate()
        .map(|(j, (f, proof))| FragmentTuple {
            fragment: mbrb_core::ecc::Fragment { index: j + 1, data: Bytes::from(f.clone()) },
            proof,
        })
        .collect();
    let sigma = sigma_for(&pc, &bad_c);
    let mut n3 = node(&pc, 3);
    for j in [1, 2, 7] {
        let b = ProtocolMessage::Bundle { commitment: bad_c, own: tuples[j - 1].clone(), yours: None, sigma: sigma.clone() };
        let step = n3.handle_message(NodeId(j), &b, j as u64);
        assert!(step.delivery.is_none());
        assert!(step.transmissions.is_empty());
    }
    assert!(n3.is_poisoned(&bad_c));
    assert!(n3.check_invariants().is_ok());
}

#[test]
fn send_metering_example() {
    let kr = Arc::new(Keyring::generate(8, 0, 1));
    let pc = Arc::new(ProtocolConfig::new(kr, 3, 6, NodeId(1), VcScheme::Merkle).unwrap());
    let send = send_for(&pc, b"abcdef", 1);
    // framing + commitment + (fragment + depth-3 path) + share
    assert_eq!(send.metered_size_bits(), 24 + 256 + (16 + 3 * 256) + (256 + 3));
    assert_eq!(send.metered_size_bits(), 1323);
    let mut ledger = Ledger::new(8);
    ledger.record_message(NodeId(1), Some(&send));
    ledger.record_message::<ProtocolMessage>(NodeId(1), None);
    assert_eq!(ledger.node(NodeId(1)).bits_sent, 1323);
    assert_eq!(ledger.node(NodeId(1)).messages_sent, 1);
}

#[test]
fn wire_encoding_round_trips() {
    let pc = config();
    let (c, tuples) = compute_frag_vec_commit(&msg(), &pc).unwrap();
    let msgs = [
        send_for(&pc, &msg(), 3),
        ProtocolMessage::Forward { commitment: c, tuple: None, shares: [share(&pc, 1, &c), share(&pc, 2, &c)] },
        ProtocolMessage::Bundle { commitment: c, own: tuples[0].clone(), yours: Some(tuples[1].clone()), sigma: sigma_for(&pc, &c) },
    ];
    for m in msgs {
        let raw = m.encode();
        let back = ProtocolMessage::decode(&raw, pc.vc, N).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.metered_size_bits(), m.metered_size_bits());
        assert!(ProtocolMessage::decode(&raw[..raw.len() - 1], pc.vc, N).is_err());
        let mut extra = raw.clone();
        extra.push(0);
        assert!(ProtocolMessage::decode(&extra, pc.vc, N).is_err());
    }
}

/// Synchronous FIFO network over correct nodes with no drops. Returns every
/// (from, to, message) dispatched, in order.
fn run_fifo(pc: &Arc<ProtocolConfig>) -> (Vec<CodedNode>, Vec<(NodeId, NodeId, ProtocolMessage)>) {
    let mut nodes: Vec<CodedNode> = (1..=N).map(|i| node(pc, i)).collect();
    let mut queue = VecDeque::new();
    let mut trace = Vec::new();
    let push = |queue: &mut VecDeque<_>, from: NodeId, step: Step<ProtocolMessage>| {
        for tx in step.transmissions {
            let slots = match tx {
                Transmission::Comm(v) => v,
                Transmission::Broadcast(m) => vec![Some(m); N],
            };
            for (to, m) in NodeId::all(N).zip(slots) {
                if let Some(m) = m {
                    queue.push_back((from, to, m));
                }
            }
        }
    };
    let step = nodes[0].mbrb_broadcast(&msg()).unwrap();
    push(&mut queue, NodeId(1), step);
    let mut at = 0;
    while let Some((from, to, m)) = queue.pop_front() {
        at += 1;
        let step = nodes[to.0 - 1].handle_message(from, &m, at);
        trace.push((from, to, m));
        push(&mut queue, to, step);
    }
    (nodes, trace)
}

#[test]
fn emitted_messages_validate_against_fresh_verifier() {
    let pc = config();
    let (nodes, trace) = run_fifo(&pc);
    assert!(nodes.iter().all(|n| n.delivered().map(|d| &d.message[..]) == Some(&msg()[..])));
    for (_, _, m) in &trace {
        let slots = m.slots();
        let ok = match m {
            ProtocolMessage::Send { commitment, sender_share, .. } => {
                is_valid(&pc, commitment, &slots, Signatures::Shares(std::slice::from_ref(sender_share)))
            }
            ProtocolMessage::Forward { commitment, shares, .. } => {
                is_valid(&pc, commitment, &slots, Signatures::Shares(shares))
            }
            ProtocolMessage::Bundle { commitment, sigma, .. } => {
                is_valid(&pc, commitment, &slots, Signatures::Threshold(sigma))
            }
        };
        assert!(ok, "{m:?}");
    }
    for n in &nodes {
        assert!(n.check_invariants().is_ok());
    }
}

#[test]
fn replaying_a_trace_reproduces_node_state() {
    let pc = config();
    let (nodes, trace) = run_fifo(&pc);
    for id in 2..=N {
        let mut fresh = node(&pc, id);
        for (at, (from, to, m)) in trace.iter().enumerate() {
            if to.0 == id {
                // the original run numbered events from 1
                fresh.handle_message(*from, m, at as u64 + 1);
            }
        }
        assert_eq!(fresh.state_digest(), nodes[id - 1].state_digest(), "node {id}");
    }
}

mod common;

use std::collections::BTreeMap;

use common::{audit_ledger, bft_registry, ledger_with, random_submit_sequence, Actor};
use did6g_core::identity::Did;
use did6g_core::registry::{
    bft_halting_size, compare_replicas, estimate_metrics, inject_stake_takeover, run_consensus_round, verify_chain,
    ChainReport, ConsensusConfig, GovernancePolicy, Ledger, LedgerBlock, RegistryError, ReplicaReport, Throughput,
};
use proptest::prelude::*;

/// Messages of one PBFT-style round counted edge by edge: the leader
/// pre-prepares to every other node, then every node broadcasts prepare
/// and commit to every other node.
fn counted_bft_messages(n: usize) -> u64 {
    let mut count = 0;
    for to in 0..n {
        if to != 0 {
            count += 1;
        }
    }
    for _phase in ["prepare", "commit"] {
        for from in 0..n {
            for to in 0..n {
                if from != to {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Leader proposes to every other node; every other node votes back.
fn counted_lottery_messages(n: usize) -> u64 {
    2 * (1..n).count() as u64
}

fn stake_cfg(attacker: &Did, attacker_stake: u64, others: u64) -> ConsensusConfig {
    let stakes = BTreeMap::from([(attacker.clone(), attacker_stake), (Actor::new(77).did, others)]);
    ConsensusConfig::stake_lottery(stakes, 5, 1.0)
}

#[test]
fn bft_liveness_exhaustive_over_faulty_subsets() {
    let ledger = Ledger::new();
    let pending = [Actor::new(1).create_tx()];
    for n in 1..=12usize {
        for mask in 0u32..(1 << n) {
            let faulty: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let f = faulty.len();
            let cfg = ConsensusConfig::bft(n, faulty, 1.0);
            let (outcome, block) = run_consensus_round(&cfg, &ledger, &pending).unwrap();
            // Halts iff the faulty share is at least a third: 3f ≥ n.
            assert_eq!(outcome.committed, 3 * f < n, "n={n} f={f}");
            assert_eq!(block.is_some(), outcome.committed);
            assert_eq!(outcome.messages_sent, counted_bft_messages(n));
        }
    }
}

#[test]
fn bft_examples() {
    let ledger = Ledger::new();
    let pending = [Actor::new(1).create_tx()];
    let (o, _) = run_consensus_round(&ConsensusConfig::bft(4, [], 1.0), &ledger, &pending).unwrap();
    assert!(o.committed);
    assert_eq!(o.messages_sent, 27);
    let (o, _) = run_consensus_round(&ConsensusConfig::bft(9, [0, 4, 8], 1.0), &ledger, &pending).unwrap();
    assert!(!o.committed);
    assert_eq!(bft_halting_size(9), 3);
}

#[test]
fn stake_takeover_examples() {
    let attacker = Actor::new(1);
    let ledger = ledger_with(2);
    for (stake, expect) in [(66, false), (67, true), (0, false), (100, true)] {
        let cfg = stake_cfg(&attacker.did, stake, 100 - stake);
        let report = inject_stake_takeover(&cfg, &ledger, &attacker.did).unwrap();
        assert_eq!(report.can_rewrite, expect, "{stake}/100");
        assert_eq!(report.total_stake, 100);
        match report.fork {
            Some(fork) => {
                assert!(expect);
                assert_eq!(fork.height, 2);
                assert_ne!(fork.original_hash, fork.forged_hash);
                assert_eq!(fork.dropped_tx_ids.len(), 1);
                assert_eq!(fork.divergence, ReplicaReport::DivergedAt { height: 2, replicas: vec![1] });
                let forked = fork.forked_ledger.unwrap();
                // The forgery is internally consistent; only comparison exposes it.
                assert_eq!(verify_chain(&forked), ChainReport::Ok);
            }
            None => assert!(!expect),
        }
    }
    let stranger = Actor::new(2).did;
    let cfg = stake_cfg(&attacker.did, 1, 1);
    assert_eq!(inject_stake_takeover(&cfg, &ledger, &stranger).unwrap_err(), RegistryError::UnknownActor);
}

#[test]
fn sole_stakeholder_leads_every_height() {
    let a = Actor::new(3);
    let cfg = ConsensusConfig::stake_lottery(BTreeMap::from([(a.did.clone(), 10)]), 99, 1.0);
    let mut reg = did6g_core::registry::Registry::new(GovernancePolicy::public_permissionless(), cfg).unwrap();
    for i in 0..5 {
        reg.submit(Actor::new(100 + i).create_tx()).unwrap();
        let outcome = reg.commit().unwrap();
        assert_eq!(outcome.leader, Some(a.did.clone()));
    }
}

#[test]
fn metrics_match_counted_messages() {
    let bft = ConsensusConfig::bft(4, [], 2.5);
    let rows = estimate_metrics(&bft, 50, &[4, 8, 16, 32]);
    for r in &rows {
        assert_eq!(r.messages, counted_bft_messages(r.n));
        assert_eq!(r.latency_ms, 7.5);
        assert_eq!(r.tps, Throughput::Finite(50.0 / 0.0075));
    }
    assert!(rows.windows(2).all(|w| w[0].messages < w[1].messages));
    let lottery = ConsensusConfig::stake_lottery(BTreeMap::new(), 0, 1.0);
    let rows = estimate_metrics(&lottery, 1, &[4, 8]);
    assert_eq!(rows.iter().map(|r| r.messages).collect::<Vec<_>>(), vec![6, 14]);
    assert_eq!(rows[0].messages, counted_lottery_messages(4));
    let zero = estimate_metrics(&ConsensusConfig::bft(4, [], 0.0), 1, &[4]);
    assert_eq!((zero[0].latency_ms, zero[0].tps), (0.0, Throughput::Unbounded));
    assert_eq!(serde_json::to_value(&zero[0]).unwrap()["tps"], "unbounded");
}

#[test]
fn chain_examples() {
    let ledger = ledger_with(10);
    assert_eq!(verify_chain(&ledger), ChainReport::Ok);
    let mut flipped = ledger.clone();
    flipped.blocks_mut()[4].body[0] ^= 0x20;
    assert_eq!(verify_chain(&flipped), ChainReport::BrokenAt { height: 4 });
    let mut truncated = ledger.clone();
    truncated.blocks_mut().pop();
    assert_eq!(verify_chain(&truncated), ChainReport::Ok);
    assert_eq!(
        compare_replicas(&[&ledger, &ledger, &truncated]).unwrap(),
        ReplicaReport::DivergedAt { height: 10, replicas: vec![2] }
    );
}

#[test]
fn replica_examples() {
    let ledger = ledger_with(6);
    assert_eq!(compare_replicas(&[&ledger, &ledger, &ledger]).unwrap(), ReplicaReport::Consistent);
    let mut forked = ledger.clone();
    let b5 = &forked.blocks()[5];
    let forged = LedgerBlock::seal(5, b5.prev_hash, &[]);
    forked.blocks_mut()[5] = forged;
    assert_eq!(
        compare_replicas(&[&ledger, &forked, &ledger]).unwrap(),
        ReplicaReport::DivergedAt { height: 5, replicas: vec![1] }
    );
    assert_eq!(compare_replicas(&[&ledger]).unwrap_err(), RegistryError::TooFewReplicas(1));
}

#[test]
fn governance_examples() {
    let (a, b) = (Actor::new(1), Actor::new(2));
    let mut reg = bft_registry(GovernancePolicy::public_permissioned([a.did.clone()], []));
    reg.submit_and_commit(a.create_tx()).unwrap();
    assert_eq!(reg.submit(b.create_tx()).unwrap_err(), RegistryError::WriteDenied);
    assert_eq!(reg.resolve(&a.did, None, None).unwrap(), a.doc);

    let mut private =
        bft_registry(GovernancePolicy::private_permissioned([a.did.clone()], [a.did.clone()], [a.did.clone()]));
    assert_eq!(private.submit(b.create_tx()).unwrap_err(), RegistryError::WriteDenied);
    private.submit_and_commit(a.create_tx()).unwrap();
    assert_eq!(private.resolve(&a.did, None, Some(&b.did)).unwrap_err(), RegistryError::ReadDenied);
    assert_eq!(private.resolve(&a.did, None, None).unwrap_err(), RegistryError::ReadDenied);
}

#[test]
fn state_file_round_trip_and_inspect_lines() {
    let ledger = ledger_with(3);
    let back = Ledger::from_json(&ledger.to_json()).unwrap();
    assert_eq!(back, ledger);
    let lines = ledger.inspect_lines().unwrap();
    assert_eq!(lines.len(), 4);
    let genesis: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(genesis["prevHash"], "0".repeat(64));
    assert_eq!(genesis["txIds"], serde_json::json!([]));
    let one: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    assert_eq!(one["prevHash"], genesis["blockHash"]);
    assert_eq!(one["txIds"].as_array().unwrap().len(), 1);
}

fn mutate(ledger: &mut Ledger, block: usize, offset: usize, xor: u8) {
    let b = &mut ledger.blocks_mut()[block];
    let span = 8 + 32 + b.body.len() + 32;
    let at = offset % span;
    if at < 8 {
        let mut h = b.height.to_be_bytes();
        h[at] ^= xor;
        b.height = u64::from_be_bytes(h);
    } else if at < 40 {
        let mut d = *b.prev_hash.as_bytes();
        d[at - 8] ^= xor;
        b.prev_hash = did6g_core::codec::Digest(d);
    } else if at < 40 + b.body.len() {
        b.body[at - 40] ^= xor;
    } else {
        let mut d = *b.block_hash.as_bytes();
        d[at - 40 - b.body.len()] ^= xor;
        b.block_hash = did6g_core::codec::Digest(d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_single_byte_mutation_is_detected(block in 0usize..13, offset in any::<usize>(), xor in 1u8..=255) {
        static LEDGER: std::sync::OnceLock<Ledger> = std::sync::OnceLock::new();
        let original = LEDGER.get_or_init(|| ledger_with(12));
        let mut copy = original.clone();
        mutate(&mut copy, block, offset, xor);
        let by_chain = verify_chain(&copy) != ChainReport::Ok;
        let by_replicas = compare_replicas(&[original, &copy]).unwrap() != ReplicaReport::Consistent;
        prop_assert!(by_chain || by_replicas);
    }

    #[test]
    fn random_submit_sequences_keep_ledger_rules(seed in any::<u64>()) {
        let (reg, _) = random_submit_sequence(seed, 40);
        prop_assert_eq!(audit_ledger(reg.ledger()), Vec::<String>::new());
        prop_assert_eq!(verify_chain(reg.ledger()), ChainReport::Ok);
    }
}

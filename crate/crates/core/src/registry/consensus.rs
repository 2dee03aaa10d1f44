//! Closed-form consensus model.
//!
//! Nothing is sent over a network. A BFT round is pre-prepare, prepare and
//! commit: the leader sends n−1 pre-prepares, then every node sends prepare
//! and commit messages to every other node, for (n−1) + 2·n·(n−1) messages
//! and three message delays. Crash-faulty nodes stay counted as targets.
//! Liveness is lost once |faulty| ≥ ceil(n/3).
//!
//! A stake-lottery round draws one leader with probability proportional to
//! stake, then runs a propose/acknowledge exchange of 2·(n−1) messages.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::codec::Digest;
use crate::identity::Did;

use super::ledger::{compare_replicas, Ledger, LedgerBlock, ReplicaReport};
use super::{RegistryError, RegistryTransaction};

const BFT_PHASES: u32 = 3;
const LOTTERY_PHASES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum ConsensusKind {
    #[serde(rename = "bft", rename_all = "camelCase")]
    BftQuorum {
        node_count: usize,
        #[serde(default)]
        faulty: BTreeSet<usize>,
    },
    #[serde(rename = "stake", rename_all = "camelCase")]
    StakeLottery { stakes: BTreeMap<Did, u64>, rng_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsensusConfig {
    #[serde(flatten)]
    pub kind: ConsensusKind,
    pub per_message_latency_ms: f64,
}

impl ConsensusConfig {
    pub fn bft(node_count: usize, faulty: impl IntoIterator<Item = usize>, per_message_latency_ms: f64) -> Self {
        ConsensusConfig {
            kind: ConsensusKind::BftQuorum { node_count, faulty: faulty.into_iter().collect() },
            per_message_latency_ms,
        }
    }

    pub fn stake_lottery(stakes: BTreeMap<Did, u64>, rng_seed: u64, per_message_latency_ms: f64) -> Self {
        ConsensusConfig { kind: ConsensusKind::StakeLottery { stakes, rng_seed }, per_message_latency_ms }
    }

    pub fn node_count(&self) -> usize {
        match &self.kind {
            ConsensusKind::BftQuorum { node_count, .. } => *node_count,
            ConsensusKind::StakeLottery { stakes, .. } => stakes.len(),
        }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |m: String| Err(RegistryError::InvalidConsensus(m));
        if !(self.per_message_latency_ms.is_finite() && self.per_message_latency_ms >= 0.0) {
            return bad("per-message latency must be finite and non-negative".into());
        }
        match &self.kind {
            ConsensusKind::BftQuorum { node_count, faulty } => {
                if *node_count == 0 {
                    return bad("BFT quorum needs at least one node".into());
                }
                if let Some(f) = faulty.iter().find(|f| **f >= *node_count) {
                    return bad(format!("faulty node {f} is not among {node_count} nodes"));
                }
            }
            ConsensusKind::StakeLottery { stakes, .. } => {
                if stakes.values().map(|s| u128::from(*s)).sum::<u128>() == 0 {
                    return bad("total stake must be positive".into());
                }
            }
        }
        Ok(())
    }
}

pub fn bft_messages(n: usize) -> u64 {
    let n = n as u64;
    if n == 0 {
        return 0;
    }
    (n - 1) + 2 * n * (n - 1)
}

pub fn lottery_messages(n: usize) -> u64 {
    2 * (n as u64).saturating_sub(1)
}

/// ceil(n/3): the smallest faulty-set size that halts an n-node quorum.
pub fn bft_halting_size(n: usize) -> usize {
    n.div_ceil(3)
}

pub fn bft_commits(n: usize, faulty: usize) -> bool {
    faulty < bft_halting_size(n)
}

/// Exact integer test for stake/total ≥ 2/3.
pub fn stake_can_rewrite(stake: u64, total: u64) -> bool {
    total > 0 && 3 * u128::from(stake) >= 2 * u128::from(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsensusOutcome {
    pub committed: bool,
    pub rounds: u32,
    pub messages_sent: u64,
    pub simulated_latency_ms: f64,
    pub leader: Option<Did>,
}

/// Stake-weighted draw, reproducible from `(rng_seed, height)`.
pub fn draw_leader(stakes: &BTreeMap<Did, u64>, rng_seed: u64, height: u64) -> Option<Did> {
    let total: u128 = stakes.values().map(|s| u128::from(*s)).sum();
    if total == 0 {
        return None;
    }
    let seed = Digest::of_parts([&rng_seed.to_be_bytes()[..], &height.to_be_bytes()[..]]);
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    let mut ticket = rng.gen_range(0..total);
    for (did, stake) in stakes {
        let stake = u128::from(*stake);
        if ticket < stake {
            return Some(did.clone());
        }
        ticket -= stake;
    }
    unreachable!("ticket is below the total stake")
}

/// Runs one modeled round over `pending`. On commit, returns the block that
/// extends `ledger`; the caller appends it.
pub fn run_consensus_round(
    cfg: &ConsensusConfig,
    ledger: &Ledger,
    pending: &[RegistryTransaction],
) -> Result<(ConsensusOutcome, Option<LedgerBlock>), RegistryError> {
    if pending.is_empty() {
        return Err(RegistryError::EmptyPending);
    }
    cfg.validate()?;
    let height = ledger.height() + 1;
    let outcome = match &cfg.kind {
        ConsensusKind::BftQuorum { node_count, faulty } => ConsensusOutcome {
            committed: bft_commits(*node_count, faulty.len()),
            rounds: 1,
            messages_sent: bft_messages(*node_count),
            simulated_latency_ms: f64::from(BFT_PHASES) * cfg.per_message_latency_ms,
            leader: None,
        },
        ConsensusKind::StakeLottery { stakes, rng_seed } => ConsensusOutcome {
            committed: true,
            rounds: 1,
            messages_sent: lottery_messages(stakes.len()),
            simulated_latency_ms: f64::from(LOTTERY_PHASES) * cfg.per_message_latency_ms,
            leader: draw_leader(stakes, *rng_seed, height),
        },
    };
    let block = outcome.committed.then(|| LedgerBlock::seal(height, ledger.tip().block_hash, pending));
    Ok((outcome, block))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForkDemo {
    pub height: u64,
    pub original_hash: Digest,
    pub forged_hash: Digest,
    pub leader: Did,
    /// Transactions present in the original block and censored in the fork.
    pub dropped_tx_ids: Vec<Digest>,
    pub divergence: ReplicaReport,
    #[serde(skip)]
    pub forked_ledger: Option<Ledger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TamperReport {
    pub attacker: Did,
    pub attacker_stake: u64,
    pub total_stake: u64,
    pub can_rewrite: bool,
    pub fork: Option<ForkDemo>,
}

/// Decides whether `attacker` holds enough stake (≥ 2/3) to rewrite
/// history. When it does and the ledger has a non-genesis block, builds a
/// fork that replaces the tip block with one censoring its last transaction,
/// led by the attacker.
pub fn inject_stake_takeover(
    cfg: &ConsensusConfig,
    ledger: &Ledger,
    attacker: &Did,
) -> Result<TamperReport, RegistryError> {
    let ConsensusKind::StakeLottery { stakes, .. } = &cfg.kind else {
        return Err(RegistryError::InvalidConsensus("stake takeover needs a stake lottery".into()));
    };
    let attacker_stake = *stakes.get(attacker).ok_or(RegistryError::UnknownActor)?;
    let total_stake = stakes.values().sum();
    let can_rewrite = stake_can_rewrite(attacker_stake, total_stake);
    let fork = if can_rewrite && ledger.height() > 0 { Some(forge_tip(ledger, attacker)?) } else { None };
    Ok(TamperReport { attacker: attacker.clone(), attacker_stake, total_stake, can_rewrite, fork })
}

fn forge_tip(ledger: &Ledger, attacker: &Did) -> Result<ForkDemo, RegistryError> {
    let original = ledger.tip();
    let mut txs = original.transactions().map_err(|e| RegistryError::Corrupt(e.to_string()))?;
    let dropped: Vec<Digest> = txs.pop().map(|t| t.tx_id).into_iter().collect();
    let forged = LedgerBlock::seal(original.height, original.prev_hash, &txs);
    let mut forked = ledger.clone();
    *forked.blocks_mut().last_mut().expect("non-empty") = forged.clone();
    let divergence = compare_replicas(&[ledger, &forked])?;
    Ok(ForkDemo {
        height: original.height,
        original_hash: original.block_hash,
        forged_hash: forged.block_hash,
        leader: attacker.clone(),
        dropped_tx_ids: dropped,
        divergence,
        forked_ledger: Some(forked),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Throughput {
    Finite(f64),
    Unbounded,
}

impl Serialize for Throughput {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Throughput::Finite(v) => s.serialize_f64(*v),
            Throughput::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsRow {
    pub n: usize,
    pub tps: Throughput,
    pub latency_ms: f64,
    pub messages: u64,
}

/// One row per node count: messages from the consensus formula, latency as
/// one round times the per-round message delays, and throughput as
/// `tx_count` transactions per batch over that latency. Faulty sets and
/// stake maps in `cfg` are ignored; only the kind and latency matter.
pub fn estimate_metrics(cfg: &ConsensusConfig, tx_count: u64, node_counts: &[usize]) -> Vec<MetricsRow> {
    let (phases, messages): (u32, fn(usize) -> u64) = match cfg.kind {
        ConsensusKind::BftQuorum { .. } => (BFT_PHASES, bft_messages),
        ConsensusKind::StakeLottery { .. } => (LOTTERY_PHASES, lottery_messages),
    };
    let rounds = 1.0;
    node_counts
        .iter()
        .map(|&n| {
            let latency_ms = rounds * f64::from(phases) * cfg.per_message_latency_ms;
            let tps = if latency_ms > 0.0 {
                Throughput::Finite(tx_count as f64 / (latency_ms / 1000.0))
            } else {
                Throughput::Unbounded
            };
            MetricsRow { n, tps, latency_ms, messages: messages(n) }
        })
        .collect()
}

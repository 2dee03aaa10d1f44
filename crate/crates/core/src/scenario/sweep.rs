//! Consensus parameter sweeps: the metrics table, the BFT halting boundary
//! found by simulation, and the stake fraction that enables a rewrite.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::identity::{create_did_document, generate_keypair, Did, DidMethod, Purpose};
use crate::registry::{
    bft_halting_size, estimate_metrics, inject_stake_takeover, run_consensus_round, ConsensusConfig, GovernancePolicy,
    Ledger, MetricsRow, Registry, RegistryTransaction, ReplicaReport, TxPayload,
};

use super::{derive_seed, derive_u64, ScenarioConfig, ScenarioError, SweepKind};

/// Stake granularity used to turn fractions into integer stakes.
pub const STAKE_UNITS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BftThreshold {
    pub n: usize,
    /// Smallest faulty-set size whose simulated round did not commit.
    pub simulated_halting_size: usize,
    /// ceil(n/3).
    pub expected_halting_size: usize,
    pub halting_fraction: f64,
    pub messages: u64,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StakeFinding {
    pub fraction: f64,
    pub attacker_stake: u64,
    pub total_stake: u64,
    pub can_rewrite: bool,
    /// Height at which the attacker's fork diverges from the honest chain.
    pub fork_diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepReport {
    pub scenario: String,
    pub seed: u64,
    pub kind: SweepKind,
    pub metrics: Vec<MetricsRow>,
    pub bft_thresholds: Vec<BftThreshold>,
    pub stake_findings: Vec<StakeFinding>,
    pub min_rewrite_fraction: Option<f64>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep report serializes")
    }
}

struct Probe {
    did: Did,
    tx: RegistryTransaction,
}

fn probe(seed: u64, label: &str) -> Result<Probe, ScenarioError> {
    let setup = |e: &dyn std::fmt::Display| ScenarioError::Setup(e.to_string());
    let key =
        generate_keypair(Purpose::Authentication, &derive_seed("did6g/sweep", seed, label)).map_err(|e| setup(&e))?;
    let (did, doc) = create_did_document(DidMethod::Registry, &key, &[]).map_err(|e| setup(&e))?;
    let method = doc.verification_methods[0].id.clone();
    let tx = RegistryTransaction::new_signed(TxPayload::CreateDoc(doc), did.clone(), &key, &method)
        .map_err(|e| setup(&e))?;
    Ok(Probe { did, tx })
}

/// Runs `(n, faulty)` rounds for every faulty-set size and reports the
/// first that halts.
fn bft_threshold(n: usize, latency: f64, pending: &[RegistryTransaction]) -> Result<BftThreshold, ScenarioError> {
    let ledger = Ledger::new();
    let err = |e: crate::registry::RegistryError| ScenarioError::Setup(e.to_string());
    let mut halting = n + 1;
    let mut first = None;
    for f in 0..=n {
        let cfg = ConsensusConfig::bft(n, 0..f, latency);
        let (outcome, _) = run_consensus_round(&cfg, &ledger, pending).map_err(err)?;
        first.get_or_insert((outcome.messages_sent, outcome.rounds));
        if !outcome.committed {
            halting = f;
            break;
        }
    }
    let (messages, rounds) = first.expect("n + 1 > 0 rounds ran");
    Ok(BftThreshold {
        n,
        simulated_halting_size: halting,
        expected_halting_size: bft_halting_size(n),
        halting_fraction: halting as f64 / n as f64,
        messages,
        rounds,
    })
}

fn stake_finding(fraction: f64, seed: u64, latency: f64) -> Result<StakeFinding, ScenarioError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ScenarioError::Config(format!("stake fraction {fraction} is outside [0, 1]")));
    }
    let err = |e: crate::registry::RegistryError| ScenarioError::Setup(e.to_string());
    let attacker_stake = (fraction * STAKE_UNITS as f64).round() as u64;
    let attacker = probe(seed, "attacker")?;
    let honest = probe(seed, "honest")?;
    let stakes =
        BTreeMap::from([(attacker.did.clone(), attacker_stake), (honest.did.clone(), STAKE_UNITS - attacker_stake)]);
    let cfg = ConsensusConfig::stake_lottery(stakes, derive_u64("did6g/lottery", seed), latency);
    let mut reg = Registry::new(GovernancePolicy::public_permissionless(), cfg.clone()).map_err(err)?;
    reg.submit(honest.tx).map_err(err)?;
    reg.submit(attacker.tx).map_err(err)?;
    reg.commit().map_err(err)?;
    let report = inject_stake_takeover(&cfg, reg.ledger(), &attacker.did).map_err(err)?;
    let fork_diverged_at = report.fork.and_then(|f| match f.divergence {
        ReplicaReport::DivergedAt { height, .. } => Some(height),
        ReplicaReport::Consistent => None,
    });
    Ok(StakeFinding {
        fraction,
        attacker_stake,
        total_stake: report.total_stake,
        can_rewrite: report.can_rewrite,
        fork_diverged_at,
    })
}

/// Metrics over the configured node counts, BFT halting boundaries found by
/// simulating every faulty-set size, and stake-takeover findings for every
/// configured stake fraction.
pub fn run_consensus_sweep(config: &ScenarioConfig, seed: u64) -> Result<SweepReport, ScenarioError> {
    let sweep = config.sweep.as_ref().ok_or_else(|| ScenarioError::Config("missing sweep section".into()))?;
    let latency = sweep.per_message_latency_ms;
    if sweep.node_counts.contains(&0) {
        return Err(ScenarioError::Config("node counts must be positive".into()));
    }
    let model = match sweep.kind {
        SweepKind::Bft => ConsensusConfig::bft(1, [], latency),
        SweepKind::Stake => ConsensusConfig::stake_lottery(BTreeMap::new(), 0, latency),
    };
    let metrics = estimate_metrics(&model, sweep.tx_count, &sweep.node_counts);

    let bft_thresholds = if sweep.kind == SweepKind::Bft {
        let pending = [probe(seed, "pending")?.tx];
        sweep.node_counts.iter().map(|&n| bft_threshold(n, latency, &pending)).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let stake_findings =
        sweep.stake_fractions.iter().map(|&f| stake_finding(f, seed, latency)).collect::<Result<Vec<_>, _>>()?;
    let min_rewrite_fraction =
        stake_findings.iter().filter(|f| f.can_rewrite).map(|f| f.fraction).min_by(f64::total_cmp);

    Ok(SweepReport {
        scenario: super::ScenarioKind::ConsensusSweep.name().to_string(),
        seed,
        kind: sweep.kind,
        metrics,
        bft_thresholds,
        stake_findings,
        min_rewrite_fraction,
    })
}

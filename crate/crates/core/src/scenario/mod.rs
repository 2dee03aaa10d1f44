//! Deterministic multi-domain scenarios wiring identities, the registry,
//! agent channels and credentials into end-to-end flows.
//!
//! Every run is a pure function of `(config, seed)`: entity keys, nonces,
//! stake lotteries and the stepping order are all derived from the seed, and
//! the only clock is a logical one.

mod config;
mod flows;
pub mod model;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{establish_channel, Agent, ChannelMode, LogicalClock, WalletBinding};
use crate::codec::Digest;
use crate::identity::{Did, DidMethod, Purpose};
use crate::registry::{ConsensusConfig, GovernancePolicy, Ledger, Registry, RegistryHandle};

pub use config::{AdversaryConfig, ConsensusSpec, DomainConfig, EntityConfig, ScenarioConfig, SweepConfig, SweepKind};
pub use flows::{run_iot_onboarding_scenario, run_nf_access_scenario, run_roaming_scenario};
pub use model::{EntityKind, NetworkEntity, RelationshipBook, Strength, TrustDomain, TrustRelationship};
pub use sweep::{run_consensus_sweep, BftThreshold, StakeFinding, SweepReport};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("scenario setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Roaming,
    NfAccess,
    IotOnboarding,
    ConsensusSweep,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Roaming, ScenarioKind::NfAccess, ScenarioKind::IotOnboarding, ScenarioKind::ConsensusSweep];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Roaming => "roaming",
            ScenarioKind::NfAccess => "nf-access",
            ScenarioKind::IotOnboarding => "iot-onboarding",
            ScenarioKind::ConsensusSweep => "consensus-sweep",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ScenarioError::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum Outcome {
    Success,
    Failure { step: String, reason: String },
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counters {
    pub envelopes_sent: u64,
    pub handshake_messages: u64,
    pub registry_reads: u64,
    pub registry_writes: u64,
    pub consensus_rounds: u64,
    pub consensus_messages: u64,
    /// Envelopes and handshake messages addressed to a home operator between
    /// the start of attach and the verifier's verdict.
    pub home_network_queries_during_attach: u64,
    pub requests_served: u64,
    pub requests_denied: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    pub seq: u64,
    pub phase: String,
    pub actor: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub counters: Counters,
    pub event_log: Vec<Event>,
    pub final_relationships: Vec<TrustRelationship>,
    /// Scenario-specific observations, e.g. which DIDs were used where.
    pub facts: BTreeMap<String, serde_json::Value>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A report plus the registry ledger it left behind.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub ledger: Ledger,
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone)]
pub enum RunOutput {
    Scenario(ScenarioRun),
    Sweep(SweepReport),
}

impl RunOutput {
    pub fn is_success(&self) -> bool {
        match self {
            RunOutput::Scenario(r) => r.report.outcome.is_success(),
            RunOutput::Sweep(_) => true,
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            RunOutput::Scenario(r) => r.report.to_json(),
            RunOutput::Sweep(s) => s.to_json(),
        }
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        match self {
            RunOutput::Scenario(r) => Some(&r.ledger),
            RunOutput::Sweep(_) => None,
        }
    }
}

pub fn run_scenario(kind: ScenarioKind, config: &ScenarioConfig, seed: u64) -> Result<RunOutput, ScenarioError> {
    Ok(match kind {
        ScenarioKind::Roaming => RunOutput::Scenario(flows::roaming(config, seed)?),
        ScenarioKind::NfAccess => RunOutput::Scenario(flows::nf_access(config, seed)?),
        ScenarioKind::IotOnboarding => RunOutput::Scenario(flows::iot_onboarding(config, seed)?),
        ScenarioKind::ConsensusSweep => RunOutput::Sweep(run_consensus_sweep(config, seed)?),
    })
}

/// First failing step of a flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Failure {
    pub step: String,
    pub reason: String,
}

pub(crate) trait At<T> {
    fn at(self, step: &str) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> At<T> for Result<T, E> {
    fn at(self, step: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { step: step.to_string(), reason: e.to_string() })
    }
}

pub(crate) fn fail<T>(step: &str, reason: impl AsRef<str>) -> Result<T, Failure> {
    Err(Failure { step: step.to_string(), reason: reason.as_ref().to_string() })
}

/// Variant name of a verdict reason, as reported in outcomes.
pub(crate) fn name(reason: impl std::fmt::Debug) -> String {
    format!("{reason:?}")
}

fn derive_seed(tag: &str, seed: u64, label: &str) -> [u8; 32] {
    Digest::of_parts([tag.as_bytes(), &seed.to_be_bytes(), label.as_bytes()]).0
}

pub(crate) fn derive_u64(tag: &str, seed: u64) -> u64 {
    let d = derive_seed(tag, seed, "");
    u64::from_be_bytes(d[..8].try_into().expect("8 of 32 bytes"))
}

/// How the registry of a run is governed, given the DIDs of its entities.
pub(crate) enum Governance {
    /// Writers are the listed entities; the first is the admin.
    PublicPermissioned(Vec<String>),
    /// Readers and writers are the listed entities; the first is the admin.
    PrivatePermissioned(Vec<String>),
}

/// Runtime state of one scenario run.
pub(crate) struct World {
    pub seed: u64,
    pub clock: LogicalClock,
    pub entities: Vec<NetworkEntity>,
    index: BTreeMap<String, usize>,
    did_owner: BTreeMap<Did, usize>,
    pub registry: RegistryHandle,
    pub relationships: RelationshipBook,
    pub events: Vec<Event>,
    pub counters: Counters,
    pub facts: BTreeMap<String, serde_json::Value>,
    phase: String,
    attach_window: bool,
    /// Entity indices in the seed-derived stepping order.
    pub order: Vec<usize>,
}

impl World {
    /// Builds entities, their identities, and the registry. Anchored
    /// entities get registry-method DIDs with an Assertion key; subscribers
    /// and devices get self-certified root DIDs.
    pub fn build(config: &ScenarioConfig, seed: u64, governance: Governance) -> Result<Self, ScenarioError> {
        config.validate()?;
        let setup = |e: &dyn std::fmt::Display| ScenarioError::Setup(e.to_string());
        let clock = LogicalClock::new();
        let mut entities = Vec::with_capacity(config.entities.len());
        let mut index = BTreeMap::new();
        let mut did_owner = BTreeMap::new();
        for (i, ec) in config.entities.iter().enumerate() {
            let binding =
                if ec.kind == EntityKind::IotDevice { WalletBinding::HardwareBound } else { WalletBinding::Software };
            let mut agent =
                Agent::new(ec.id.clone(), derive_seed("did6g/entity", seed, &ec.id), clock.clone(), None, binding);
            let did = if ec.kind.is_anchored() {
                agent.create_identity(DidMethod::Registry, &[Purpose::Assertion]).map_err(|e| setup(&e))?
            } else {
                agent.root_identity().map_err(|e| setup(&e))?
            };
            index.insert(ec.id.clone(), i);
            did_owner.insert(did.clone(), i);
            entities.push(NetworkEntity {
                id: ec.id.clone(),
                kind: ec.kind,
                agent,
                did,
                registry_access: ec.has_registry_access(),
            });
        }

        let did_of = |id: &String| -> Result<Did, ScenarioError> {
            index
                .get(id)
                .map(|i| entities[*i].did.clone())
                .ok_or_else(|| ScenarioError::Config(format!("unknown entity {id:?}")))
        };
        let policy = match &governance {
            Governance::PublicPermissioned(ids) => {
                let dids = ids.iter().map(did_of).collect::<Result<Vec<_>, _>>()?;
                GovernancePolicy::public_permissioned(dids.clone(), dids.first().cloned())
            }
            Governance::PrivatePermissioned(ids) => {
                let dids = ids.iter().map(did_of).collect::<Result<Vec<_>, _>>()?;
                GovernancePolicy::private_permissioned(dids.clone(), dids.clone(), dids.first().cloned())
            }
        };
        let consensus = match &config.consensus {
            ConsensusSpec::Bft { node_count, faulty, per_message_latency_ms } => {
                ConsensusConfig::bft(*node_count, faulty.iter().copied(), *per_message_latency_ms)
            }
            ConsensusSpec::Stake { stakes, per_message_latency_ms } => {
                let stakes = stakes
                    .iter()
                    .map(|(id, s)| Ok((did_of(id)?, *s)))
                    .collect::<Result<BTreeMap<_, _>, ScenarioError>>()?;
                ConsensusConfig::stake_lottery(stakes, derive_u64("did6g/lottery", seed), *per_message_latency_ms)
            }
        };
        let registry = Registry::new(policy, consensus).map_err(|e| ScenarioError::Config(e.to_string()))?;
        let registry = RegistryHandle::new(registry);
        for e in entities.iter_mut().filter(|e| e.registry_access) {
            e.agent.attach_registry(registry.clone());
        }

        let mut order: Vec<usize> = (0..entities.len()).collect();
        order.shuffle(&mut ChaCha20Rng::from_seed(derive_seed("did6g/order", seed, "")));

        Ok(World {
            seed,
            clock,
            entities,
            index,
            did_owner,
            registry,
            relationships: RelationshipBook::default(),
            events: Vec::new(),
            counters: Counters::default(),
            facts: BTreeMap::new(),
            phase: "setup".into(),
            attach_window: false,
            order,
        })
    }

    pub fn idx(&self, id: &str) -> usize {
        self.index[id]
    }

    pub fn did(&self, i: usize) -> Did {
        self.entities[i].did.clone()
    }

    pub fn agent(&mut self, i: usize) -> &mut Agent {
        &mut self.entities[i].agent
    }

    pub fn id(&self, i: usize) -> String {
        self.entities[i].id.clone()
    }

    pub fn pair(&mut self, a: usize, b: usize) -> (&mut Agent, &mut Agent) {
        assert_ne!(a, b, "an entity cannot pair with itself");
        if a < b {
            let (lo, hi) = self.entities.split_at_mut(b);
            (&mut lo[a].agent, &mut hi[0].agent)
        } else {
            let (lo, hi) = self.entities.split_at_mut(a);
            (&mut hi[0].agent, &mut lo[b].agent)
        }
    }

    /// Starts a new phase; agents drop their per-step resolution caches.
    pub fn phase(&mut self, name: &str) {
        self.phase = name.to_string();
        for &i in &self.order {
            self.entities[i].agent.next_step();
        }
    }

    pub fn open_attach_window(&mut self) {
        self.attach_window = true;
    }

    pub fn close_attach_window(&mut self) {
        self.attach_window = false;
    }

    pub fn log(&mut self, actor: usize, action: &str, detail: impl Into<String>) {
        let actor = self.id(actor);
        self.events.push(Event {
            seq: self.events.len() as u64 + 1,
            phase: self.phase.clone(),
            actor,
            action: action.to_string(),
            detail: detail.into(),
        });
    }

    fn note_addressed_to(&mut self, did: &Did) {
        let home = self.did_owner.get(did).is_some_and(|i| self.entities[*i].kind == EntityKind::HomeMno);
        if self.attach_window && home {
            self.counters.home_network_queries_during_attach += 1;
        }
    }

    /// Registers every anchored entity (except those in `skip`) in stepping
    /// order.
    pub fn register_anchored(&mut self, skip: &BTreeSet<usize>) -> Result<(), Failure> {
        for k in 0..self.order.len() {
            let i = self.order[k];
            let e = &self.entities[i];
            if !e.kind.is_anchored() || !e.registry_access || skip.contains(&i) {
                continue;
            }
            let did = e.did.clone();
            let tx = e.agent.register(&did).at("register")?;
            self.log(i, "register", format!("{did} in tx {tx}"));
        }
        Ok(())
    }

    /// Mutually authenticated channel from `a` (as `a_did`) to `b`
    /// (as `b_did`). Out-of-band mode hands each side the other's document.
    pub fn connect(
        &mut self,
        a: usize,
        b: usize,
        a_did: &Did,
        b_did: &Did,
        out_of_band: bool,
    ) -> Result<Digest, Failure> {
        let mode = if out_of_band {
            let ad = self.entities[a].agent.own_document(a_did).cloned();
            let bd = self.entities[b].agent.own_document(b_did).cloned();
            match (ad, bd) {
                (Some(initiator_doc), Some(responder_doc)) => ChannelMode::OutOfBand { initiator_doc, responder_doc },
                _ => return fail("handshake", "MissingDocument"),
            }
        } else {
            ChannelMode::RegistryResolved
        };
        let (ia, ib) = self.pair(a, b);
        let est = establish_channel(ia, ib, a_did, b_did, mode, true).at("handshake")?;
        for leg in &est.legs {
            self.counters.handshake_messages += 1;
            self.note_addressed_to(&leg.to);
        }
        let level = self.entities[a].agent.channel(&est.channel_id).map(|c| format!("{:?}", c.trust_level));
        self.log(
            a,
            "handshake",
            format!(
                "channel {} with {} ({} messages, {})",
                est.channel_id,
                self.entities[b].id,
                est.legs.len(),
                level.unwrap_or_default()
            ),
        );
        Ok(est.channel_id)
    }

    /// Sends `body` from `from` to `to` over `channel` and returns what the
    /// receiver decoded.
    pub fn deliver(
        &mut self,
        from: usize,
        to: usize,
        channel: &Digest,
        body: &[u8],
        what: &str,
        step: &str,
    ) -> Result<Vec<u8>, Failure> {
        let env = self.entities[from].agent.send(channel, body).at(step)?;
        self.counters.envelopes_sent += 1;
        self.note_addressed_to(&env.to);
        self.log(from, "send", format!("{what} to {}", self.entities[to].id));
        self.entities[to].agent.receive(channel, &env).at(step)
    }

    pub fn relate(&mut self, from: usize, to: usize, subject: &str, level: Strength) {
        let (f, t) = (self.id(from), self.id(to));
        let now = self.relationships.upgrade(&f, &t, subject, level);
        self.log(from, "trust", format!("{f} -> {t} on {subject}: {now:?}"));
    }

    pub fn fact(&mut self, key: &str, value: impl Serialize) {
        self.facts.insert(key.to_string(), serde_json::to_value(value).expect("fact serializes"));
    }

    pub fn finish(mut self, scenario: ScenarioKind, result: Result<(), Failure>) -> ScenarioRun {
        let outcome = match result {
            Ok(()) => Outcome::Success,
            Err(Failure { step, reason }) => Outcome::Failure { step, reason },
        };
        let reg = self.registry.read();
        let stats = reg.stats();
        self.counters.registry_reads = stats.reads;
        self.counters.registry_writes = stats.writes;
        self.counters.consensus_rounds = stats.consensus_rounds;
        self.counters.consensus_messages = stats.consensus_messages;
        let ledger = reg.ledger().clone();
        drop(reg);
        let report = ScenarioReport {
            scenario: scenario.name().to_string(),
            seed: self.seed,
            outcome,
            counters: self.counters,
            event_log: self.events,
            final_relationships: self.relationships.to_list(),
            facts: self.facts,
        };
        ScenarioRun { report, ledger }
    }
}

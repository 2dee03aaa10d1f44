use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::EntityKind;
use super::ScenarioError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EntityConfig {
    pub id: String,
    pub kind: EntityKind,
    /// Defaults to true for every kind except `iotDevice`, which may never
    /// have registry access.
    #[serde(default)]
    pub registry_access: Option<bool>,
}

impl EntityConfig {
    pub fn new(id: &str, kind: EntityKind) -> Self {
        EntityConfig { id: id.to_string(), kind, registry_access: None }
    }

    pub fn has_registry_access(&self) -> bool {
        self.registry_access.unwrap_or(self.kind != EntityKind::IotDevice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DomainConfig {
    pub name: String,
    pub entities: BTreeSet<String>,
}

/// Consensus as named in a config file; stake maps are keyed by entity id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind", deny_unknown_fields)]
pub enum ConsensusSpec {
    #[serde(rename = "bft", rename_all = "camelCase")]
    Bft {
        node_count: usize,
        #[serde(default)]
        faulty: BTreeSet<usize>,
        per_message_latency_ms: f64,
    },
    #[serde(rename = "stake", rename_all = "camelCase")]
    Stake { stakes: BTreeMap<String, u64>, per_message_latency_ms: f64 },
}

impl Default for ConsensusSpec {
    fn default() -> Self {
        ConsensusSpec::Bft { node_count: 4, faulty: BTreeSet::new(), per_message_latency_ms: 5.0 }
    }
}

/// Adversary toggles; each flow reads the ones that apply to it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Roaming: the presentation is signed with a key unrelated to the subject.
    pub stranger_key_vp: bool,
    /// Roaming: the accepted presentation is submitted a second time.
    pub replay_vp: bool,
    /// NF access: the grant names a different target service.
    pub wrong_target: bool,
    /// NF access: the authorizer revokes the grant before it is presented.
    pub revoke_grant: bool,
    /// IoT: the attestation is bound to a different device DID.
    pub device_did_mismatch: bool,
    /// IoT: the operator never registers its DID document.
    pub operator_unregistered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SweepKind {
    Bft,
    Stake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub node_counts: Vec<usize>,
    #[serde(default = "default_tx_count")]
    pub tx_count: u64,
    #[serde(default = "default_latency")]
    pub per_message_latency_ms: f64,
    #[serde(default)]
    pub stake_fractions: Vec<f64>,
}

fn default_tx_count() -> u64 {
    100
}

fn default_latency() -> f64 {
    5.0
}

/// Declarative scenario description. All randomness derives from the run
/// seed, which is supplied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub entities: Vec<EntityConfig>,
    #[serde(default)]
    pub domains: Vec<DomainConfig>,
    /// Role name → entity id.
    #[serde(default)]
    pub roles: BTreeMap<String, String>,
    #[serde(default)]
    pub consensus: ConsensusSpec,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    /// NF access: the producer's service name.
    #[serde(default)]
    pub service: Option<String>,
    /// NF access: issue a request without a presentation first.
    #[serde(default)]
    pub probe_denial: bool,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(s).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn entity(&self, id: &str) -> Option<&EntityConfig> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Entity id bound to `role`, checked against the allowed kinds.
    pub fn role(&self, role: &str, kinds: &[EntityKind]) -> Result<&EntityConfig, ScenarioError> {
        let id = self.roles.get(role).ok_or_else(|| ScenarioError::Config(format!("missing role {role:?}")))?;
        let e = self
            .entity(id)
            .ok_or_else(|| ScenarioError::Config(format!("role {role:?} names unknown entity {id:?}")))?;
        if !kinds.contains(&e.kind) {
            return Err(ScenarioError::Config(format!("role {role:?} cannot be played by {:?}", e.kind)));
        }
        Ok(e)
    }

    /// Structural checks shared by all entity-based scenarios.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let mut ids = BTreeSet::new();
        for e in &self.entities {
            if !ids.insert(e.id.as_str()) {
                return bad(format!("duplicate entity id {:?}", e.id));
            }
            if e.kind == EntityKind::IotDevice && e.registry_access == Some(true) {
                return bad(format!("IoT device {:?} cannot have registry access", e.id));
            }
        }
        let mut covered = BTreeSet::new();
        for d in &self.domains {
            for id in &d.entities {
                if !ids.contains(id.as_str()) {
                    return bad(format!("domain {:?} lists unknown entity {id:?}", d.name));
                }
                covered.insert(id.as_str());
            }
        }
        if let Some(orphan) = ids.difference(&covered).next() {
            return bad(format!("entity {orphan:?} belongs to no trust domain"));
        }
        Ok(())
    }
}

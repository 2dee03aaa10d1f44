//! Trust domains, network entities and trust relationships.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::identity::Did;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EntityKind {
    HomeMno,
    VisitedMno,
    Subscriber,
    NetworkFunction,
    IotDevice,
    IotOperator,
    CloudProvider,
    // Virtualization-stack entities: constructible, no dedicated flow.
    Hypervisor,
    Orchestrator,
    SdnController,
}

impl EntityKind {
    /// Entities that are anchored in the registry by default. Subscribers
    /// and devices use self-certified DIDs.
    pub fn is_anchored(self) -> bool {
        !matches!(self, EntityKind::Subscriber | EntityKind::IotDevice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustDomain {
    pub name: String,
    pub entities: BTreeSet<String>,
}

#[derive(Debug)]
pub struct NetworkEntity {
    pub id: String,
    pub kind: EntityKind,
    pub agent: Agent,
    pub did: Did,
    pub registry_access: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Strength {
    None,
    Authenticated,
    CredentialBacked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrustRelationship {
    pub from: String,
    pub to: String,
    pub subject_of_matter: String,
    pub strength: Strength,
}

/// Relationship strengths only move upward within a run.
#[derive(Debug, Default)]
pub struct RelationshipBook {
    entries: BTreeMap<(String, String, String), Strength>,
}

impl RelationshipBook {
    /// Raises the strength to `to_level`; a lower level leaves it unchanged.
    /// Returns the resulting strength.
    pub fn upgrade(&mut self, from: &str, to: &str, subject: &str, to_level: Strength) -> Strength {
        let entry =
            self.entries.entry((from.to_string(), to.to_string(), subject.to_string())).or_insert(Strength::None);
        *entry = (*entry).max(to_level);
        *entry
    }

    pub fn get(&self, from: &str, to: &str, subject: &str) -> Strength {
        self.entries.get(&(from.to_string(), to.to_string(), subject.to_string())).copied().unwrap_or(Strength::None)
    }

    pub fn to_list(&self) -> Vec<TrustRelationship> {
        self.entries
            .iter()
            .map(|((from, to, subject), s)| TrustRelationship {
                from: from.clone(),
                to: to.clone(),
                subject_of_matter: subject.clone(),
                strength: *s,
            })
            .collect()
    }
}

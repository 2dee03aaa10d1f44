use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::identity::Did;

use super::RegistryError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Acl {
    AllEntities,
    Explicit(BTreeSet<Did>),
}

impl Acl {
    pub fn explicit(dids: impl IntoIterator<Item = Did>) -> Self {
        Acl::Explicit(dids.into_iter().collect())
    }

    /// Anonymous callers (`None`) pass only an `AllEntities` list.
    pub fn permits(&self, who: Option<&Did>) -> bool {
        match self {
            Acl::AllEntities => true,
            Acl::Explicit(set) => who.is_some_and(|d| set.contains(d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GovernanceKind {
    PublicPermissionless,
    PublicPermissioned,
    PrivatePermissioned,
}

/// Who may read, write and administer the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GovernancePolicy {
    kind: GovernanceKind,
    readers: Acl,
    writers: Acl,
    admins: BTreeSet<Did>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AclTarget {
    Readers,
    Writers,
}

impl GovernancePolicy {
    pub fn public_permissionless() -> Self {
        GovernancePolicy {
            kind: GovernanceKind::PublicPermissionless,
            readers: Acl::AllEntities,
            writers: Acl::AllEntities,
            admins: BTreeSet::new(),
        }
    }

    pub fn public_permissioned(writers: impl IntoIterator<Item = Did>, admins: impl IntoIterator<Item = Did>) -> Self {
        GovernancePolicy {
            kind: GovernanceKind::PublicPermissioned,
            readers: Acl::AllEntities,
            writers: Acl::explicit(writers),
            admins: admins.into_iter().collect(),
        }
    }

    pub fn private_permissioned(
        readers: impl IntoIterator<Item = Did>,
        writers: impl IntoIterator<Item = Did>,
        admins: impl IntoIterator<Item = Did>,
    ) -> Self {
        GovernancePolicy {
            kind: GovernanceKind::PrivatePermissioned,
            readers: Acl::explicit(readers),
            writers: Acl::explicit(writers),
            admins: admins.into_iter().collect(),
        }
    }

    pub fn kind(&self) -> GovernanceKind {
        self.kind
    }

    pub fn readers(&self) -> &Acl {
        &self.readers
    }

    pub fn writers(&self) -> &Acl {
        &self.writers
    }

    pub fn admins(&self) -> &BTreeSet<Did> {
        &self.admins
    }

    pub fn can_read(&self, who: Option<&Did>) -> bool {
        self.readers.permits(who)
    }

    pub fn can_write(&self, who: &Did) -> bool {
        self.writers.permits(Some(who))
    }

    /// Checks the per-kind ACL shape. Decoded policies go through this too.
    pub fn validate(&self) -> Result<(), RegistryError> {
        let ok = match self.kind {
            GovernanceKind::PublicPermissionless => {
                self.readers == Acl::AllEntities && self.writers == Acl::AllEntities
            }
            GovernanceKind::PublicPermissioned => {
                self.readers == Acl::AllEntities && matches!(self.writers, Acl::Explicit(_))
            }
            GovernanceKind::PrivatePermissioned => {
                matches!(self.readers, Acl::Explicit(_)) && matches!(self.writers, Acl::Explicit(_))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(RegistryError::InvalidPolicy(format!("ACL shape does not match {:?}", self.kind)))
        }
    }

    /// Off-ledger ACL amendment by an admin of a permissioned registry. The
    /// amended policy must still satisfy the shape rules of its kind.
    pub fn amend(&mut self, admin: &Did, target: AclTarget, acl: Acl) -> Result<(), RegistryError> {
        if self.kind == GovernanceKind::PublicPermissionless || !self.admins.contains(admin) {
            return Err(RegistryError::NotAdmin);
        }
        let mut next = self.clone();
        match target {
            AclTarget::Readers => next.readers = acl,
            AclTarget::Writers => next.writers = acl,
        }
        next.validate()?;
        *self = next;
        Ok(())
    }
}

//! The verifiable data registry: a governed, append-only, hash-chained store
//! of DID documents and credential status entries, committed through a
//! modeled consensus round.

mod consensus;
mod governance;
mod ledger;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_digest, canonical_json, Digest};
use crate::identity::{Did, DidDocument, DidMethod, IdentityError, KeyPair, Purpose, Signature};

pub use consensus::{
    bft_commits, bft_halting_size, bft_messages, draw_leader, estimate_metrics, inject_stake_takeover,
    lottery_messages, run_consensus_round, stake_can_rewrite, ConsensusConfig, ConsensusKind, ConsensusOutcome,
    ForkDemo, MetricsRow, TamperReport, Throughput,
};
pub use governance::{Acl, AclTarget, GovernanceKind, GovernancePolicy};
pub use ledger::{compare_replicas, verify_chain, ChainReport, Ledger, LedgerBlock, ReplicaReport};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("author may not write to this registry")]
    WriteDenied,
    #[error("caller may not read from this registry")]
    ReadDenied,
    #[error("author signature does not verify against its registered key")]
    BadSignature,
    #[error("author is not the controller of the document")]
    NotController,
    #[error("document version does not extend the current version")]
    VersionGap,
    #[error("DID already registered")]
    AlreadyExists,
    #[error("DID not found")]
    NotFound,
    #[error("credential already revoked")]
    AlreadyRevoked,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("no pending transactions")]
    EmptyPending,
    #[error("consensus halted: round did not commit")]
    Halted,
    #[error("invalid consensus config: {0}")]
    InvalidConsensus(String),
    #[error("invalid governance policy: {0}")]
    InvalidPolicy(String),
    #[error("caller is not a registry admin")]
    NotAdmin,
    #[error("actor holds no stake")]
    UnknownActor,
    #[error("need at least two replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("corrupt ledger: {0}")]
    Corrupt(String),
}

/// Transaction payloads. There is no delete: committed documents stay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "camelCase")]
pub enum TxPayload {
    CreateDoc(DidDocument),
    UpdateDoc(DidDocument),
    #[serde(rename_all = "camelCase")]
    RevokeCredential {
        credential_id: Digest,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistryTransaction {
    #[serde(flatten)]
    pub payload: TxPayload,
    pub author: Did,
    pub author_signature: Signature,
    pub tx_id: Digest,
}

#[derive(Serialize)]
struct TxBody<'a> {
    #[serde(flatten)]
    payload: &'a TxPayload,
    author: &'a Did,
}

impl RegistryTransaction {
    /// Bytes covered by the author signature.
    pub fn signing_bytes(payload: &TxPayload, author: &Did) -> Vec<u8> {
        canonical_json(&TxBody { payload, author })
    }

    fn compute_id(payload: &TxPayload, author: &Did, signature: &Signature) -> Digest {
        #[derive(Serialize)]
        struct Full<'a> {
            body: TxBody<'a>,
            signature: &'a Signature,
        }
        canonical_digest(&Full { body: TxBody { payload, author }, signature })
    }

    pub fn new_signed(payload: TxPayload, author: Did, key: &KeyPair, method_id: &str) -> Result<Self, IdentityError> {
        let author_signature = key.sign(method_id, &Self::signing_bytes(&payload, &author))?;
        Ok(Self::from_parts(payload, author, author_signature))
    }

    pub fn from_parts(payload: TxPayload, author: Did, author_signature: Signature) -> Self {
        let tx_id = Self::compute_id(&payload, &author, &author_signature);
        RegistryTransaction { payload, author, author_signature, tx_id }
    }

    pub fn id_is_consistent(&self) -> bool {
        self.tx_id == Self::compute_id(&self.payload, &self.author, &self.author_signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatusEntry {
    pub credential_id: Digest,
    pub issuer: Did,
    pub revoked_at_height: u64,
}

#[derive(Debug, Default)]
struct Counters {
    reads: AtomicU64,
    writes: AtomicU64,
    rejected: AtomicU64,
    rounds: AtomicU64,
    messages: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistryStats {
    pub reads: u64,
    pub writes: u64,
    pub rejected: u64,
    pub consensus_rounds: u64,
    pub consensus_messages: u64,
}

/// Single logical registry. Mutation is single-threaded through `&mut self`;
/// reads take `&self` and are safe to share behind [`RegistryHandle`].
#[derive(Debug)]
pub struct Registry {
    policy: GovernancePolicy,
    consensus: ConsensusConfig,
    ledger: Ledger,
    pending: Vec<RegistryTransaction>,
    docs: BTreeMap<Did, Vec<(u64, DidDocument)>>,
    statuses: BTreeMap<Digest, StatusEntry>,
    counters: Counters,
}

impl Registry {
    pub fn new(policy: GovernancePolicy, consensus: ConsensusConfig) -> Result<Self, RegistryError> {
        policy.validate()?;
        consensus.validate()?;
        Ok(Registry {
            policy,
            consensus,
            ledger: Ledger::new(),
            pending: Vec::new(),
            docs: BTreeMap::new(),
            statuses: BTreeMap::new(),
            counters: Counters::default(),
        })
    }

    /// Rebuilds registry state by replaying a stored ledger. The chain must
    /// verify.
    pub fn from_ledger(
        policy: GovernancePolicy,
        consensus: ConsensusConfig,
        ledger: Ledger,
    ) -> Result<Self, RegistryError> {
        if let ChainReport::BrokenAt { height } = verify_chain(&ledger) {
            return Err(RegistryError::Corrupt(format!("chain broken at height {height}")));
        }
        let mut reg = Registry::new(policy, consensus)?;
        for block in ledger.blocks() {
            let txs = block.transactions().map_err(|e| RegistryError::Corrupt(e.to_string()))?;
            for tx in &txs {
                reg.apply(block.height, tx);
            }
        }
        reg.ledger = ledger;
        Ok(reg)
    }

    pub fn policy(&self) -> &GovernancePolicy {
        &self.policy
    }

    pub fn amend_policy(&mut self, admin: &Did, target: AclTarget, acl: Acl) -> Result<(), RegistryError> {
        self.policy.amend(admin, target, acl)
    }

    pub fn consensus(&self) -> &ConsensusConfig {
        &self.consensus
    }

    pub fn set_consensus(&mut self, cfg: ConsensusConfig) -> Result<(), RegistryError> {
        cfg.validate()?;
        self.consensus = cfg;
        Ok(())
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn height(&self) -> u64 {
        self.ledger.height()
    }

    pub fn pending(&self) -> &[RegistryTransaction] {
        &self.pending
    }

    pub fn stats(&self) -> RegistryStats {
        let c = &self.counters;
        RegistryStats {
            reads: c.reads.load(Ordering::Relaxed),
            writes: c.writes.load(Ordering::Relaxed),
            rejected: c.rejected.load(Ordering::Relaxed),
            consensus_rounds: c.rounds.load(Ordering::Relaxed),
            consensus_messages: c.messages.load(Ordering::Relaxed),
        }
    }

    /// Latest document including accepted-but-uncommitted updates.
    fn effective_latest(&self, did: &Did) -> Option<&DidDocument> {
        self.pending
            .iter()
            .rev()
            .find_map(|tx| match &tx.payload {
                TxPayload::CreateDoc(d) | TxPayload::UpdateDoc(d) if &d.id == did => Some(d),
                _ => None,
            })
            .or_else(|| self.docs.get(did).and_then(|h| h.last()).map(|(_, d)| d))
    }

    fn author_key_doc<'a>(&'a self, author: &Did, own: Option<&'a DidDocument>) -> Option<&'a DidDocument> {
        match own {
            Some(d) if &d.id == author => Some(d),
            _ => self.effective_latest(author),
        }
    }

    /// Validates `tx` against governance and current state, then queues it
    /// for the next consensus round.
    pub fn submit(&mut self, tx: RegistryTransaction) -> Result<Digest, RegistryError> {
        let verdict = self.check(&tx);
        match verdict {
            Ok(()) => {
                self.counters.writes.fetch_add(1, Ordering::Relaxed);
                let id = tx.tx_id;
                self.pending.push(tx);
                Ok(id)
            }
            Err(e) => {
                self.counters.rejected.fetch_add(1, Ordering::Relaxed);
                Err(e)
            }
        }
    }

    fn check(&self, tx: &RegistryTransaction) -> Result<(), RegistryError> {
        if !self.policy.can_write(&tx.author) {
            return Err(RegistryError::WriteDenied);
        }
        if !tx.id_is_consistent() {
            return Err(RegistryError::BadSignature);
        }
        let signed = RegistryTransaction::signing_bytes(&tx.payload, &tx.author);
        let sig_ok = |key_doc: Option<&DidDocument>| {
            key_doc.is_some_and(|d| d.verify_signature(Purpose::Authentication, &signed, &tx.author_signature))
        };
        match &tx.payload {
            TxPayload::CreateDoc(doc) => {
                doc.validate().map_err(invalid_doc)?;
                if doc.version != 0 {
                    return Err(RegistryError::VersionGap);
                }
                if doc.id.method == DidMethod::SelfCertified && !doc.is_self_certified() {
                    return Err(RegistryError::InvalidDocument("identifier not bound to key".into()));
                }
                if self.effective_latest(&doc.id).is_some() {
                    return Err(RegistryError::AlreadyExists);
                }
                if tx.author != doc.id && tx.author != doc.controller {
                    return Err(RegistryError::NotController);
                }
                if !sig_ok(self.author_key_doc(&tx.author, Some(doc))) {
                    return Err(RegistryError::BadSignature);
                }
            }
            TxPayload::UpdateDoc(doc) => {
                let current = self.effective_latest(&doc.id).ok_or(RegistryError::NotFound)?;
                if tx.author != current.controller {
                    return Err(RegistryError::NotController);
                }
                if !sig_ok(self.author_key_doc(&tx.author, Some(current))) {
                    return Err(RegistryError::BadSignature);
                }
                if !current.is_successor(doc) {
                    return Err(RegistryError::VersionGap);
                }
                doc.validate().map_err(invalid_doc)?;
            }
            TxPayload::RevokeCredential { credential_id } => {
                if !sig_ok(self.effective_latest(&tx.author)) {
                    return Err(RegistryError::BadSignature);
                }
                let queued = self.pending.iter().any(
                    |p| matches!(&p.payload, TxPayload::RevokeCredential { credential_id: c } if c == credential_id),
                );
                if queued || self.statuses.contains_key(credential_id) {
                    return Err(RegistryError::AlreadyRevoked);
                }
            }
        }
        Ok(())
    }

    /// Runs one consensus round over the pending queue. A halted round
    /// leaves the queue intact.
    pub fn commit(&mut self) -> Result<ConsensusOutcome, RegistryError> {
        let (outcome, block) = run_consensus_round(&self.consensus, &self.ledger, &self.pending)?;
        self.counters.rounds.fetch_add(u64::from(outcome.rounds), Ordering::Relaxed);
        self.counters.messages.fetch_add(outcome.messages_sent, Ordering::Relaxed);
        if let Some(block) = block {
            let height = block.height;
            let txs = std::mem::take(&mut self.pending);
            for tx in &txs {
                self.apply(height, tx);
            }
            self.ledger.append(block);
        }
        Ok(outcome)
    }

    /// `submit` followed by `commit`; fails with `Halted` if the round does
    /// not commit.
    pub fn submit_and_commit(&mut self, tx: RegistryTransaction) -> Result<Digest, RegistryError> {
        let id = self.submit(tx)?;
        if self.commit()?.committed {
            Ok(id)
        } else {
            Err(RegistryError::Halted)
        }
    }

    fn apply(&mut self, height: u64, tx: &RegistryTransaction) {
        match &tx.payload {
            TxPayload::CreateDoc(doc) | TxPayload::UpdateDoc(doc) => {
                self.docs.entry(doc.id.clone()).or_default().push((height, doc.clone()));
            }
            TxPayload::RevokeCredential { credential_id } => {
                self.statuses.insert(
                    *credential_id,
                    StatusEntry { credential_id: *credential_id, issuer: tx.author.clone(), revoked_at_height: height },
                );
            }
        }
    }

    fn check_read(&self, caller: Option<&Did>) -> Result<(), RegistryError> {
        self.counters.reads.fetch_add(1, Ordering::Relaxed);
        if self.policy.can_read(caller) {
            Ok(())
        } else {
            Err(RegistryError::ReadDenied)
        }
    }

    /// Highest-version document committed at or before `as_of_height`
    /// (default: latest).
    pub fn resolve(
        &self,
        did: &Did,
        as_of_height: Option<u64>,
        caller: Option<&Did>,
    ) -> Result<DidDocument, RegistryError> {
        self.check_read(caller)?;
        let limit = as_of_height.unwrap_or(u64::MAX);
        self.docs
            .get(did)
            .and_then(|h| h.iter().rev().find(|(height, _)| *height <= limit))
            .map(|(_, d)| d.clone())
            .ok_or(RegistryError::NotFound)
    }

    /// Every committed version of `did`, oldest first. Retained so that
    /// signatures made before a rotation can still be attributed.
    pub fn history(&self, did: &Did, caller: Option<&Did>) -> Result<Vec<DidDocument>, RegistryError> {
        self.check_read(caller)?;
        self.docs.get(did).map(|h| h.iter().map(|(_, d)| d.clone()).collect()).ok_or(RegistryError::NotFound)
    }

    pub fn credential_status(
        &self,
        credential_id: &Digest,
        as_of_height: Option<u64>,
        caller: Option<&Did>,
    ) -> Result<Option<StatusEntry>, RegistryError> {
        self.check_read(caller)?;
        let limit = as_of_height.unwrap_or(u64::MAX);
        Ok(self.statuses.get(credential_id).filter(|s| s.revoked_at_height <= limit).cloned())
    }

    pub fn registered_dids(&self) -> impl Iterator<Item = &Did> {
        self.docs.keys()
    }
}

fn invalid_doc(e: IdentityError) -> RegistryError {
    RegistryError::InvalidDocument(e.to_string())
}

/// Shared handle to a registry. Agents hold clones; readers may live on
/// other threads.
#[derive(Debug, Clone)]
pub struct RegistryHandle(Arc<RwLock<Registry>>);

impl RegistryHandle {
    pub fn new(registry: Registry) -> Self {
        RegistryHandle(Arc::new(RwLock::new(registry)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Registry> {
        self.0.read().expect("registry lock poisoned")
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Registry> {
        self.0.write().expect("registry lock poisoned")
    }
}

//! Agents: wallets holding private keys and credentials, registry access,
//! and mutually authenticated channels between agents.

mod envelope;
mod handshake;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Digest;
use crate::credential::VerifiableCredential;
use crate::identity::{
    self, create_did_document, derive_pairwise_did, generate_keypair, propose_rotation, Did, DidDocument, DidMethod,
    IdentityError, KeyPair, Purpose,
};
use crate::registry::{RegistryError, RegistryHandle, RegistryTransaction, TxPayload};

pub use envelope::{Encryption, Envelope};
pub use handshake::{
    establish_channel, establish_channel_with, Challenge, ChannelMode, Established, Finished, HandshakeLeg,
    HandshakeMessage, Hello, PeerDocSource, Proof, SecureChannel, TrustLevel,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent has no registry access")]
    NoRegistryAccess,
    #[error("registry read denied")]
    ReadDenied,
    #[error("DID not found")]
    NotFound,
    #[error("agent holds no keys for {0}")]
    UnknownIdentity(Did),
    #[error("peer document could not be obtained: {0}")]
    ResolveFailed(String),
    #[error("peer authentication failed")]
    AuthFailed,
    #[error("peer signed with a key rotated out of its current document")]
    StaleDocument,
    #[error("envelope signature does not verify")]
    BadSignature,
    #[error("envelope decryption failed")]
    DecryptFailed,
    #[error("no such channel for this envelope")]
    UnknownChannel,
    #[error("document is not a valid self-certified document")]
    NotSelfCertified,
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("registry: {0}")]
    Registry(RegistryError),
}

impl From<RegistryError> for AgentError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::ReadDenied => AgentError::ReadDenied,
            RegistryError::NotFound => AgentError::NotFound,
            other => AgentError::Registry(other),
        }
    }
}

/// Monotone per-scenario counter shared by all agents of one run.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock(Arc<AtomicU64>);

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.0.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum WalletBinding {
    Software,
    HardwareBound,
}

/// Keys are indexed by verification-method id. Serialization emits public
/// halves only.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Wallet {
    keys: BTreeMap<String, KeyPair>,
    credentials: Vec<VerifiableCredential>,
    binding: WalletBinding,
}

impl Wallet {
    pub fn new(binding: WalletBinding) -> Self {
        Wallet { keys: BTreeMap::new(), credentials: Vec::new(), binding }
    }

    pub fn binding(&self) -> WalletBinding {
        self.binding
    }

    pub fn insert_key(&mut self, method_id: impl Into<String>, key: KeyPair) {
        self.keys.insert(method_id.into(), key);
    }

    pub fn key(&self, method_id: &str) -> Option<&KeyPair> {
        self.keys.get(method_id)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &KeyPair)> {
        self.keys.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn find_by_public_key(&self, public_key: &[u8; 32]) -> Option<(&str, &KeyPair)> {
        self.keys().find(|(_, k)| k.public_key() == public_key && k.purpose().can_sign())
    }

    pub fn store_credential(&mut self, vc: VerifiableCredential) {
        if !self.credentials.iter().any(|c| c.metadata.credential_id == vc.metadata.credential_id) {
            self.credentials.push(vc);
        }
    }

    pub fn credentials(&self) -> &[VerifiableCredential] {
        &self.credentials
    }
}

/// One network entity's agent. Confined to a single logical actor; the
/// only state shared with other agents is the registry handle and clock.
#[derive(Debug)]
pub struct Agent {
    name: String,
    root_seed: [u8; 32],
    own: BTreeMap<Did, DidDocument>,
    primary: Option<Did>,
    wallet: Wallet,
    registry: Option<RegistryHandle>,
    clock: LogicalClock,
    known_documents: BTreeMap<Did, DidDocument>,
    resolve_cache: RefCell<BTreeMap<Did, DidDocument>>,
    pub(crate) channels: BTreeMap<Digest, SecureChannel>,
    issued: BTreeMap<Digest, Did>,
    rng: ChaCha20Rng,
}

impl Agent {
    pub fn new(
        name: impl Into<String>,
        root_seed: [u8; 32],
        clock: LogicalClock,
        registry: Option<RegistryHandle>,
        binding: WalletBinding,
    ) -> Self {
        let rng_seed = Digest::of_parts([b"did6g/agent-rng".as_slice(), &root_seed]).0;
        Agent {
            name: name.into(),
            root_seed,
            own: BTreeMap::new(),
            primary: None,
            wallet: Wallet::new(binding),
            registry,
            clock,
            known_documents: BTreeMap::new(),
            resolve_cache: RefCell::new(BTreeMap::new()),
            channels: BTreeMap::new(),
            issued: BTreeMap::new(),
            rng: ChaCha20Rng::from_seed(rng_seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn wallet(&self) -> &Wallet {
        &self.wallet
    }

    pub fn wallet_mut(&mut self) -> &mut Wallet {
        &mut self.wallet
    }

    pub fn clock(&self) -> &LogicalClock {
        &self.clock
    }

    pub fn registry(&self) -> Option<&RegistryHandle> {
        self.registry.as_ref()
    }

    /// Grants registry access after construction, for registries that only
    /// exist once every participant has an identity.
    pub fn attach_registry(&mut self, registry: RegistryHandle) {
        self.registry = Some(registry);
        self.resolve_cache.borrow_mut().clear();
    }

    pub fn has_registry_access(&self) -> bool {
        self.registry.is_some()
    }

    /// DID used as the caller identity for registry reads.
    pub fn primary_did(&self) -> Option<&Did> {
        self.primary.as_ref()
    }

    pub fn set_primary(&mut self, did: &Did) -> Result<(), AgentError> {
        if !self.own.contains_key(did) {
            return Err(AgentError::UnknownIdentity(did.clone()));
        }
        self.primary = Some(did.clone());
        Ok(())
    }

    pub fn owns(&self, did: &Did) -> bool {
        self.own.contains_key(did)
    }

    pub fn own_document(&self, did: &Did) -> Option<&DidDocument> {
        self.own.get(did)
    }

    pub fn own_dids(&self) -> impl Iterator<Item = &Did> {
        self.own.keys()
    }

    pub(crate) fn random_bytes<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        self.rng.fill_bytes(&mut out);
        out
    }

    fn adopt(&mut self, doc: DidDocument, keys: Vec<KeyPair>) {
        for (m, k) in doc.verification_methods.iter().zip(keys) {
            self.wallet.insert_key(m.id.clone(), k);
        }
        if self.primary.is_none() {
            self.primary = Some(doc.id.clone());
        }
        self.own.insert(doc.id.clone(), doc);
    }

    /// New identity with an Authentication key plus one key per entry of
    /// `extra`, all drawn from the agent's seeded generator.
    pub fn create_identity(&mut self, method: DidMethod, extra: &[Purpose]) -> Result<Did, AgentError> {
        let auth = generate_keypair(Purpose::Authentication, &self.random_bytes::<32>())?;
        let extra_keys =
            extra.iter().map(|p| generate_keypair(*p, &self.random_bytes::<32>())).collect::<Result<Vec<_>, _>>()?;
        let (did, doc) = create_did_document(method, &auth, &extra_keys)?;
        let mut keys = vec![auth];
        keys.extend(extra_keys);
        self.adopt(doc, keys);
        Ok(did)
    }

    /// The self-certified DID whose key is the agent's root seed itself.
    pub fn root_identity(&mut self) -> Result<Did, AgentError> {
        let key = generate_keypair(Purpose::Authentication, &self.root_seed)?;
        let (did, doc) = create_did_document(DidMethod::SelfCertified, &key, &[])?;
        if !self.own.contains_key(&did) {
            self.adopt(doc, vec![key]);
        }
        Ok(did)
    }

    pub fn pairwise_identity(&mut self, peer_context: &str) -> Result<Did, AgentError> {
        let (did, doc, key) = derive_pairwise_did(&self.root_seed, peer_context)?;
        if !self.own.contains_key(&did) {
            let primary = self.primary.clone();
            self.adopt(doc, vec![key]);
            self.primary = primary.or(Some(did.clone()));
        }
        Ok(did)
    }

    /// First Authentication method of `did` whose private key is held.
    pub fn auth_key(&self, did: &Did) -> Result<(&str, &KeyPair), AgentError> {
        self.signing_key(did, Purpose::Authentication)
    }

    pub fn signing_key(&self, did: &Did, purpose: Purpose) -> Result<(&str, &KeyPair), AgentError> {
        let doc = self.own.get(did).ok_or_else(|| AgentError::UnknownIdentity(did.clone()))?;
        doc.methods_for(purpose)
            .find_map(|m| self.wallet.key(&m.id).map(|k| (m.id.as_str(), k)))
            .ok_or_else(|| AgentError::UnknownIdentity(did.clone()))
    }

    /// Writes the current document of `did` to the registry as a CreateDoc.
    pub fn register(&self, did: &Did) -> Result<Digest, AgentError> {
        let registry = self.registry.as_ref().ok_or(AgentError::NoRegistryAccess)?;
        let doc = self.own.get(did).ok_or_else(|| AgentError::UnknownIdentity(did.clone()))?;
        let (method, key) = self.auth_key(did)?;
        let tx = RegistryTransaction::new_signed(TxPayload::CreateDoc(doc.clone()), did.clone(), key, method)?;
        Ok(registry.write().submit_and_commit(tx)?)
    }

    /// Rotates the Authentication key of `did` and commits the successor
    /// document. The old key is dropped from the document unless
    /// `retain_old`; the wallet keeps it either way.
    pub fn rotate_authentication(&mut self, did: &Did, retain_old: bool) -> Result<DidDocument, AgentError> {
        let current = self.own.get(did).ok_or_else(|| AgentError::UnknownIdentity(did.clone()))?.clone();
        let new_key = generate_keypair(Purpose::Authentication, &self.random_bytes::<32>())?;
        let proposal = propose_rotation(&current, &new_key, retain_old)?;
        let (method, key) = self.auth_key(did)?;
        let signature = key.sign(method, &proposal.canonical_bytes())?;
        let next = identity::rotate_key(&current, &new_key, retain_old, &signature, &current)?;
        if let Some(registry) = &self.registry {
            let tx = RegistryTransaction::new_signed(TxPayload::UpdateDoc(next.clone()), did.clone(), key, method)?;
            registry.write().submit_and_commit(tx)?;
        }
        let new_method = next.verification_methods.last().expect("rotation appends a method").id.clone();
        self.wallet.insert_key(new_method, new_key);
        self.own.insert(did.clone(), next.clone());
        Ok(next)
    }

    /// Stores a document received out of band. Self-certified documents
    /// must hash to their identifier.
    pub fn learn_document(&mut self, doc: DidDocument) -> Result<(), AgentError> {
        if doc.validate().is_err() || (doc.id.method == DidMethod::SelfCertified && !doc.is_self_certified()) {
            return Err(AgentError::NotSelfCertified);
        }
        self.known_documents.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn known_document(&self, did: &Did) -> Option<&DidDocument> {
        self.known_documents.get(did)
    }

    /// Reads the latest document through the agent's registry view. Results
    /// are cached until [`Agent::next_step`].
    pub fn resolve_peer(&self, did: &Did) -> Result<DidDocument, AgentError> {
        let registry = self.registry.as_ref().ok_or(AgentError::NoRegistryAccess)?;
        if let Some(doc) = self.resolve_cache.borrow().get(did) {
            return Ok(doc.clone());
        }
        let doc = registry.read().resolve(did, None, self.primary.as_ref())?;
        self.resolve_cache.borrow_mut().insert(did.clone(), doc.clone());
        Ok(doc)
    }

    /// Own documents, then out-of-band documents, then the registry.
    pub fn lookup_document(&self, did: &Did) -> Result<DidDocument, AgentError> {
        if let Some(d) = self.own.get(did).or_else(|| self.known_documents.get(did)) {
            return Ok(d.clone());
        }
        self.resolve_peer(did)
    }

    pub fn next_step(&mut self) {
        self.resolve_cache.borrow_mut().clear();
    }

    pub fn channel(&self, channel_id: &Digest) -> Option<&SecureChannel> {
        self.channels.get(channel_id)
    }

    pub fn channels(&self) -> impl Iterator<Item = &SecureChannel> {
        self.channels.values()
    }

    pub(crate) fn record_issued(&mut self, credential_id: Digest, issuer: Did) {
        self.issued.insert(credential_id, issuer);
    }

    pub fn issued_by(&self, credential_id: &Digest) -> Option<&Did> {
        self.issued.get(credential_id)
    }
}

//! Verifiable credentials (issuer-signed claims) and verifiable
//! presentations (holder-signed, nonce- and audience-bound, one-time).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::{Agent, AgentError, Envelope};
use crate::codec::{self, canonical_digest, canonical_json, Digest};
use crate::identity::{self, Did, DidDocument, KeyPair, Purpose, Signature};
use crate::registry::{Registry, RegistryError, RegistryTransaction, TxPayload};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("issuer has no Assertion key")]
    NoAssertionKey,
    #[error("credential must carry at least one claim")]
    EmptyClaims,
    #[error("holder has no private key for the credential subject")]
    NotHolder,
    #[error("caller did not issue this credential")]
    NotIssuer,
    #[error("registry write denied")]
    WriteDenied,
    #[error("malformed credential message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("registry: {0}")]
    Registry(RegistryError),
}

impl From<RegistryError> for CredentialError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::WriteDenied => CredentialError::WriteDenied,
            other => CredentialError::Registry(other),
        }
    }
}

/// Who a credential is about: a DID, or a raw public key for subjects
/// outside any DID method (the key keeps ownership provable).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubjectId {
    DidSubject(Did),
    #[serde(rename_all = "camelCase")]
    LegacyKey {
        label: String,
        #[serde(rename = "publicKeyMultibase", with = "codec::multibase_key")]
        public_key: [u8; 32],
    },
}

impl SubjectId {
    pub fn did(&self) -> Option<&Did> {
        match self {
            SubjectId::DidSubject(d) => Some(d),
            SubjectId::LegacyKey { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CredentialMetadata {
    pub issuer: Did,
    pub subject: SubjectId,
    #[serde(rename = "type")]
    pub credential_type: String,
    pub issued_at: u64,
    #[serde(rename = "id")]
    pub credential_id: Digest,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct IdInput<'a> {
    issuer: &'a Did,
    subject: &'a SubjectId,
    #[serde(rename = "type")]
    credential_type: &'a str,
    issued_at: u64,
    claims: &'a BTreeMap<String, String>,
}

/// Issuer proof. Wire form `{"sig","method","created"}` with `sig` as
/// `<scheme>:<base64url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialProof {
    pub signature: Signature,
    pub created: u64,
}

#[derive(Serialize, Deserialize)]
struct ProofWire {
    sig: String,
    method: String,
    created: u64,
}

impl Serialize for CredentialProof {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ProofWire {
            sig: format!("{}:{}", self.signature.scheme_id, codec::b64_encode(&self.signature.bytes)),
            method: self.signature.method_id.clone(),
            created: self.created,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CredentialProof {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = ProofWire::deserialize(d)?;
        let (scheme, b64) = w.sig.split_once(':').ok_or_else(|| serde::de::Error::custom("sig lacks scheme"))?;
        let bytes = codec::b64_decode(b64).map_err(serde::de::Error::custom)?;
        Ok(CredentialProof {
            signature: Signature { scheme_id: scheme.to_string(), bytes, method_id: w.method },
            created: w.created,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    pub metadata: CredentialMetadata,
    pub claims: BTreeMap<String, String>,
    pub proof: CredentialProof,
}

impl VerifiableCredential {
    fn compute_id(
        issuer: &Did,
        subject: &SubjectId,
        credential_type: &str,
        issued_at: u64,
        claims: &BTreeMap<String, String>,
    ) -> Digest {
        canonical_digest(&IdInput { issuer, subject, credential_type, issued_at, claims })
    }

    fn signing_bytes(metadata: &CredentialMetadata, claims: &BTreeMap<String, String>) -> Vec<u8> {
        #[derive(Serialize)]
        struct Signed<'a> {
            metadata: &'a CredentialMetadata,
            claims: &'a BTreeMap<String, String>,
        }
        canonical_json(&Signed { metadata, claims })
    }

    /// Builds and signs a credential with an explicit key. [`issue_vc`] is
    /// the agent-level entry point.
    pub fn sign_with(
        issuer: Did,
        subject: SubjectId,
        credential_type: impl Into<String>,
        claims: BTreeMap<String, String>,
        issued_at: u64,
        key: &KeyPair,
        method_id: &str,
    ) -> Result<Self, CredentialError> {
        if claims.is_empty() {
            return Err(CredentialError::EmptyClaims);
        }
        let credential_type = credential_type.into();
        let credential_id = Self::compute_id(&issuer, &subject, &credential_type, issued_at, &claims);
        let metadata = CredentialMetadata { issuer, subject, credential_type, issued_at, credential_id };
        let signature = key
            .sign(method_id, &Self::signing_bytes(&metadata, &claims))
            .map_err(|_| CredentialError::NoAssertionKey)?;
        Ok(VerifiableCredential { metadata, claims, proof: CredentialProof { signature, created: issued_at } })
    }

    pub fn id(&self) -> &Digest {
        &self.metadata.credential_id
    }

    /// The id matches the content and the claims are non-empty.
    pub fn is_well_formed(&self) -> bool {
        let m = &self.metadata;
        !self.claims.is_empty()
            && m.credential_id == Self::compute_id(&m.issuer, &m.subject, &m.credential_type, m.issued_at, &self.claims)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("credential serializes")
    }
}

pub fn issue_vc(
    issuer: &mut Agent,
    issuer_did: &Did,
    subject: SubjectId,
    credential_type: &str,
    claims: BTreeMap<String, String>,
) -> Result<VerifiableCredential, CredentialError> {
    if claims.is_empty() {
        return Err(CredentialError::EmptyClaims);
    }
    let issued_at = issuer.clock().tick();
    let vc = {
        let (method, key) =
            issuer.signing_key(issuer_did, Purpose::Assertion).map_err(|_| CredentialError::NoAssertionKey)?;
        VerifiableCredential::sign_with(issuer_did.clone(), subject, credential_type, claims, issued_at, key, method)?
    };
    issuer.record_issued(*vc.id(), issuer_did.clone());
    Ok(vc)
}

/// Sends `vc` to the holder over an established channel.
pub fn send_credential(
    issuer: &mut Agent,
    channel_id: &Digest,
    vc: &VerifiableCredential,
) -> Result<Envelope, CredentialError> {
    Ok(issuer.send(channel_id, vc.to_json().as_bytes())?)
}

/// Receives a credential envelope and stores the credential in the wallet.
pub fn accept_credential(
    holder: &mut Agent,
    channel_id: &Digest,
    env: &Envelope,
) -> Result<VerifiableCredential, CredentialError> {
    let body = holder.receive(channel_id, env)?;
    let vc: VerifiableCredential = codec::from_json(&body).map_err(|e| CredentialError::Malformed(e.to_string()))?;
    holder.wallet_mut().store_credential(vc.clone());
    Ok(vc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum VcInvalidReason {
    BadProof,
    IssuerUnresolvable,
    Revoked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "verdict", content = "reason")]
pub enum VcVerdict {
    Valid,
    Invalid(VcInvalidReason),
}

/// Where the issuer's document comes from.
#[derive(Debug, Clone, Copy)]
pub enum IssuerSource<'a> {
    Registry { registry: &'a Registry, caller: Option<&'a Did>, as_of_height: Option<u64> },
    Supplied(&'a DidDocument),
}

/// Checks the issuer proof against the issuer document's Assertion methods
/// and, with a registry source, the revocation status at the same height.
pub fn verify_vc(vc: &VerifiableCredential, source: IssuerSource<'_>) -> VcVerdict {
    let issuer = &vc.metadata.issuer;
    let doc = match source {
        IssuerSource::Registry { registry, caller, as_of_height } => {
            match registry.resolve(issuer, as_of_height, caller) {
                Ok(d) => d,
                Err(_) => return VcVerdict::Invalid(VcInvalidReason::IssuerUnresolvable),
            }
        }
        IssuerSource::Supplied(d) if &d.id == issuer => d.clone(),
        IssuerSource::Supplied(_) => return VcVerdict::Invalid(VcInvalidReason::IssuerUnresolvable),
    };
    let signed = VerifiableCredential::signing_bytes(&vc.metadata, &vc.claims);
    if !vc.is_well_formed() || !doc.verify_signature(Purpose::Assertion, &signed, &vc.proof.signature) {
        return VcVerdict::Invalid(VcInvalidReason::BadProof);
    }
    if let IssuerSource::Registry { registry, caller, as_of_height } = source {
        match registry.credential_status(vc.id(), as_of_height, caller) {
            Ok(Some(entry)) if &entry.issuer == issuer => return VcVerdict::Invalid(VcInvalidReason::Revoked),
            Ok(_) => {}
            Err(_) => return VcVerdict::Invalid(VcInvalidReason::IssuerUnresolvable),
        }
    }
    VcVerdict::Valid
}

/// Wire form `{"vc","nonce","audience","holderProof"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifiablePresentation {
    pub vc: VerifiableCredential,
    #[serde(with = "codec::hex_nonce")]
    pub nonce: [u8; 16],
    pub audience: Did,
    pub holder_proof: Signature,
}

impl VerifiablePresentation {
    fn signing_bytes(vc: &VerifiableCredential, nonce: &[u8; 16], audience: &Did) -> Vec<u8> {
        #[derive(Serialize)]
        struct Signed<'a> {
            vc: &'a VerifiableCredential,
            #[serde(with = "codec::hex_nonce")]
            nonce: &'a [u8; 16],
            audience: &'a Did,
        }
        canonical_json(&Signed { vc, nonce, audience })
    }

    /// Signs a presentation with an arbitrary key. Verification decides
    /// whether that key belongs to the subject.
    pub fn sign_with(
        vc: VerifiableCredential,
        nonce: [u8; 16],
        audience: Did,
        key: &KeyPair,
        method_id: &str,
    ) -> Result<Self, CredentialError> {
        let holder_proof = key
            .sign(method_id, &Self::signing_bytes(&vc, &nonce, &audience))
            .map_err(|_| CredentialError::NotHolder)?;
        Ok(VerifiablePresentation { vc, nonce, audience, holder_proof })
    }

    fn proof_bytes(&self) -> Vec<u8> {
        Self::signing_bytes(&self.vc, &self.nonce, &self.audience)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("presentation serializes")
    }
}

/// Wraps `vc` for `audience` under the verifier's `nonce`, signed with the
/// holder's key for the credential subject.
pub fn create_vp(
    holder: &Agent,
    vc: &VerifiableCredential,
    nonce: [u8; 16],
    audience: &Did,
) -> Result<VerifiablePresentation, CredentialError> {
    let (method, key) = match &vc.metadata.subject {
        SubjectId::DidSubject(did) => holder.auth_key(did).map_err(|_| CredentialError::NotHolder)?,
        SubjectId::LegacyKey { public_key, .. } => {
            holder.wallet().find_by_public_key(public_key).ok_or(CredentialError::NotHolder)?
        }
    };
    VerifiablePresentation::sign_with(vc.clone(), nonce, audience.clone(), key, method)
}

/// Verifier-side record of minted challenges and consumed
/// `(nonce, credential_id)` pairs. Grows monotonically.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NonceRegistry {
    #[serde(skip)]
    minted: BTreeSet<[u8; 16]>,
    consumed: BTreeSet<(String, Digest)>,
}

impl NonceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mints a fresh challenge from the verifier agent's generator.
    pub fn challenge(&mut self, verifier: &mut Agent) -> [u8; 16] {
        loop {
            let n = verifier.random_bytes::<16>();
            if self.minted.insert(n) {
                return n;
            }
        }
    }

    pub fn is_consumed(&self, nonce: &[u8; 16], credential_id: &Digest) -> bool {
        self.consumed.contains(&(hex::encode(nonce), *credential_id))
    }

    /// Records the pair; false if it was already present.
    fn consume(&mut self, nonce: &[u8; 16], credential_id: &Digest) -> bool {
        self.consumed.insert((hex::encode(nonce), *credential_id))
    }

    pub fn len(&self) -> usize {
        self.consumed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consumed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum VpRejection {
    BadIssuerProof,
    IssuerUnresolvable,
    BadOwnershipProof,
    NonceMismatch,
    Replayed,
    WrongAudience,
    Revoked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "verdict", content = "reason")]
pub enum VpVerdict {
    Accepted,
    Rejected(VpRejection),
}

/// Agent-free verification: (a) issuer proof, (b) ownership proof by the
/// subject key, (c) nonce and audience, (d) one-time use. Only an accepted
/// presentation consumes its `(nonce, credential_id)` pair. `subject_doc`
/// is the subject DID's document; legacy-key subjects ignore it.
pub fn verify_vp_with(
    vp: &VerifiablePresentation,
    expected_nonce: &[u8; 16],
    audience: &Did,
    issuer: IssuerSource<'_>,
    subject_doc: Option<&DidDocument>,
    nonces: &mut NonceRegistry,
) -> VpVerdict {
    use VpRejection::*;
    match verify_vc(&vp.vc, issuer) {
        VcVerdict::Valid => {}
        VcVerdict::Invalid(VcInvalidReason::BadProof) => return VpVerdict::Rejected(BadIssuerProof),
        VcVerdict::Invalid(VcInvalidReason::IssuerUnresolvable) => return VpVerdict::Rejected(IssuerUnresolvable),
        VcVerdict::Invalid(VcInvalidReason::Revoked) => return VpVerdict::Rejected(Revoked),
    }
    let msg = vp.proof_bytes();
    let owned = match &vp.vc.metadata.subject {
        SubjectId::LegacyKey { public_key, .. } => identity::verify(public_key, &msg, &vp.holder_proof),
        SubjectId::DidSubject(did) => subject_doc
            .is_some_and(|doc| &doc.id == did && doc.verify_signature(Purpose::Authentication, &msg, &vp.holder_proof)),
    };
    if !owned {
        return VpVerdict::Rejected(BadOwnershipProof);
    }
    if &vp.nonce != expected_nonce {
        return VpVerdict::Rejected(NonceMismatch);
    }
    if &vp.audience != audience {
        return VpVerdict::Rejected(WrongAudience);
    }
    if !nonces.consume(&vp.nonce, vp.vc.id()) {
        return VpVerdict::Rejected(Replayed);
    }
    VpVerdict::Accepted
}

/// Verifies a presentation addressed to one of the verifier agent's DIDs.
/// The issuer document comes from the agent's registry when it has one,
/// otherwise from documents it learned out of band; the subject document
/// from its own, out-of-band or registry documents.
pub fn verify_vp(
    verifier: &Agent,
    vp: &VerifiablePresentation,
    expected_nonce: &[u8; 16],
    nonces: &mut NonceRegistry,
) -> VpVerdict {
    let audience = if verifier.owns(&vp.audience) {
        vp.audience.clone()
    } else {
        match verifier.primary_did() {
            Some(d) => d.clone(),
            None => return VpVerdict::Rejected(VpRejection::WrongAudience),
        }
    };
    let subject_doc = vp.vc.metadata.subject.did().and_then(|d| verifier.lookup_document(d).ok());
    let subject = subject_doc.as_ref();
    match verifier.registry() {
        Some(handle) => {
            let reg = handle.read();
            let source = IssuerSource::Registry { registry: &reg, caller: verifier.primary_did(), as_of_height: None };
            verify_vp_with(vp, expected_nonce, &audience, source, subject, nonces)
        }
        None => match verifier.known_document(&vp.vc.metadata.issuer) {
            Some(doc) => verify_vp_with(vp, expected_nonce, &audience, IssuerSource::Supplied(doc), subject, nonces),
            None => VpVerdict::Rejected(VpRejection::IssuerUnresolvable),
        },
    }
}

/// Writes a revocation status entry for a credential this agent issued.
pub fn revoke_vc(issuer: &Agent, credential_id: &Digest) -> Result<(), CredentialError> {
    let issuer_did = issuer.issued_by(credential_id).ok_or(CredentialError::NotIssuer)?.clone();
    let registry = issuer.registry().ok_or(AgentError::NoRegistryAccess)?;
    let (method, key) = issuer.auth_key(&issuer_did)?;
    let tx = RegistryTransaction::new_signed(
        TxPayload::RevokeCredential { credential_id: *credential_id },
        issuer_did,
        key,
        method,
    )
    .map_err(AgentError::from)?;
    registry.write().submit_and_commit(tx)?;
    Ok(())
}

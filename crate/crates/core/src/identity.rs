//! Key material, DID syntax, DID documents and the raw sign/verify primitives.
//!
//! Signatures are Ed25519 and key agreement is X25519. Every value here is a
//! pure function of its inputs: a fixed seed reproduces every byte.

use std::fmt;
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::{self, canonical_digest, canonical_json, Digest};

pub const SIGNATURE_SCHEME: &str = "Ed25519";
pub const SEED_LEN: usize = 32;

const PAIRWISE_TAG: &[u8] = b"did6g/pairwise-did/v1";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("key purpose {found:?} cannot be used here (expected {expected})")]
    PurposeMismatch { expected: &'static str, found: Purpose },
    #[error("peer context must be non-empty")]
    InvalidContext,
    #[error("signature does not come from the document controller")]
    NotController,
    #[error("malformed DID {0:?}")]
    InvalidDid(String),
    #[error("invalid DID document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Purpose {
    Authentication,
    Assertion,
    KeyAgreement,
}

impl Purpose {
    pub fn can_sign(self) -> bool {
        !matches!(self, Purpose::KeyAgreement)
    }

    fn short(self) -> &'static str {
        match self {
            Purpose::Authentication => "auth",
            Purpose::Assertion => "assert",
            Purpose::KeyAgreement => "agree",
        }
    }
}

/// A public/private key pair bound to a single purpose.
///
/// Serializing a `KeyPair` emits only the public half.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    public_key: [u8; 32],
    private_key: [u8; 32],
    purpose: Purpose,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &codec::multibase_encode(&self.public_key))
            .field("purpose", &self.purpose)
            .finish_non_exhaustive()
    }
}

impl Serialize for KeyPair {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct PublicHalf<'a> {
            public_key_multibase: String,
            purpose: &'a Purpose,
        }
        PublicHalf { public_key_multibase: codec::multibase_encode(&self.public_key), purpose: &self.purpose }
            .serialize(s)
    }
}

pub fn generate_keypair(purpose: Purpose, seed: &[u8]) -> Result<KeyPair, IdentityError> {
    let private_key: [u8; 32] = seed.try_into().map_err(|_| IdentityError::InvalidSeed(seed.len()))?;
    Ok(KeyPair::from_private(purpose, private_key))
}

impl KeyPair {
    fn from_private(purpose: Purpose, private_key: [u8; 32]) -> Self {
        let public_key = match purpose {
            Purpose::KeyAgreement => {
                let secret = x25519_dalek::StaticSecret::from(private_key);
                x25519_dalek::PublicKey::from(&secret).to_bytes()
            }
            _ => SigningKey::from_bytes(&private_key).verifying_key().to_bytes(),
        };
        KeyPair { public_key, private_key, purpose }
    }

    pub fn public_key(&self) -> &[u8; 32] {
        &self.public_key
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// Raw private key bytes. Callers outside this crate only need them to
    /// prove in tests that they never leak into serialized output.
    pub fn private_key_bytes(&self) -> &[u8; 32] {
        &self.private_key
    }

    pub fn sign(&self, method_id: &str, message: &[u8]) -> Result<Signature, IdentityError> {
        sign(self, method_id, message)
    }

    /// X25519 Diffie-Hellman; only KeyAgreement keys are admitted.
    pub fn agree(&self, peer_public: &[u8; 32]) -> Result<[u8; 32], IdentityError> {
        if self.purpose != Purpose::KeyAgreement {
            return Err(IdentityError::PurposeMismatch { expected: "KeyAgreement", found: self.purpose });
        }
        let secret = x25519_dalek::StaticSecret::from(self.private_key);
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(*peer_public));
        Ok(shared.to_bytes())
    }

    pub fn to_verification_method(&self, id: impl Into<String>) -> VerificationMethod {
        VerificationMethod { id: id.into(), purpose: self.purpose, public_key: self.public_key }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(rename = "scheme")]
    pub scheme_id: String,
    #[serde(rename = "value", with = "codec::b64_bytes")]
    pub bytes: Vec<u8>,
    #[serde(rename = "method")]
    pub method_id: String,
}

pub fn sign(key: &KeyPair, method_id: &str, message: &[u8]) -> Result<Signature, IdentityError> {
    if !key.purpose.can_sign() {
        return Err(IdentityError::PurposeMismatch { expected: "Authentication or Assertion", found: key.purpose });
    }
    let sk = SigningKey::from_bytes(&key.private_key);
    Ok(Signature {
        scheme_id: SIGNATURE_SCHEME.to_string(),
        bytes: sk.sign(message).to_bytes().to_vec(),
        method_id: method_id.to_string(),
    })
}

/// Verifies `signature` over `message` against a raw Ed25519 public key.
/// Ignores `signature.method_id`; callers match it against documents.
pub fn verify(public_key: &[u8; 32], message: &[u8], signature: &Signature) -> bool {
    if signature.scheme_id != SIGNATURE_SCHEME {
        return false;
    }
    let Ok(vk) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    let Ok(bytes) = <[u8; 64]>::try_from(signature.bytes.as_slice()) else {
        return false;
    };
    vk.verify(message, &ed25519_dalek::Signature::from_bytes(&bytes)).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DidMethod {
    Registry,
    SelfCertified,
}

impl DidMethod {
    fn name(self) -> &'static str {
        match self {
            DidMethod::Registry => "vdr",
            DidMethod::SelfCertified => "self",
        }
    }
}

/// `did:vdr:<id>` for registry-anchored identifiers, `did:self:<id>` for
/// self-certified ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did {
    pub method: DidMethod,
    pub identifier: String,
}

/// base32-lowercase (unpadded) SHA-256 of a public key: 52 characters.
pub fn canonical_hash(public_key: &[u8]) -> String {
    BASE32_NOPAD.encode(&Sha256::digest(public_key)).to_ascii_lowercase()
}

impl Did {
    pub fn new(method: DidMethod, identifier: impl Into<String>) -> Result<Self, IdentityError> {
        let identifier = identifier.into();
        let ok = !identifier.is_empty()
            && identifier.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b"-._".contains(&b));
        let ok = ok
            && (method != DidMethod::SelfCertified
                || (identifier.len() == 52 && identifier.bytes().all(|b| matches!(b, b'a'..=b'z' | b'2'..=b'7'))));
        if !ok {
            return Err(IdentityError::InvalidDid(format!("did:{}:{identifier}", method.name())));
        }
        Ok(Did { method, identifier })
    }

    /// Self-certification: the identifier is the canonical hash of `public_key`.
    pub fn is_bound_to(&self, public_key: &[u8; 32]) -> bool {
        self.method == DidMethod::SelfCertified && self.identifier == canonical_hash(public_key)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method.name(), self.identifier)
    }
}

impl FromStr for Did {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IdentityError::InvalidDid(s.to_string());
        let rest = s.strip_prefix("did:").ok_or_else(bad)?;
        let (method, id) = rest.split_once(':').ok_or_else(bad)?;
        let method = match method {
            "vdr" => DidMethod::Registry,
            "self" => DidMethod::SelfCertified,
            _ => return Err(bad()),
        };
        Did::new(method, id).map_err(|_| bad())
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct VerificationMethod {
    pub id: String,
    pub purpose: Purpose,
    #[serde(rename = "publicKeyMultibase", with = "codec::multibase_key")]
    pub public_key: [u8; 32],
}

/// Public verification material for one DID. The wire form is closed: no
/// field for names, addresses, subscriber numbers or other personal data
/// exists, and unknown fields are rejected on decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DidDocument {
    pub id: Did,
    pub controller: Did,
    #[serde(rename = "verificationMethod")]
    pub verification_methods: Vec<VerificationMethod>,
    pub version: u64,
    pub prev_version_hash: Option<Digest>,
}

impl DidDocument {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn digest(&self) -> Digest {
        canonical_digest(self)
    }

    pub fn method(&self, method_id: &str) -> Option<&VerificationMethod> {
        self.verification_methods.iter().find(|m| m.id == method_id)
    }

    pub fn methods_for(&self, purpose: Purpose) -> impl Iterator<Item = &VerificationMethod> {
        self.verification_methods.iter().filter(move |m| m.purpose == purpose)
    }

    /// True iff `signature` names a method of this document with the given
    /// purpose and verifies under that method's key.
    pub fn verify_signature(&self, purpose: Purpose, message: &[u8], signature: &Signature) -> bool {
        match self.method(&signature.method_id) {
            Some(m) if m.purpose == purpose && purpose.can_sign() => verify(&m.public_key, message, signature),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        let invalid = |msg: &str| Err(IdentityError::InvalidDocument(msg.to_string()));
        if self.methods_for(Purpose::Authentication).next().is_none() {
            return invalid("no Authentication method");
        }
        let mut ids: Vec<&str> = self.verification_methods.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("duplicate verification method id");
        }
        if (self.version == 0) != self.prev_version_hash.is_none() {
            return invalid("prevVersionHash must be absent exactly at version 0");
        }
        Ok(())
    }

    /// For version-0 self-certified documents: the first Authentication key
    /// hashes to the identifier.
    pub fn is_self_certified(&self) -> bool {
        self.version == 0
            && self.methods_for(Purpose::Authentication).next().is_some_and(|m| self.id.is_bound_to(&m.public_key))
    }

    /// Checks that `next` is a well-formed successor of `self`.
    pub fn is_successor(&self, next: &DidDocument) -> bool {
        next.id == self.id && next.version == self.version + 1 && next.prev_version_hash == Some(self.digest())
    }
}

pub fn create_did_document(
    method: DidMethod,
    auth_key: &KeyPair,
    extra_keys: &[KeyPair],
) -> Result<(Did, DidDocument), IdentityError> {
    if auth_key.purpose != Purpose::Authentication {
        return Err(IdentityError::PurposeMismatch { expected: "Authentication", found: auth_key.purpose });
    }
    let did = Did::new(method, canonical_hash(&auth_key.public_key))?;
    let verification_methods = std::iter::once(auth_key)
        .chain(extra_keys)
        .enumerate()
        .map(|(i, k)| k.to_verification_method(format!("{did}#key-{i}")))
        .collect();
    let doc = DidDocument {
        id: did.clone(),
        controller: did.clone(),
        verification_methods,
        version: 0,
        prev_version_hash: None,
    };
    doc.validate()?;
    Ok((did, doc))
}

/// Derives a self-certified DID for one communication peer. Keys come from
/// HKDF-SHA256 over the root seed with a domain-separation salt and the
/// peer context as info, so different contexts share no key material.
pub fn derive_pairwise_did(root_seed: &[u8], peer_context: &str) -> Result<(Did, DidDocument, KeyPair), IdentityError> {
    if root_seed.len() != SEED_LEN {
        return Err(IdentityError::InvalidSeed(root_seed.len()));
    }
    if peer_context.is_empty() {
        return Err(IdentityError::InvalidContext);
    }
    let mut okm = [0u8; 32];
    Hkdf::<Sha256>::new(Some(PAIRWISE_TAG), root_seed)
        .expand(peer_context.as_bytes(), &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    let key = generate_keypair(Purpose::Authentication, &okm)?;
    let (did, doc) = create_did_document(DidMethod::SelfCertified, &key, &[])?;
    Ok((did, doc, key))
}

/// Builds the unsigned successor document for a key rotation. The new
/// method replaces all methods of the same purpose unless `retain_old`.
pub fn propose_rotation(doc: &DidDocument, new_key: &KeyPair, retain_old: bool) -> Result<DidDocument, IdentityError> {
    let version = doc.version + 1;
    let new_method = new_key.to_verification_method(format!("{}#v{version}-{}", doc.id, new_key.purpose.short()));
    let mut verification_methods: Vec<_> =
        doc.verification_methods.iter().filter(|m| retain_old || m.purpose != new_key.purpose).cloned().collect();
    verification_methods.push(new_method);
    let next = DidDocument {
        id: doc.id.clone(),
        controller: doc.controller.clone(),
        verification_methods,
        version,
        prev_version_hash: Some(doc.digest()),
    };
    next.validate()?;
    Ok(next)
}

/// Applies a rotation authorized by the current controller. `controller_doc`
/// is the controller's current document (the document itself when
/// self-controlled); `controller_signature` covers the canonical bytes of
/// the proposed successor.
pub fn rotate_key(
    doc: &DidDocument,
    new_key: &KeyPair,
    retain_old: bool,
    controller_signature: &Signature,
    controller_doc: &DidDocument,
) -> Result<DidDocument, IdentityError> {
    let next = propose_rotation(doc, new_key, retain_old)?;
    if controller_doc.id != doc.controller
        || !controller_doc.verify_signature(Purpose::Authentication, &next.canonical_bytes(), controller_signature)
    {
        return Err(IdentityError::NotController);
    }
    Ok(next)
}

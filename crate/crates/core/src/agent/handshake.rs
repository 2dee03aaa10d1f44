//! Four-message mutual authentication without a trusted third party.
//!
//! ```text
//! I → R  Hello      initiator DID, responder DID, nonce_i, ephemeral_i
//! R → I  Challenge  nonce_r, ephemeral_r, sig_R("responder" ∥ channel_id)
//! I → R  Proof      sig_I("initiator" ∥ channel_id ∥ H(sig_R))
//! R → I  Finished   HMAC(session_key, "finished" ∥ channel_id)
//! ```
//!
//! `channel_id` hashes the whole Hello plus both responder contributions, so
//! each signature covers the peer's nonce, both ephemeral keys and both
//! DIDs. The session key is HKDF over the X25519 secret of the two
//! ephemeral keys, salted with `channel_id`.

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::codec::{self, canonical_json, Digest};
use crate::identity::{generate_keypair, Did, DidDocument, KeyPair, Purpose, Signature};

use super::{Agent, AgentError};

const RESPONDER_TAG: &[u8] = b"did6g/handshake/responder";
const INITIATOR_TAG: &[u8] = b"did6g/handshake/initiator";
const FINISHED_TAG: &[u8] = b"did6g/handshake/finished";
const SESSION_INFO: &[u8] = b"did6g/session-key";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PeerDocSource {
    RegistryResolved,
    OutOfBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TrustLevel {
    RegistryAnchored,
    SelfAsserted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum ChannelMode {
    /// Each side resolves the other's latest document from its registry.
    RegistryResolved,
    /// Documents exchanged directly; each side receives the other's.
    OutOfBand { initiator_doc: DidDocument, responder_doc: DidDocument },
}

/// One endpoint's view of an established channel. The session key is not
/// serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SecureChannel {
    pub channel_id: Digest,
    pub local: Did,
    pub peer: Did,
    pub peer_doc_source: PeerDocSource,
    pub trust_level: TrustLevel,
    pub established: bool,
    pub encrypted: bool,
    #[serde(skip)]
    pub(crate) peer_doc: DidDocument,
    #[serde(skip)]
    session_key: [u8; 32],
}

impl SecureChannel {
    pub fn session_key(&self) -> &[u8; 32] {
        &self.session_key
    }

    pub fn peer_document(&self) -> &DidDocument {
        &self.peer_doc
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Hello {
    pub initiator: Did,
    pub responder: Did,
    #[serde(with = "codec::hex_nonce")]
    pub nonce: [u8; 16],
    #[serde(with = "codec::multibase_key")]
    pub ephemeral: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Challenge {
    #[serde(with = "codec::hex_nonce")]
    pub nonce: [u8; 16],
    #[serde(with = "codec::multibase_key")]
    pub ephemeral: [u8; 32],
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finished {
    #[serde(with = "codec::multibase_key")]
    pub confirmation: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "type")]
pub enum HandshakeMessage {
    Hello(Hello),
    Challenge(Challenge),
    Proof(Proof),
    Finished(Finished),
}

impl HandshakeMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            HandshakeMessage::Hello(_) => "hello",
            HandshakeMessage::Challenge(_) => "challenge",
            HandshakeMessage::Proof(_) => "proof",
            HandshakeMessage::Finished(_) => "finished",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HandshakeLeg {
    pub from: Did,
    pub to: Did,
    pub message: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Established {
    pub channel_id: Digest,
    pub legs: Vec<HandshakeLeg>,
}

fn channel_id_for(hello: &Hello, nonce_r: &[u8; 16], eph_r: &[u8; 32]) -> Digest {
    Digest::of_parts([b"did6g/channel".as_slice(), &canonical_json(hello), nonce_r, eph_r])
}

fn responder_transcript(channel_id: &Digest) -> Vec<u8> {
    [RESPONDER_TAG, channel_id.as_bytes()].concat()
}

fn initiator_transcript(channel_id: &Digest, responder_sig: &Signature) -> Vec<u8> {
    [INITIATOR_TAG, channel_id.as_bytes(), Digest::of(&responder_sig.bytes).as_bytes()].concat()
}

fn session_key(eph: &KeyPair, peer_eph: &[u8; 32], channel_id: &Digest) -> Result<[u8; 32], AgentError> {
    let shared = eph.agree(peer_eph)?;
    let mut key = [0u8; 32];
    Hkdf::<Sha256>::new(Some(channel_id.as_bytes()), &shared)
        .expand(SESSION_INFO, &mut key)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(key)
}

fn confirmation(key: &[u8; 32], channel_id: &Digest) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(FINISHED_TAG);
    mac.update(channel_id.as_bytes());
    mac.finalize().into_bytes().into()
}

/// Obtains the peer document an endpoint verifies against.
fn peer_document(
    agent: &Agent,
    peer: &Did,
    supplied: Option<&DidDocument>,
) -> Result<(DidDocument, PeerDocSource), AgentError> {
    match supplied {
        Some(doc) => {
            if &doc.id != peer || doc.validate().is_err() {
                return Err(AgentError::AuthFailed);
            }
            if doc.id.method == crate::identity::DidMethod::SelfCertified && !doc.is_self_certified() {
                return Err(AgentError::AuthFailed);
            }
            Ok((doc.clone(), PeerDocSource::OutOfBand))
        }
        None => agent
            .resolve_peer(peer)
            .map(|d| (d, PeerDocSource::RegistryResolved))
            .map_err(|e| AgentError::ResolveFailed(e.to_string())),
    }
}

/// Checks a peer's handshake signature. A signature by a method that only
/// exists in an older registry version of the peer document is reported
/// as `StaleDocument`.
fn check_peer_signature(
    agent: &Agent,
    doc: &DidDocument,
    source: PeerDocSource,
    message: &[u8],
    signature: &Signature,
) -> Result<(), AgentError> {
    if doc.verify_signature(Purpose::Authentication, message, signature) {
        return Ok(());
    }
    if source == PeerDocSource::RegistryResolved && doc.method(&signature.method_id).is_none() {
        if let Some(reg) = agent.registry() {
            let history = reg.read().history(&doc.id, agent.primary_did()).unwrap_or_default();
            if history.iter().any(|old| old.verify_signature(Purpose::Authentication, message, signature)) {
                return Err(AgentError::StaleDocument);
            }
        }
    }
    Err(AgentError::AuthFailed)
}

fn trust_for(source: PeerDocSource) -> TrustLevel {
    match source {
        PeerDocSource::RegistryResolved => TrustLevel::RegistryAnchored,
        PeerDocSource::OutOfBand => TrustLevel::SelfAsserted,
    }
}

/// Runs the handshake between two in-process agents. On success both
/// agents hold their side of the channel.
pub fn establish_channel(
    initiator: &mut Agent,
    responder: &mut Agent,
    initiator_did: &Did,
    responder_did: &Did,
    mode: ChannelMode,
    encrypt: bool,
) -> Result<Established, AgentError> {
    establish_channel_with(initiator, responder, initiator_did, responder_did, mode, encrypt, |_| {})
}

/// As [`establish_channel`], passing every message through `in_transit`
/// before delivery (used to model an active attacker on the path).
pub fn establish_channel_with(
    initiator: &mut Agent,
    responder: &mut Agent,
    initiator_did: &Did,
    responder_did: &Did,
    mode: ChannelMode,
    encrypt: bool,
    mut in_transit: impl FnMut(&mut HandshakeMessage),
) -> Result<Established, AgentError> {
    let (oob_for_initiator, oob_for_responder) = match &mode {
        ChannelMode::RegistryResolved => (None, None),
        ChannelMode::OutOfBand { initiator_doc, responder_doc } => (Some(responder_doc), Some(initiator_doc)),
    };
    let mut legs = Vec::with_capacity(4);
    let mut leg = |from: &Did, to: &Did, m: &HandshakeMessage| {
        legs.push(HandshakeLeg { from: from.clone(), to: to.clone(), message: m.kind() })
    };

    // Initiator: learn the responder, send Hello.
    initiator.auth_key(initiator_did)?;
    let (r_doc, r_source) = peer_document(initiator, responder_did, oob_for_initiator)?;
    let i_eph = generate_keypair(Purpose::KeyAgreement, &initiator.random_bytes::<32>())?;
    let hello = Hello {
        initiator: initiator_did.clone(),
        responder: responder_did.clone(),
        nonce: initiator.random_bytes(),
        ephemeral: *i_eph.public_key(),
    };
    let mut msg = HandshakeMessage::Hello(hello.clone());
    leg(initiator_did, responder_did, &msg);
    in_transit(&mut msg);
    let HandshakeMessage::Hello(hello_rx) = msg else { return Err(AgentError::AuthFailed) };

    // Responder: answer with its nonce, ephemeral key and signature.
    if !responder.owns(&hello_rx.responder) {
        return Err(AgentError::AuthFailed);
    }
    let (i_doc, i_source) = peer_document(responder, &hello_rx.initiator, oob_for_responder)?;
    let r_eph = generate_keypair(Purpose::KeyAgreement, &responder.random_bytes::<32>())?;
    let r_nonce: [u8; 16] = responder.random_bytes();
    let r_channel = channel_id_for(&hello_rx, &r_nonce, r_eph.public_key());
    let (r_method, r_key) = responder.auth_key(&hello_rx.responder)?;
    let challenge = Challenge {
        nonce: r_nonce,
        ephemeral: *r_eph.public_key(),
        signature: r_key.sign(r_method, &responder_transcript(&r_channel))?,
    };
    let r_sig = challenge.signature.clone();
    let mut msg = HandshakeMessage::Challenge(challenge);
    leg(responder_did, initiator_did, &msg);
    in_transit(&mut msg);
    let HandshakeMessage::Challenge(challenge_rx) = msg else { return Err(AgentError::AuthFailed) };

    // Initiator: verify the responder over its own nonce, prove itself.
    let i_channel = channel_id_for(&hello, &challenge_rx.nonce, &challenge_rx.ephemeral);
    check_peer_signature(initiator, &r_doc, r_source, &responder_transcript(&i_channel), &challenge_rx.signature)?;
    let (i_method, i_key) = initiator.auth_key(initiator_did)?;
    let proof = Proof { signature: i_key.sign(i_method, &initiator_transcript(&i_channel, &challenge_rx.signature))? };
    let i_session = session_key(&i_eph, &challenge_rx.ephemeral, &i_channel)?;
    let mut msg = HandshakeMessage::Proof(proof);
    leg(initiator_did, responder_did, &msg);
    in_transit(&mut msg);
    let HandshakeMessage::Proof(proof_rx) = msg else { return Err(AgentError::AuthFailed) };

    // Responder: verify the initiator over the responder's nonce, confirm.
    check_peer_signature(responder, &i_doc, i_source, &initiator_transcript(&r_channel, &r_sig), &proof_rx.signature)?;
    let r_session = session_key(&r_eph, &hello_rx.ephemeral, &r_channel)?;
    let mut msg = HandshakeMessage::Finished(Finished { confirmation: confirmation(&r_session, &r_channel) });
    leg(responder_did, initiator_did, &msg);
    in_transit(&mut msg);
    let HandshakeMessage::Finished(finished_rx) = msg else { return Err(AgentError::AuthFailed) };

    // Initiator: key confirmation.
    if finished_rx.confirmation != confirmation(&i_session, &i_channel) {
        return Err(AgentError::AuthFailed);
    }

    let i_side = SecureChannel {
        channel_id: i_channel,
        local: initiator_did.clone(),
        peer: responder_did.clone(),
        peer_doc_source: r_source,
        trust_level: trust_for(r_source),
        established: true,
        encrypted: encrypt,
        peer_doc: r_doc,
        session_key: i_session,
    };
    let r_side = SecureChannel {
        channel_id: r_channel,
        local: hello_rx.responder.clone(),
        peer: hello_rx.initiator.clone(),
        peer_doc_source: i_source,
        trust_level: trust_for(i_source),
        established: true,
        encrypted: encrypt,
        peer_doc: i_doc,
        session_key: r_session,
    };
    initiator.channels.insert(i_channel, i_side);
    responder.channels.insert(r_channel, r_side);
    Ok(Established { channel_id: i_channel, legs })
}

//! Signed, optionally encrypted, one-way messages over an established
//! channel.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{self, canonical_json, Digest};
use crate::identity::{Did, Purpose, Signature};

use super::{Agent, AgentError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encryption {
    None,
    /// Body is ChaCha20-Poly1305 ciphertext under the channel session key.
    SessionKey(String),
}

impl Serialize for Encryption {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Encryption::None => s.serialize_none(),
            Encryption::SessionKey(id) => s.serialize_some(id),
        }
    }
}

impl<'de> Deserialize<'de> for Encryption {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Option::<String>::deserialize(d)?.map_or(Encryption::None, Encryption::SessionKey))
    }
}

/// Wire form: `{"from","to","nonce","sentAt","body","sig","enc"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Envelope {
    pub from: Did,
    pub to: Did,
    #[serde(with = "codec::hex_nonce")]
    pub nonce: [u8; 16],
    pub sent_at: u64,
    #[serde(with = "codec::b64_bytes")]
    pub body: Vec<u8>,
    #[serde(rename = "sig")]
    pub signature: Signature,
    #[serde(rename = "enc")]
    pub encryption: Encryption,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SignedPart<'a> {
    channel: &'a Digest,
    from: &'a Did,
    to: &'a Did,
    #[serde(with = "codec::hex_nonce")]
    nonce: &'a [u8; 16],
    sent_at: u64,
    #[serde(with = "codec::b64_bytes")]
    body: &'a [u8],
    enc: &'a Encryption,
}

impl Envelope {
    /// Canonical header ∥ body bytes under the given channel. The channel id
    /// is signed but not transmitted.
    fn signing_bytes(&self, channel: &Digest) -> Vec<u8> {
        canonical_json(&SignedPart {
            channel,
            from: &self.from,
            to: &self.to,
            nonce: &self.nonce,
            sent_at: self.sent_at,
            body: &self.body,
            enc: &self.encryption,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

fn aead_nonce(channel: &Digest, nonce: &[u8; 16]) -> [u8; 12] {
    let d = Digest::of_parts([channel.as_bytes().as_slice(), nonce]);
    d.0[..12].try_into().expect("12 of 32 bytes")
}

impl Agent {
    pub fn send(&mut self, channel_id: &Digest, body: &[u8]) -> Result<Envelope, AgentError> {
        let channel = self.channels.get(channel_id).ok_or(AgentError::UnknownChannel)?;
        let (from, to, encrypted, key) =
            (channel.local.clone(), channel.peer.clone(), channel.encrypted, *channel.session_key());
        let nonce: [u8; 16] = self.random_bytes();
        let (body, encryption) = if encrypted {
            let cipher = ChaCha20Poly1305::new(&key.into());
            let ct = cipher
                .encrypt(Nonce::from_slice(&aead_nonce(channel_id, &nonce)), body)
                .expect("in-memory encryption does not fail");
            (ct, Encryption::SessionKey(channel_id.to_hex()))
        } else {
            (body.to_vec(), Encryption::None)
        };
        let mut env = Envelope {
            from,
            to,
            nonce,
            sent_at: self.clock().tick(),
            body,
            signature: Signature { scheme_id: String::new(), bytes: Vec::new(), method_id: String::new() },
            encryption,
        };
        let (method, key) = self.auth_key(&env.from)?;
        env.signature = key.sign(method, &env.signing_bytes(channel_id))?;
        Ok(env)
    }

    /// Checks that `env` belongs to `channel_id`, verifies the sender's
    /// signature against the peer document the channel was built on, then
    /// decrypts when needed.
    pub fn receive(&self, channel_id: &Digest, env: &Envelope) -> Result<Vec<u8>, AgentError> {
        let channel = self.channels.get(channel_id).ok_or(AgentError::UnknownChannel)?;
        let key_matches = match &env.encryption {
            Encryption::None => !channel.encrypted,
            Encryption::SessionKey(id) => channel.encrypted && *id == channel_id.to_hex(),
        };
        if env.from != channel.peer || env.to != channel.local || !key_matches {
            return Err(AgentError::UnknownChannel);
        }
        if !channel.peer_doc.verify_signature(Purpose::Authentication, &env.signing_bytes(channel_id), &env.signature) {
            return Err(AgentError::BadSignature);
        }
        match env.encryption {
            Encryption::None => Ok(env.body.clone()),
            Encryption::SessionKey(_) => ChaCha20Poly1305::new(&(*channel.session_key()).into())
                .decrypt(Nonce::from_slice(&aead_nonce(channel_id, &env.nonce)), env.body.as_slice())
                .map_err(|_| AgentError::DecryptFailed),
        }
    }
}

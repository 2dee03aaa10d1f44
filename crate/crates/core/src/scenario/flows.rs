//! The three end-to-end flows: roaming attach, NF access grants and IoT
//! onboarding.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{self, Digest};
use crate::credential::{
    accept_credential, create_vp, issue_vc, revoke_vc, send_credential, verify_vc, verify_vp, IssuerSource,
    NonceRegistry, SubjectId, VcVerdict, VerifiablePresentation, VpRejection, VpVerdict,
};
use crate::identity::{generate_keypair, DidDocument, Purpose};

use super::{
    derive_seed, fail, name, At, EntityKind, Failure, Governance, ScenarioConfig, ScenarioError, ScenarioKind,
    ScenarioReport, ScenarioRun, Strength, World,
};

pub const VALID_CUSTOMER: &str = "ValidCustomer";
pub const NF_ACCESS_GRANT: &str = "NfAccessGrant";
pub const DEVICE_ATTESTATION: &str = "DeviceAttestation";

/// Application messages exchanged inside envelopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "type")]
enum Message {
    #[serde(rename_all = "camelCase")]
    Challenge {
        #[serde(with = "codec::hex_nonce")]
        nonce: [u8; 16],
    },
    /// A presentation, with the subject's self-certified document when the
    /// verifier cannot resolve it.
    #[serde(rename_all = "camelCase")]
    Presentation { vp: VerifiablePresentation, subject_document: Option<DidDocument> },
    #[serde(rename_all = "camelCase")]
    Request {
        service: String,
        operation: String,
        #[serde(default)]
        vp: Option<VerifiablePresentation>,
    },
    #[serde(rename_all = "camelCase")]
    Response { status: String },
}

impl Message {
    fn bytes(&self) -> Vec<u8> {
        codec::canonical_json(self)
    }

    fn parse(bytes: &[u8], step: &str) -> Result<Self, Failure> {
        codec::from_json(bytes).at(step)
    }
}

fn expect_challenge(bytes: &[u8], step: &str) -> Result<[u8; 16], Failure> {
    match Message::parse(bytes, step)? {
        Message::Challenge { nonce } => Ok(nonce),
        _ => fail(step, "UnexpectedMessage"),
    }
}

fn claims(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn ids_of(config: &ScenarioConfig, kinds: &[EntityKind], first: &str) -> Vec<String> {
    let mut ids = vec![first.to_string()];
    ids.extend(config.entities.iter().filter(|e| kinds.contains(&e.kind) && e.id != first).map(|e| e.id.clone()));
    ids
}

/// Roaming attach without contacting the home network.
///
/// Onboarding: the home operator issues a `ValidCustomer` credential to the
/// subscriber's root DID. Attach: the subscriber derives a pairwise DID for
/// the visited operator, opens an out-of-band channel with it, answers the
/// visited operator's nonce challenge with a presentation, and the visited
/// operator checks the issuer through the registry and ownership locally.
pub fn run_roaming_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    roaming(config, seed).map(|r| r.report)
}

pub(crate) fn roaming(config: &ScenarioConfig, seed: u64) -> Result<ScenarioRun, ScenarioError> {
    let hmno = config.role("hmno", &[EntityKind::HomeMno])?.id.clone();
    let vmno = config.role("vmno", &[EntityKind::VisitedMno])?.id.clone();
    let sub = config.role("subscriber", &[EntityKind::Subscriber])?.id.clone();
    let writers = ids_of(config, &[EntityKind::HomeMno, EntityKind::VisitedMno], &hmno);
    let mut w = World::build(config, seed, Governance::PublicPermissioned(writers))?;
    let (h, v, s) = (w.idx(&hmno), w.idx(&vmno), w.idx(&sub));
    let result = roaming_flow(&mut w, config, h, v, s);
    Ok(w.finish(ScenarioKind::Roaming, result))
}

fn roaming_flow(w: &mut World, config: &ScenarioConfig, h: usize, v: usize, s: usize) -> Result<(), Failure> {
    w.phase("setup");
    w.register_anchored(&BTreeSet::new())?;

    w.phase("onboarding");
    let (h_did, s_did, v_did) = (w.did(h), w.did(s), w.did(v));
    let ch = w.connect(s, h, &s_did, &h_did, true)?;
    w.relate(s, h, "subscription", Strength::Authenticated);
    let home = w.id(h);
    let vc = issue_vc(
        w.agent(h),
        &h_did,
        SubjectId::DidSubject(s_did.clone()),
        VALID_CUSTOMER,
        claims(&[("customerStatus", "valid"), ("homeNetwork", &home)]),
    )
    .at("issue_vc")?;
    w.log(h, "issue_vc", format!("{VALID_CUSTOMER} {}", vc.id()));
    let env = send_credential(w.agent(h), &ch, &vc).at("send_credential")?;
    w.counters.envelopes_sent += 1;
    w.log(h, "send", format!("credential to {}", w.id(s)));
    accept_credential(w.agent(s), &ch, &env).at("accept_credential")?;
    w.log(s, "accept_credential", vc.id().to_string());
    w.relate(s, h, "subscription", Strength::CredentialBacked);

    w.phase("attach");
    w.open_attach_window();
    let pairwise = w.agent(s).pairwise_identity(&v_did.to_string()).at("pairwise_did")?;
    w.log(s, "pairwise_did", pairwise.to_string());
    let ch = w.connect(s, v, &pairwise, &v_did, true)?;
    w.relate(s, v, "roaming", Strength::Authenticated);

    let mut nonces = NonceRegistry::new();
    let nonce = nonces.challenge(w.agent(v));
    let got = w.deliver(v, s, &ch, &Message::Challenge { nonce }.bytes(), "challenge", "challenge")?;
    let nonce_seen = expect_challenge(&got, "challenge")?;

    let vp = if config.adversary.stranger_key_vp {
        let stranger =
            generate_keypair(Purpose::Authentication, &derive_seed("did6g/stranger", w.seed, "vp")).at("create_vp")?;
        let method = format!("{s_did}#key-0");
        VerifiablePresentation::sign_with(vc.clone(), nonce_seen, v_did.clone(), &stranger, &method).at("create_vp")?
    } else {
        create_vp(w.agent(s), &vc, nonce_seen, &v_did).at("create_vp")?
    };
    let subject_document = w.agent(s).own_document(&s_did).cloned();
    let presentation = Message::Presentation { vp, subject_document }.bytes();

    w.phase("verify");
    let verdict = present(w, s, v, &ch, &presentation, &nonce, &mut nonces)?;
    w.close_attach_window();
    if let VpVerdict::Rejected(r) = verdict {
        return fail("verify_vp", name(r));
    }
    w.log(v, "verify_vp", "accepted");
    w.relate(s, v, "roaming", Strength::CredentialBacked);
    w.fact("channelDid", &pairwise);
    w.fact("vcSubjectDid", &s_did);
    w.fact("pairwiseDiffersFromSubject", pairwise != s_did);

    if config.adversary.replay_vp {
        w.phase("replay");
        w.open_attach_window();
        let verdict = present(w, s, v, &ch, &presentation, &nonce, &mut nonces)?;
        w.close_attach_window();
        if let VpVerdict::Rejected(r) = verdict {
            return fail("verify_vp", name(r));
        }
        w.log(v, "verify_vp", "replay accepted");
    }
    Ok(())
}

/// Delivers a presentation message and returns the verifier's verdict.
fn present(
    w: &mut World,
    holder: usize,
    verifier: usize,
    channel: &Digest,
    message: &[u8],
    expected_nonce: &[u8; 16],
    nonces: &mut NonceRegistry,
) -> Result<VpVerdict, Failure> {
    let got = w.deliver(holder, verifier, channel, message, "presentation", "verify_vp")?;
    let Message::Presentation { vp, subject_document } = Message::parse(&got, "verify_vp")? else {
        return fail("verify_vp", "UnexpectedMessage");
    };
    if let Some(doc) = subject_document {
        if w.agent(verifier).learn_document(doc).is_err() {
            w.log(verifier, "verify_vp", "subject document rejected");
            return Ok(VpVerdict::Rejected(VpRejection::BadOwnershipProof));
        }
    }
    let verdict = verify_vp(&w.entities[verifier].agent, &vp, expected_nonce, nonces);
    w.log(verifier, "verify_vp", format!("{verdict:?}"));
    Ok(verdict)
}

/// Token-free NF access: an authorizer grants a consumer NF access to a
/// producer's service with an `NfAccessGrant` credential, and the producer
/// serves only requests carrying an accepted presentation of it.
pub fn run_nf_access_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    nf_access(config, seed).map(|r| r.report)
}

pub(crate) fn nf_access(config: &ScenarioConfig, seed: u64) -> Result<ScenarioRun, ScenarioError> {
    let nf_kinds = [EntityKind::NetworkFunction];
    let authorizer = config.role("authorizer", &[EntityKind::NetworkFunction, EntityKind::HomeMno])?.id.clone();
    let consumer = config.role("consumer", &nf_kinds)?.id.clone();
    let producer = config.role("producer", &nf_kinds)?.id.clone();
    let members: Vec<String> = std::iter::once(authorizer.clone())
        .chain(
            config
                .entities
                .iter()
                .filter(|e| e.kind.is_anchored() && e.has_registry_access() && e.id != authorizer)
                .map(|e| e.id.clone()),
        )
        .collect();
    let mut w = World::build(config, seed, Governance::PrivatePermissioned(members))?;
    let (a, c, p) = (w.idx(&authorizer), w.idx(&consumer), w.idx(&producer));
    let service = config.service.clone().unwrap_or_else(|| "nudm-sdm".to_string());
    let result = nf_flow(&mut w, config, &service, a, c, p);
    Ok(w.finish(ScenarioKind::NfAccess, result))
}

fn nf_flow(w: &mut World, config: &ScenarioConfig, service: &str, a: usize, c: usize, p: usize) -> Result<(), Failure> {
    w.phase("setup");
    w.register_anchored(&BTreeSet::new())?;
    let (a_did, c_did, p_did) = (w.did(a), w.did(c), w.did(p));

    w.phase("grant");
    let ch = w.connect(c, a, &c_did, &a_did, false)?;
    w.relate(c, a, "authorization", Strength::Authenticated);
    let target = if config.adversary.wrong_target { format!("{service}-other") } else { service.to_string() };
    let vc = issue_vc(
        w.agent(a),
        &a_did,
        SubjectId::DidSubject(c_did.clone()),
        NF_ACCESS_GRANT,
        claims(&[("target", &target), ("scope", "invoke")]),
    )
    .at("issue_vc")?;
    w.log(a, "issue_vc", format!("{NF_ACCESS_GRANT} for {target} {}", vc.id()));
    let env = send_credential(w.agent(a), &ch, &vc).at("send_credential")?;
    w.counters.envelopes_sent += 1;
    w.log(a, "send", format!("credential to {}", w.id(c)));
    accept_credential(w.agent(c), &ch, &env).at("accept_credential")?;
    w.relate(c, a, "authorization", Strength::CredentialBacked);
    if config.adversary.revoke_grant {
        revoke_vc(&w.entities[a].agent, vc.id()).at("revoke_vc")?;
        w.log(a, "revoke_vc", vc.id().to_string());
    }

    w.phase("access");
    let ch = w.connect(c, p, &c_did, &p_did, false)?;
    w.relate(c, p, service, Strength::Authenticated);
    if config.probe_denial {
        let probe = Message::Request { service: service.to_string(), operation: "invoke".into(), vp: None };
        let got = w.deliver(c, p, &ch, &probe.bytes(), "request without presentation", "request")?;
        let Message::Request { vp: None, .. } = Message::parse(&got, "request")? else {
            return fail("request", "UnexpectedMessage");
        };
        w.counters.requests_denied += 1;
        w.log(p, "deny", "no presentation");
        let denial = Message::Response { status: "denied".into() }.bytes();
        w.deliver(p, c, &ch, &denial, "denial", "request")?;
    }

    let mut nonces = NonceRegistry::new();
    let nonce = nonces.challenge(w.agent(p));
    let got = w.deliver(p, c, &ch, &Message::Challenge { nonce }.bytes(), "challenge", "challenge")?;
    let nonce_seen = expect_challenge(&got, "challenge")?;
    let vp = create_vp(w.agent(c), &vc, nonce_seen, &p_did).at("create_vp")?;
    let request = Message::Request { service: service.to_string(), operation: "invoke".into(), vp: Some(vp) };
    let got = w.deliver(c, p, &ch, &request.bytes(), "request with presentation", "request")?;
    let Message::Request { service: asked, vp: Some(vp), .. } = Message::parse(&got, "request")? else {
        return fail("request", "UnexpectedMessage");
    };

    let verdict = verify_vp(&w.entities[p].agent, &vp, &nonce, &mut nonces);
    w.log(p, "verify_vp", format!("{verdict:?}"));
    if let VpVerdict::Rejected(r) = verdict {
        w.counters.requests_denied += 1;
        return fail("verify_vp", name(r));
    }
    let granted = vp.vc.metadata.credential_type == NF_ACCESS_GRANT
        && vp.vc.claims.get("target").map(String::as_str) == Some(asked.as_str())
        && asked == service;
    if !granted {
        w.counters.requests_denied += 1;
        w.log(p, "claims check", format!("grant does not cover {asked}"));
        return fail("claims check", "ScopeMismatch");
    }
    w.counters.requests_served += 1;
    w.log(p, "serve", asked.clone());
    let ok = Message::Response { status: "served".into() }.bytes();
    w.deliver(p, c, &ch, &ok, "response", "respond")?;
    w.relate(c, p, service, Strength::CredentialBacked);
    w.fact("grantTarget", &target);
    w.fact("service", service);
    Ok(())
}

/// Onboarding a device that cannot reach the registry: its operator
/// attests the device's self-certified DID, and the operator network
/// verifies the attestation through the operator's registry document.
pub fn run_iot_onboarding_scenario(config: &ScenarioConfig, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    iot_onboarding(config, seed).map(|r| r.report)
}

pub(crate) fn iot_onboarding(config: &ScenarioConfig, seed: u64) -> Result<ScenarioRun, ScenarioError> {
    let operator = config.role("operator", &[EntityKind::IotOperator])?.id.clone();
    let device = config.role("device", &[EntityKind::IotDevice])?;
    if device.has_registry_access() {
        return Err(ScenarioError::Config("IoT device must not have registry access".into()));
    }
    let device = device.id.clone();
    let mno = config.role("mno", &[EntityKind::HomeMno, EntityKind::VisitedMno])?.id.clone();
    let writers = ids_of(
        config,
        &[EntityKind::HomeMno, EntityKind::VisitedMno, EntityKind::IotOperator, EntityKind::CloudProvider],
        &mno,
    );
    let mut w = World::build(config, seed, Governance::PublicPermissioned(writers))?;
    let (o, d, m) = (w.idx(&operator), w.idx(&device), w.idx(&mno));
    let result = iot_flow(&mut w, config, o, d, m);
    Ok(w.finish(ScenarioKind::IotOnboarding, result))
}

fn iot_flow(w: &mut World, config: &ScenarioConfig, o: usize, d: usize, m: usize) -> Result<(), Failure> {
    w.phase("setup");
    let skip = if config.adversary.operator_unregistered { BTreeSet::from([o]) } else { BTreeSet::new() };
    w.register_anchored(&skip)?;
    let (o_did, d_did, m_did) = (w.did(o), w.did(d), w.did(m));

    w.phase("provisioning");
    let ch = w.connect(d, o, &d_did, &o_did, true)?;
    w.relate(d, o, "device management", Strength::Authenticated);
    // The device keeps the operator's document for later out-of-band use.
    let o_doc = w.entities[o].agent.own_document(&o_did).cloned();
    if let Some(doc) = o_doc {
        w.agent(d).learn_document(doc).at("provisioning")?;
    }
    let subject = if config.adversary.device_did_mismatch {
        let mut other = crate::agent::Agent::new(
            "unrelated-device",
            derive_seed("did6g/stranger", w.seed, "device"),
            w.clock.clone(),
            None,
            crate::agent::WalletBinding::HardwareBound,
        );
        other.root_identity().at("issue_vc")?
    } else {
        d_did.clone()
    };
    let operator = w.id(o);
    let vc = issue_vc(
        w.agent(o),
        &o_did,
        SubjectId::DidSubject(subject.clone()),
        DEVICE_ATTESTATION,
        claims(&[("deviceClass", "sensor"), ("operator", &operator)]),
    )
    .at("issue_vc")?;
    w.log(o, "issue_vc", format!("{DEVICE_ATTESTATION} {}", vc.id()));
    let env = send_credential(w.agent(o), &ch, &vc).at("send_credential")?;
    w.counters.envelopes_sent += 1;
    w.log(o, "send", format!("credential to {}", w.id(d)));
    accept_credential(w.agent(d), &ch, &env).at("accept_credential")?;
    w.relate(d, o, "device management", Strength::CredentialBacked);

    w.phase("attach");
    let ch = w.connect(d, m, &d_did, &m_did, true)?;
    let level = w.entities[d].agent.channel(&ch).map(|c| c.trust_level);
    w.relate(d, m, "network access", Strength::Authenticated);
    let mut nonces = NonceRegistry::new();
    let nonce = nonces.challenge(w.agent(m));
    let got = w.deliver(m, d, &ch, &Message::Challenge { nonce }.bytes(), "challenge", "challenge")?;
    let nonce_seen = expect_challenge(&got, "challenge")?;
    // Signed with the device key whether or not the credential names it.
    let vp = {
        let agent = &w.entities[d].agent;
        let (method, key) = agent.auth_key(&d_did).at("create_vp")?;
        VerifiablePresentation::sign_with(vc.clone(), nonce_seen, m_did.clone(), key, method).at("create_vp")?
    };
    let subject_document = w.agent(d).own_document(&d_did).cloned();
    let message = Message::Presentation { vp, subject_document }.bytes();
    let got = w.deliver(d, m, &ch, &message, "presentation", "verify_vp")?;
    let Message::Presentation { vp, subject_document } = Message::parse(&got, "verify_vp")? else {
        return fail("verify_vp", "UnexpectedMessage");
    };

    w.phase("verify");
    let vc_verdict = {
        let agent = &w.entities[m].agent;
        let handle = agent.registry().expect("operator network has registry access");
        let reg = handle.read();
        verify_vc(&vp.vc, IssuerSource::Registry { registry: &reg, caller: agent.primary_did(), as_of_height: None })
    };
    w.log(m, "verify_vc", format!("{vc_verdict:?}"));
    if let VcVerdict::Invalid(r) = vc_verdict {
        return fail("verify_vc", name(r));
    }
    if let Some(doc) = subject_document {
        if w.agent(m).learn_document(doc).is_err() {
            return fail("verify_vp", name(VpRejection::BadOwnershipProof));
        }
    }
    let verdict = verify_vp(&w.entities[m].agent, &vp, &nonce, &mut nonces);
    w.log(m, "verify_vp", format!("{verdict:?}"));
    if let VpVerdict::Rejected(r) = verdict {
        return fail("verify_vp", name(r));
    }
    w.relate(d, m, "network access", Strength::CredentialBacked);
    w.fact("channelTrustLevel", level);
    w.fact("deviceDid", &d_did);
    w.fact("deviceHasRegistryAccess", w.entities[d].agent.has_registry_access());
    Ok(())
}

//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use did6g_core::agent::{
    establish_channel, establish_channel_with, Agent, AgentError, ChannelMode, HandshakeMessage, LogicalClock,
    WalletBinding,
};
use did6g_core::credential::{
    issue_vc, verify_vc, verify_vp, IssuerSource, NonceRegistry, SubjectId, VcVerdict, VerifiableCredential,
    VerifiablePresentation, VpVerdict,
};
use did6g_core::identity::{
    create_did_document, generate_keypair, propose_rotation, Did, DidDocument, DidMethod, KeyPair, Purpose,
};
use did6g_core::registry::{
    ConsensusConfig, GovernancePolicy, Ledger, Registry, RegistryHandle, RegistryTransaction, TxPayload,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};

pub fn seed_bytes(tag: &str, n: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(n.to_be_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub key: KeyPair,
    pub did: Did,
    pub doc: DidDocument,
}

impl Actor {
    pub fn new(n: u64) -> Self {
        let key = generate_keypair(Purpose::Authentication, &seed_bytes("actor", n)).unwrap();
        let (did, doc) = create_did_document(DidMethod::Registry, &key, &[]).unwrap();
        Actor { key, did, doc }
    }

    pub fn method(&self) -> String {
        self.doc
            .methods_for(Purpose::Authentication)
            .find(|m| m.public_key == *self.key.public_key())
            .expect("current key is in the document")
            .id
            .clone()
    }

    pub fn create_tx(&self) -> RegistryTransaction {
        RegistryTransaction::new_signed(
            TxPayload::CreateDoc(self.doc.clone()),
            self.did.clone(),
            &self.key,
            &self.method(),
        )
        .unwrap()
    }
}

pub fn bft_registry(policy: GovernancePolicy) -> Registry {
    Registry::new(policy, ConsensusConfig::bft(4, [], 1.0)).unwrap()
}

/// A ledger with `blocks` committed blocks after genesis, one CreateDoc
/// each.
pub fn ledger_with(blocks: u64) -> Ledger {
    let mut reg = bft_registry(GovernancePolicy::public_permissionless());
    for i in 0..blocks {
        reg.submit_and_commit(Actor::new(10_000 + i).create_tx()).unwrap();
    }
    reg.ledger().clone()
}

pub fn registry_agent(name: &str, n: u64, clock: &LogicalClock, reg: &RegistryHandle) -> Agent {
    Agent::new(name, seed_bytes("agent", n), clock.clone(), Some(reg.clone()), WalletBinding::Software)
}

pub fn offline_agent(name: &str, n: u64, clock: &LogicalClock) -> Agent {
    Agent::new(name, seed_bytes("agent", n), clock.clone(), None, WalletBinding::HardwareBound)
}

/// Counts of what a random submit sequence did.
#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub accepted_updates: u64,
    pub rejected: u64,
    pub blocks: u64,
}

/// One random sequence of creates, updates (honest, by a non-controller,
/// with a stale key, with a version gap) and commits, against a registry
/// whose consensus sometimes halts. Returns the registry for inspection.
pub fn random_submit_sequence(seed: u64, steps: usize) -> (Registry, FuzzStats) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let actors: Vec<Actor> = (0..4).map(|i| Actor::new(seed.wrapping_mul(16).wrapping_add(i))).collect();
    let mut reg = Registry::new(GovernancePolicy::public_permissionless(), ConsensusConfig::bft(4, [], 1.0)).unwrap();
    // Local view of each actor's accepted (pending or committed) state.
    let mut state: BTreeMap<usize, Actor> = BTreeMap::new();
    let mut retired: Vec<(usize, KeyPair)> = Vec::new();
    let mut stats = FuzzStats::default();
    for step in 0..steps {
        let i = rng.gen_range(0..actors.len());
        match rng.gen_range(0..6) {
            0 => {
                let ok = reg.submit(actors[i].create_tx()).is_ok();
                if ok {
                    state.insert(i, actors[i].clone());
                } else {
                    stats.rejected += 1;
                }
            }
            1 | 2 => {
                let Some(cur) = state.get(&i).cloned() else { continue };
                let new_key = generate_keypair(
                    Purpose::Authentication,
                    &seed_bytes("rotate", seed.wrapping_mul(1000).wrapping_add(step as u64)),
                )
                .unwrap();
                let next = propose_rotation(&cur.doc, &new_key, rng.gen_bool(0.3)).unwrap();
                let mode = rng.gen_range(0..4);
                let (author, key, method, doc) = match mode {
                    // Honest controller.
                    0 => (cur.did.clone(), cur.key.clone(), cur.method(), next.clone()),
                    // Another DID signing validly with its own key.
                    1 => {
                        let j = (i + 1) % actors.len();
                        (actors[j].did.clone(), actors[j].key.clone(), actors[j].method(), next.clone())
                    }
                    // The controller's DID with a stranger's or retired key.
                    2 => {
                        let key = retired
                            .iter()
                            .find(|(owner, k)| {
                                *owner == i
                                    && !cur
                                        .doc
                                        .methods_for(Purpose::Authentication)
                                        .any(|m| m.public_key == *k.public_key())
                            })
                            .map(|(_, k)| k.clone())
                            .unwrap_or_else(|| Actor::new(999_999).key);
                        (cur.did.clone(), key, cur.method(), next.clone())
                    }
                    // Honest signature over a version gap.
                    _ => {
                        let mut gap = next.clone();
                        gap.version += 1;
                        (cur.did.clone(), cur.key.clone(), cur.method(), gap)
                    }
                };
                let tx =
                    RegistryTransaction::new_signed(TxPayload::UpdateDoc(doc.clone()), author, &key, &method).unwrap();
                match reg.submit(tx) {
                    Ok(_) => {
                        assert_eq!(mode, 0, "a dishonest update was accepted");
                        stats.accepted_updates += 1;
                        retired.push((i, cur.key.clone()));
                        let kept =
                            doc.methods_for(Purpose::Authentication).any(|m| m.public_key == *cur.key.public_key());
                        let key = if kept && rng.gen_bool(0.5) { cur.key.clone() } else { new_key };
                        state.insert(i, Actor { key, did: cur.did.clone(), doc });
                    }
                    Err(_) => stats.rejected += 1,
                }
            }
            3 => {
                // Flip the halting switch.
                let faulty: Vec<usize> = if rng.gen_bool(0.3) { vec![0, 1] } else { vec![] };
                reg.set_consensus(ConsensusConfig::bft(4, faulty, 1.0)).unwrap();
            }
            _ => {
                if !reg.pending().is_empty() && reg.commit().unwrap().committed {
                    stats.blocks += 1;
                }
            }
        }
    }
    (reg, stats)
}

/// Replays a committed ledger and checks append-only, version and
/// controller rules independently of the registry. Returns the violations.
pub fn audit_ledger(ledger: &Ledger) -> Vec<String> {
    let mut latest: BTreeMap<Did, DidDocument> = BTreeMap::new();
    let mut violations = Vec::new();
    for block in ledger.blocks() {
        for tx in block.transactions().unwrap() {
            let signed = RegistryTransaction::signing_bytes(&tx.payload, &tx.author);
            match &tx.payload {
                TxPayload::CreateDoc(doc) => {
                    if latest.contains_key(&doc.id) {
                        violations.push(format!("re-create of {} at {}", doc.id, block.height));
                    }
                    if doc.version != 0 {
                        violations.push(format!("create at version {}", doc.version));
                    }
                    latest.insert(doc.id.clone(), doc.clone());
                }
                TxPayload::UpdateDoc(doc) => {
                    let Some(prev) = latest.get(&doc.id) else {
                        violations.push(format!("update of unknown {}", doc.id));
                        continue;
                    };
                    if doc.version != prev.version + 1 {
                        violations.push(format!("version {} after {}", doc.version, prev.version));
                    }
                    if tx.author != prev.controller {
                        violations.push(format!("update of {} by non-controller {}", doc.id, tx.author));
                    }
                    if !prev.verify_signature(Purpose::Authentication, &signed, &tx.author_signature) {
                        violations.push(format!("update of {} not signed by a current controller key", doc.id));
                    }
                    latest.insert(doc.id.clone(), doc.clone());
                }
                TxPayload::RevokeCredential { .. } => {}
            }
        }
    }
    violations
}

pub fn claims(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Registry-anchored issuers with Assertion keys, self-certified holders
/// and one anchored verifier that knows every holder document.
pub struct CredWorld {
    pub clock: LogicalClock,
    pub reg: RegistryHandle,
    pub issuers: Vec<(Agent, Did)>,
    pub holders: Vec<(Agent, Did)>,
    pub verifier: Agent,
    pub verifier_did: Did,
}

pub fn cred_world(issuers: usize, holders: usize) -> CredWorld {
    let clock = LogicalClock::new();
    let reg = RegistryHandle::new(bft_registry(GovernancePolicy::public_permissionless()));
    let issuers: Vec<(Agent, Did)> = (0..issuers)
        .map(|i| {
            let mut a = Agent::new(
                format!("issuer-{i}"),
                seed_bytes("issuer", i as u64),
                clock.clone(),
                Some(reg.clone()),
                WalletBinding::Software,
            );
            let did = a.create_identity(DidMethod::Registry, &[Purpose::Assertion]).unwrap();
            a.register(&did).unwrap();
            (a, did)
        })
        .collect();
    let holders: Vec<(Agent, Did)> = (0..holders)
        .map(|i| {
            let mut a = Agent::new(
                format!("holder-{i}"),
                seed_bytes("holder", i as u64),
                clock.clone(),
                None,
                WalletBinding::HardwareBound,
            );
            let did = a.root_identity().unwrap();
            (a, did)
        })
        .collect();
    let mut verifier = registry_agent("verifier", 0, &clock, &reg);
    let verifier_did = verifier.create_identity(DidMethod::Registry, &[]).unwrap();
    verifier.register(&verifier_did).unwrap();
    for (h, did) in &holders {
        verifier.learn_document(h.own_document(did).unwrap().clone()).unwrap();
    }
    CredWorld { clock, reg, issuers, holders, verifier, verifier_did }
}

impl CredWorld {
    pub fn issue_to(&mut self, issuer: usize, holder: usize, claim: &str) -> VerifiableCredential {
        let subject = SubjectId::DidSubject(self.holders[holder].1.clone());
        let (agent, did) = &mut self.issuers[issuer];
        let did = did.clone();
        issue_vc(agent, &did, subject, "ValidCustomer", claims(&[("customerStatus", claim)])).unwrap()
    }

    /// Presentation of `vc` signed with holder `signer`'s own key, whatever
    /// the credential subject.
    pub fn present_as(&self, signer: usize, vc: &VerifiableCredential, nonce: [u8; 16]) -> VerifiablePresentation {
        let (agent, did) = &self.holders[signer];
        let (method, key) = agent.auth_key(did).unwrap();
        VerifiablePresentation::sign_with(vc.clone(), nonce, self.verifier_did.clone(), key, method).unwrap()
    }
}

/// Holders x credentials cross-pairing; returns the accepted pairs.
pub fn holder_binding_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut w = cred_world(1, n);
    let vcs: Vec<VerifiableCredential> = (0..n).map(|j| w.issue_to(0, j, "valid")).collect();
    let mut nonces = NonceRegistry::new();
    let mut accepted = Vec::new();
    for i in 0..n {
        for (j, vc) in vcs.iter().enumerate() {
            let nonce = nonces.challenge(&mut w.verifier);
            let vp = w.present_as(i, vc, nonce);
            if verify_vp(&w.verifier, &vp, &nonce, &mut nonces) == VpVerdict::Accepted {
                accepted.push((i, j));
            }
        }
    }
    accepted
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub submissions: usize,
    pub distinct: usize,
    pub accepted: usize,
    pub double_accepts: usize,
}

/// Submits a random multiset of `vps` in random order to a fresh nonce
/// registry and counts acceptances per `(nonce, credential_id)`.
pub fn replay_order(verifier: &Agent, vps: &[VerifiablePresentation], seed: u64) -> ReplayOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut queue: Vec<&VerifiablePresentation> = Vec::new();
    let mut distinct = std::collections::BTreeSet::new();
    for vp in vps {
        let copies = rng.gen_range(0..4);
        if copies > 0 {
            distinct.insert((vp.nonce, *vp.vc.id()));
        }
        queue.extend(std::iter::repeat_n(vp, copies));
    }
    queue.shuffle(&mut rng);
    let mut nonces = NonceRegistry::new();
    let mut per_pair: BTreeMap<([u8; 16], String), usize> = BTreeMap::new();
    let mut out = ReplayOutcome { submissions: queue.len(), distinct: distinct.len(), ..Default::default() };
    for vp in queue {
        if verify_vp(verifier, vp, &vp.nonce, &mut nonces) == VpVerdict::Accepted {
            out.accepted += 1;
            let n = per_pair.entry((vp.nonce, vp.vc.id().to_hex())).or_default();
            *n += 1;
            if *n > 1 {
                out.double_accepts += 1;
            }
        }
    }
    out
}

/// A random credential from one of the world's issuers, honest or altered
/// (claim, type, subject, issuer swap, foreign signature, proof bit flip).
pub fn random_credential(w: &mut CredWorld, rng: &mut ChaCha20Rng) -> VerifiableCredential {
    let issuer = rng.gen_range(0..w.issuers.len());
    let holder = rng.gen_range(0..w.holders.len());
    let value = format!("v{}", rng.gen::<u32>());
    let mut vc = w.issue_to(issuer, holder, &value);
    match rng.gen_range(0..7) {
        0 => {
            vc.claims.insert("customerStatus".into(), "gold".into());
        }
        1 => vc.metadata.credential_type = "NfAccessGrant".into(),
        2 => vc.metadata.subject = SubjectId::DidSubject(w.holders[(holder + 1) % w.holders.len()].1.clone()),
        3 => vc.metadata.issuer = w.issuers[(issuer + 1) % w.issuers.len()].1.clone(),
        4 => {
            let stranger = generate_keypair(Purpose::Assertion, &seed_bytes("forger", rng.gen())).unwrap();
            let m = vc.metadata.clone();
            vc = VerifiableCredential::sign_with(
                m.issuer,
                m.subject,
                m.credential_type,
                vc.claims,
                m.issued_at,
                &stranger,
                &vc.proof.signature.method_id,
            )
            .unwrap();
        }
        5 => {
            let i = rng.gen_range(0..vc.proof.signature.bytes.len());
            vc.proof.signature.bytes[i] ^= 1 << rng.gen_range(0..8);
        }
        _ => {}
    }
    vc
}

/// Verdict by registry resolution and by the supplied latest issuer
/// document.
pub fn registry_and_supplied_verdicts(w: &CredWorld, vc: &VerifiableCredential) -> (VcVerdict, VcVerdict) {
    let reg = w.reg.read();
    let by_registry = verify_vc(vc, IssuerSource::Registry { registry: &reg, caller: None, as_of_height: None });
    let latest = reg.resolve(&vc.metadata.issuer, None, None).unwrap();
    let by_document = verify_vc(vc, IssuerSource::Supplied(&latest));
    (by_registry, by_document)
}

pub struct Pair {
    pub clock: LogicalClock,
    pub a: Agent,
    pub a_did: Did,
    pub b: Agent,
    pub b_did: Did,
}

pub fn anchored_pair(n: u64) -> Pair {
    let clock = LogicalClock::new();
    let reg = RegistryHandle::new(
        Registry::new(GovernancePolicy::public_permissionless(), ConsensusConfig::bft(4, [], 1.0)).unwrap(),
    );
    let mut a = registry_agent("a", 2 * n, &clock, &reg);
    let mut b = registry_agent("b", 2 * n + 1, &clock, &reg);
    let a_did = a.create_identity(DidMethod::Registry, &[]).unwrap();
    let b_did = b.create_identity(DidMethod::Registry, &[]).unwrap();
    a.register(&a_did).unwrap();
    b.register(&b_did).unwrap();
    Pair { clock, a, a_did, b, b_did }
}

pub fn oob_mode(a: &Agent, a_did: &Did, b: &Agent, b_did: &Did) -> ChannelMode {
    ChannelMode::OutOfBand {
        initiator_doc: a.own_document(a_did).unwrap().clone(),
        responder_doc: b.own_document(b_did).unwrap().clone(),
    }
}

/// Flips one bit of one field of `msg`, or swaps a DID for another one.
pub fn corrupt(msg: &mut HandshakeMessage, rng: &mut ChaCha20Rng, other: &Did) {
    fn flip<const N: usize>(bytes: &mut [u8; N], rng: &mut ChaCha20Rng) {
        bytes[rng.gen_range(0..N)] ^= 1 << rng.gen_range(0..8);
    }
    fn flip_vec(bytes: &mut [u8], rng: &mut ChaCha20Rng) {
        let i = rng.gen_range(0..bytes.len());
        bytes[i] ^= 1 << rng.gen_range(0..8);
    }
    match msg {
        HandshakeMessage::Hello(h) => match rng.gen_range(0..4) {
            0 => flip(&mut h.nonce, rng),
            1 => flip(&mut h.ephemeral, rng),
            2 => h.initiator = other.clone(),
            _ => h.responder = other.clone(),
        },
        HandshakeMessage::Challenge(c) => match rng.gen_range(0..4) {
            0 => flip(&mut c.nonce, rng),
            1 => flip(&mut c.ephemeral, rng),
            2 => flip_vec(&mut c.signature.bytes, rng),
            _ => c.signature.method_id.push('x'),
        },
        HandshakeMessage::Proof(p) => match rng.gen_range(0..2) {
            0 => flip_vec(&mut p.signature.bytes, rng),
            _ => p.signature.scheme_id = "Ed448".into(),
        },
        HandshakeMessage::Finished(f) => flip(&mut f.confirmation, rng),
    }
}

/// One handshake with one randomly chosen message corrupted in transit.
/// Panics if either side keeps a channel.
pub fn corrupted_handshake(case: u64) -> Result<(), AgentError> {
    let mut p = anchored_pair(100 + case % 8);
    let mut rng = ChaCha20Rng::seed_from_u64(case);
    let target = rng.gen_range(0..4usize);
    let other =
        Did::new(DidMethod::SelfCertified, data_encoding::BASE32_NOPAD.encode(&seed_bytes("x", case)).to_lowercase())
            .unwrap();
    let mut index = 0;
    let res =
        establish_channel_with(&mut p.a, &mut p.b, &p.a_did, &p.b_did, ChannelMode::RegistryResolved, true, |m| {
            if index == target {
                corrupt(m, &mut rng, &other);
            }
            index += 1;
        });
    assert_eq!(p.a.channels().count() + p.b.channels().count(), 0, "a channel survived corruption");
    res.map(|_| ())
}

/// One honest handshake; true when both ends hold the same session key.
pub fn honest_handshake(case: u64) -> bool {
    let mut p = anchored_pair(case);
    let est = establish_channel(&mut p.a, &mut p.b, &p.a_did, &p.b_did, ChannelMode::RegistryResolved, true).unwrap();
    match (p.a.channel(&est.channel_id), p.b.channel(&est.channel_id)) {
        (Some(x), Some(y)) => x.established && y.established && x.session_key() == y.session_key(),
        _ => false,
    }
}

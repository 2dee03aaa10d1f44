//! Hash-chained block storage.
//!
//! A block stores its transaction list as canonical JSON bytes, so the bytes
//! that are hashed are exactly the bytes that are kept. Any in-place change
//! to a committed block is visible to [`verify_chain`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{self, canonical_json, CodecError, Digest};

use super::{RegistryError, RegistryTransaction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_hash: Digest,
    #[serde(with = "codec::b64_bytes")]
    pub body: Vec<u8>,
    pub block_hash: Digest,
}

impl LedgerBlock {
    pub fn seal(height: u64, prev_hash: Digest, txs: &[RegistryTransaction]) -> Self {
        let body = canonical_json(txs);
        let block_hash = Self::hash_of(height, &prev_hash, &body);
        LedgerBlock { height, prev_hash, body, block_hash }
    }

    /// H(height as big-endian u64 ∥ prev_hash ∥ canonical(tx_list)).
    pub fn hash_of(height: u64, prev_hash: &Digest, body: &[u8]) -> Digest {
        Digest::of_parts([&height.to_be_bytes()[..], prev_hash.as_bytes(), body])
    }

    pub fn recompute_hash(&self) -> Digest {
        Self::hash_of(self.height, &self.prev_hash, &self.body)
    }

    pub fn transactions(&self) -> Result<Vec<RegistryTransaction>, CodecError> {
        codec::from_json(&self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    /// A ledger holding only the empty genesis block at height 0.
    pub fn new() -> Self {
        Ledger { blocks: vec![LedgerBlock::seal(0, Digest::ZERO, &[])] }
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    /// Raw mutable access for fault injection and replica simulations.
    /// Nothing in the registry calls this.
    pub fn blocks_mut(&mut self) -> &mut Vec<LedgerBlock> {
        &mut self.blocks
    }

    pub fn tip(&self) -> &LedgerBlock {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    pub(crate) fn append(&mut self, block: LedgerBlock) {
        debug_assert_eq!(block.height, self.height() + 1);
        debug_assert_eq!(block.prev_hash, self.tip().block_hash);
        self.blocks.push(block);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ledger serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CodecError> {
        codec::from_json(s.as_bytes())
    }

    /// One JSON object per block: `{height, prevHash, blockHash, txIds}`.
    pub fn inspect_lines(&self) -> Result<Vec<String>, CodecError> {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Line<'a> {
            height: u64,
            prev_hash: &'a Digest,
            block_hash: &'a Digest,
            tx_ids: Vec<Digest>,
        }
        self.blocks
            .iter()
            .map(|b| {
                let tx_ids = b.transactions()?.iter().map(|t| t.tx_id).collect();
                let line = Line { height: b.height, prev_hash: &b.prev_hash, block_hash: &b.block_hash, tx_ids };
                Ok(serde_json::to_string(&line).expect("line serializes"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum ChainReport {
    Ok,
    BrokenAt { height: u64 },
}

/// Recomputes every block hash and prev-hash link; reports the first
/// inconsistent position.
pub fn verify_chain(ledger: &Ledger) -> ChainReport {
    let mut prev = Digest::ZERO;
    for (i, block) in ledger.blocks.iter().enumerate() {
        let i = i as u64;
        if block.height != i || block.prev_hash != prev || block.recompute_hash() != block.block_hash {
            return ChainReport::BrokenAt { height: i };
        }
        prev = block.block_hash;
    }
    ChainReport::Ok
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum ReplicaReport {
    Consistent,
    /// `replicas` are indices into the input slice whose block hash at
    /// `height` differs from the majority value (or is missing).
    DivergedAt {
        height: u64,
        replicas: Vec<usize>,
    },
}

/// Compares block hashes position by position. At the first height where
/// replicas disagree, the most common hash is taken as the reference (ties
/// go to the value held by the lowest-indexed replica) and the rest are
/// reported.
pub fn compare_replicas(replicas: &[&Ledger]) -> Result<ReplicaReport, RegistryError> {
    if replicas.len() < 2 {
        return Err(RegistryError::TooFewReplicas(replicas.len()));
    }
    let longest = replicas.iter().map(|l| l.blocks.len()).max().unwrap_or(0);
    for h in 0..longest {
        let hashes: Vec<Option<Digest>> = replicas.iter().map(|l| l.blocks.get(h).map(|b| b.block_hash)).collect();
        if hashes.windows(2).all(|w| w[0] == w[1]) {
            continue;
        }
        let mut counts: BTreeMap<Option<Digest>, (usize, usize)> = BTreeMap::new();
        for (i, hsh) in hashes.iter().enumerate() {
            counts.entry(*hsh).or_insert((0, i)).0 += 1;
        }
        let reference = counts
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(k, _)| *k)
            .expect("at least two replicas");
        let diverged = hashes.iter().enumerate().filter(|(_, hsh)| **hsh != reference).map(|(i, _)| i).collect();
        return Ok(ReplicaReport::DivergedAt { height: h as u64, replicas: diverged });
    }
    Ok(ReplicaReport::Consistent)
}

//! Golden-vector verification: committed SHA-256 vectors for Merkle tree
//! construction and hash-chained log entries, checked byte-exactly against
//! the implementation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use capsim_core::automaton::{Effect, NodeId, OpId, ReplicatedOp};
use capsim_core::log::{entry_hash, ChainedLog};
use capsim_core::merkle::{build_tree, prove, verify};

#[derive(Debug, Deserialize)]
struct MerkleVectors {
    cases: Vec<MerkleCase>,
}

#[derive(Debug, Deserialize)]
struct MerkleCase {
    leaves_hex: Vec<String>,
    root_hex: String,
}

#[derive(Debug, Deserialize)]
struct ChainVectors {
    entries: Vec<ChainEntry>,
}

#[derive(Debug, Deserialize)]
struct ChainEntry {
    origin: u32,
    seq: u64,
    stamp: u64,
    effect: EffectSpec,
    t: u64,
    prev_hex: String,
    entry_hex: String,
}

#[derive(Debug, Deserialize)]
struct EffectSpec {
    kind: String,
    key: String,
    #[serde(default)]
    amount: Option<i64>,
    #[serde(default)]
    value: Option<i64>,
}

impl ChainEntry {
    fn op(&self) -> Result<ReplicatedOp> {
        let effect = match self.effect.kind.as_str() {
            "inc" => Effect::Inc {
                key: self.effect.key.clone(),
                amount: self.effect.amount.context("inc vector needs amount")?,
            },
            "write" => Effect::Write {
                key: self.effect.key.clone(),
                value: self.effect.value.context("write vector needs value")?,
            },
            other => bail!("unknown effect kind `{other}` in vector"),
        };
        Ok(ReplicatedOp {
            id: OpId {
                origin: NodeId(self.origin),
                seq: self.seq,
            },
            stamp: self.stamp,
            effect,
        })
    }
}

fn digest32(hex_text: &str) -> Result<[u8; 32]> {
    let bytes = hex::decode(hex_text).context("invalid hex digest")?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| anyhow::anyhow!("digest must be 32 bytes"))
}

/// One verified vector: its label and whether the implementation matched.
pub struct VectorResult {
    /// Human-readable vector label.
    pub label: String,
    /// Byte-exact match.
    pub ok: bool,
}

/// Verifies the Merkle vectors: committed roots plus exhaustive prove/verify
/// round-trips for every leaf count up to 64.
pub fn verify_merkle_vectors(json: &str) -> Result<Vec<VectorResult>> {
    let vectors: MerkleVectors = serde_json::from_str(json).context("merkle vector file")?;
    let mut results = Vec::new();
    for case in &vectors.cases {
        let leaves: Vec<Vec<u8>> = case
            .leaves_hex
            .iter()
            .map(|h| hex::decode(h).context("leaf hex"))
            .collect::<Result<_>>()?;
        let expected = digest32(&case.root_hex)?;
        let commitment = build_tree(&leaves)?;
        results.push(VectorResult {
            label: format!("merkle root n={}", leaves.len()),
            ok: commitment.root == expected,
        });
    }
    // Round-trip sweep, independent of the committed cases.
    let mut all_ok = true;
    for n in 1..=64usize {
        let leaves: Vec<Vec<u8>> = (0..n).map(|i| format!("leaf-{i}").into_bytes()).collect();
        let root = build_tree(&leaves)?.root;
        for i in 0..n {
            let proof = prove(&leaves, i)?;
            if !verify(&leaves[i], &proof, &root) {
                all_ok = false;
            }
        }
    }
    results.push(VectorResult {
        label: "merkle prove/verify round-trips n<=64".into(),
        ok: all_ok,
    });
    Ok(results)
}

/// Verifies the hash-chain vectors: each committed entry hash recomputes
/// bit-exactly and the assembled log passes verification.
pub fn verify_chain_vectors(json: &str) -> Result<Vec<VectorResult>> {
    let vectors: ChainVectors = serde_json::from_str(json).context("chain vector file")?;
    let mut results = Vec::new();
    let mut log = ChainedLog::new(NodeId(0));
    for (i, entry) in vectors.entries.iter().enumerate() {
        let op = entry.op()?;
        let prev = digest32(&entry.prev_hex)?;
        let expected = digest32(&entry.entry_hex)?;
        let got = entry_hash(&op, entry.t, &prev);
        results.push(VectorResult {
            label: format!("chain entry {i}"),
            ok: got == expected,
        });
        log.append(op, entry.t, vec![0; 3])
            .context("vector entries must be timestamp-ordered")?;
        let chained_ok = log.entries[i].entry_hash == expected
            && log.entries[i].prev_hash == prev;
        results.push(VectorResult {
            label: format!("chain linkage {i}"),
            ok: chained_ok,
        });
    }
    results.push(VectorResult {
        label: "chain end-to-end verification".into(),
        ok: log.verify(),
    });
    Ok(results)
}

/// Runs every vector file in a directory; returns (label, ok) pairs.
pub fn verify_all(dir: &Path) -> Result<Vec<VectorResult>> {
    let merkle = std::fs::read_to_string(dir.join("merkle.json"))
        .with_context(|| format!("reading {}", dir.join("merkle.json").display()))?;
    let chain = std::fs::read_to_string(dir.join("chain.json"))
        .with_context(|| format!("reading {}", dir.join("chain.json").display()))?;
    let mut results = verify_merkle_vectors(&merkle)?;
    results.extend(verify_chain_vectors(&chain)?);
    Ok(results)
}

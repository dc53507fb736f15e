//! Binary Merkle trees over node state: commitments, inclusion proofs,
//! verification, and root agreement.
//!
//! Commitment equality across all nodes is the system's convergence
//! certificate. Construction uses SHA-256 with domain-separation prefixes:
//! leaves hash as `H(0x00 || data)` and internal nodes as
//! `H(0x01 || left || right)`, which prevents leaf/node second-preimage
//! confusion. An odd node at any level is promoted unpaired to the level
//! above, so trees never duplicate leaves.

use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

use crate::automaton::LocalState;

/// Raw SHA-256 output.
pub type Digest = [u8; 32];

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

/// Which side a proof sibling sits on when recombining toward the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Sibling is the left input of the parent hash.
    Left,
    /// Sibling is the right input of the parent hash.
    Right,
}

/// Inclusion proof: the sibling path from one leaf to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    /// Index of the proven leaf in the original leaf sequence.
    pub leaf_index: usize,
    /// Sibling digests bottom-up, each tagged with its side.
    pub siblings: Vec<(Digest, Side)>,
}

/// A state commitment: the Merkle root plus the committed leaf count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Commitment {
    /// Merkle root.
    pub root: Digest,
    /// Number of leaves bound by the root.
    pub leaf_count: usize,
}

impl Commitment {
    /// Hex rendering of the root, as used in metric streams and golden files.
    pub fn root_hex(&self) -> alloc::string::String {
        hex::encode(self.root)
    }
}

/// Errors from tree construction and proof extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MerkleError {
    /// A tree needs at least one leaf.
    EmptyLeaves,
    /// Requested proof index is not a leaf position.
    IndexOutOfRange {
        /// Offending index.
        index: usize,
        /// Number of leaves in the tree.
        leaf_count: usize,
    },
}

impl fmt::Display for MerkleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MerkleError::EmptyLeaves => write!(f, "cannot build a Merkle tree over zero leaves"),
            MerkleError::IndexOutOfRange { index, leaf_count } => {
                write!(f, "leaf index {index} out of range for {leaf_count} leaves")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MerkleError {}

fn leaf_digest(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update(data);
    h.finalize().into()
}

fn node_digest(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

/// Builds the commitment over an ordered leaf sequence.
pub fn build_tree<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Commitment, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    let mut level: Vec<Digest> = leaves.iter().map(|l| leaf_digest(l.as_ref())).collect();
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len() / 2 + 1);
        let mut chunks = level.chunks_exact(2);
        for pair in &mut chunks {
            next.push(node_digest(&pair[0], &pair[1]));
        }
        // Odd node: promote unpaired.
        if let [odd] = chunks.remainder() {
            next.push(*odd);
        }
        level = next;
    }
    Ok(Commitment {
        root: level[0],
        leaf_count: leaves.len(),
    })
}

/// Extracts the inclusion proof for `index`.
pub fn prove<L: AsRef<[u8]>>(leaves: &[L], index: usize) -> Result<MerkleProof, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfRange {
            index,
            leaf_count: leaves.len(),
        });
    }
    let mut level: Vec<Digest> = leaves.iter().map(|l| leaf_digest(l.as_ref())).collect();
    let mut pos = index;
    let mut siblings = Vec::new();
    while level.len() > 1 {
        if pos % 2 == 0 {
            if pos + 1 < level.len() {
                siblings.push((level[pos + 1], Side::Right));
            }
            // else: promoted unpaired, no sibling at this level
        } else {
            siblings.push((level[pos - 1], Side::Left));
        }
        let mut next = Vec::with_capacity(level.len() / 2 + 1);
        let mut chunks = level.chunks_exact(2);
        for pair in &mut chunks {
            next.push(node_digest(&pair[0], &pair[1]));
        }
        if let [odd] = chunks.remainder() {
            next.push(*odd);
        }
        pos /= 2;
        level = next;
    }
    Ok(MerkleProof {
        leaf_index: index,
        siblings,
    })
}

/// Checks an inclusion proof against a root.
pub fn verify(leaf: &[u8], proof: &MerkleProof, root: &Digest) -> bool {
    let mut acc = leaf_digest(leaf);
    for (sibling, side) in &proof.siblings {
        acc = match side {
            Side::Left => node_digest(sibling, &acc),
            Side::Right => node_digest(&acc, sibling),
        };
    }
    acc == *root
}

/// Canonical leaf encoding of one register: `len(key) || key || value`.
///
/// Key length is big-endian u32, value big-endian i64.
pub fn register_leaf(key: &str, value: i64) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 + key.len() + 8);
    bytes.extend_from_slice(&(key.len() as u32).to_be_bytes());
    bytes.extend_from_slice(key.as_bytes());
    bytes.extend_from_slice(&value.to_be_bytes());
    bytes
}

/// Commits a node's register map.
///
/// Leaves are canonical register encodings in key order, so two states equal
/// as mappings commit identically regardless of insertion history. An empty
/// register map commits to a single empty-sentinel leaf (the empty byte
/// string, which no register encoding can collide with).
pub fn commit_state(state: &LocalState) -> Commitment {
    let leaves: Vec<Vec<u8>> = if state.registers.is_empty() {
        alloc::vec![Vec::new()]
    } else {
        state
            .registers
            .iter()
            .map(|(k, v)| register_leaf(k, *v))
            .collect()
    };
    build_tree(&leaves).expect("at least the sentinel leaf")
}

/// True iff all commitments share one root.
pub fn agreement(commitments: &[Commitment]) -> bool {
    match commitments.split_first() {
        Some((first, rest)) => rest.iter().all(|c| c.root == first.root),
        None => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sha(parts: &[&[u8]]) -> Digest {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        h.finalize().into()
    }

    #[test]
    fn single_leaf_root_is_prefixed_leaf_hash() {
        let c = build_tree(&[b"d".as_slice()]).unwrap();
        assert_eq!(c.root, sha(&[&[0x00], b"d"]));
        assert_eq!(c.leaf_count, 1);
    }

    #[test]
    fn two_equal_leaves_root_differs_from_leaf_digest() {
        let c = build_tree(&[b"x".as_slice(), b"x".as_slice()]).unwrap();
        let leaf = sha(&[&[0x00], b"x"]);
        assert_ne!(c.root, leaf);
        assert_eq!(c.root, sha(&[&[0x01], &leaf, &leaf]));
    }

    #[test]
    fn four_leaf_root_matches_straight_line_recompute() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d"];
        let c = build_tree(&leaves).unwrap();
        // Independent recompute, no loops: exact shape of a 4-leaf tree.
        let l: Vec<Digest> = leaves.iter().map(|d| sha(&[&[0x00], d])).collect();
        let n01 = sha(&[&[0x01], &l[0], &l[1]]);
        let n23 = sha(&[&[0x01], &l[2], &l[3]]);
        assert_eq!(c.root, sha(&[&[0x01], &n01, &n23]));
    }

    #[test]
    fn five_leaf_promotion_shape() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d", b"e"];
        let c = build_tree(&leaves).unwrap();
        let l: Vec<Digest> = leaves.iter().map(|d| sha(&[&[0x00], d])).collect();
        let n01 = sha(&[&[0x01], &l[0], &l[1]]);
        let n23 = sha(&[&[0x01], &l[2], &l[3]]);
        let n0123 = sha(&[&[0x01], &n01, &n23]);
        // l[4] is promoted twice and pairs only at the top.
        assert_eq!(c.root, sha(&[&[0x01], &n0123, &l[4]]));
    }

    #[test]
    fn empty_leaves_rejected() {
        assert_eq!(
            build_tree::<&[u8]>(&[]).unwrap_err(),
            MerkleError::EmptyLeaves
        );
    }

    #[test]
    fn single_leaf_proof_is_empty() {
        let leaves: Vec<&[u8]> = vec![b"only"];
        let proof = prove(&leaves, 0).unwrap();
        assert!(proof.siblings.is_empty());
        let root = build_tree(&leaves).unwrap().root;
        assert!(verify(b"only", &proof, &root));
    }

    #[test]
    fn four_leaf_proof_round_trips() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d"];
        let root = build_tree(&leaves).unwrap().root;
        let proof = prove(&leaves, 2).unwrap();
        assert_eq!(proof.siblings.len(), 2);
        assert!(verify(b"c", &proof, &root));
        assert!(!verify(b"x", &proof, &root));
    }

    #[test]
    fn promoted_leaf_proof_round_trips() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d", b"e"];
        let root = build_tree(&leaves).unwrap().root;
        let proof = prove(&leaves, 4).unwrap();
        // The promoted leaf pairs only at the very top.
        assert_eq!(proof.siblings.len(), 1);
        assert!(verify(b"e", &proof, &root));
    }

    #[test]
    fn out_of_range_proof_index() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b"];
        assert_eq!(
            prove(&leaves, 2).unwrap_err(),
            MerkleError::IndexOutOfRange {
                index: 2,
                leaf_count: 2
            }
        );
    }

    #[test]
    fn flipped_leaf_byte_fails_verification() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d"];
        let root = build_tree(&leaves).unwrap().root;
        let proof = prove(&leaves, 1).unwrap();
        assert!(verify(b"b", &proof, &root));
        assert!(!verify(b"B", &proof, &root));
    }

    #[test]
    fn swapped_sibling_order_fails_verification() {
        let leaves: Vec<&[u8]> = vec![b"a", b"b", b"c", b"d"];
        let root = build_tree(&leaves).unwrap().root;
        let mut proof = prove(&leaves, 1).unwrap();
        proof.siblings.swap(0, 1);
        assert!(!verify(b"b", &proof, &root));
    }

    /// Independent recursive formula for the expected proof length of a leaf
    /// under the promotion scheme.
    fn expected_proof_len(n: usize, index: usize) -> usize {
        if n == 1 {
            return 0;
        }
        let has_sibling = index % 2 == 1 || index + 1 < n;
        let parent_level = n / 2 + n % 2;
        usize::from(has_sibling) + expected_proof_len(parent_level, index / 2)
    }

    #[test]
    fn exhaustive_round_trip_and_proof_sizes_up_to_64() {
        for n in 1..=64usize {
            let leaves: Vec<Vec<u8>> =
                (0..n).map(|i| alloc::format!("leaf-{i}").into_bytes()).collect();
            let root = build_tree(&leaves).unwrap().root;
            let ceil_log2 = usize::BITS as usize - (n - 1).leading_zeros() as usize;
            let mut max_len = 0;
            for i in 0..n {
                let proof = prove(&leaves, i).unwrap();
                assert!(verify(&leaves[i], &proof, &root), "n={n} i={i}");
                assert_eq!(proof.siblings.len(), expected_proof_len(n, i), "n={n} i={i}");
                max_len = max_len.max(proof.siblings.len());
            }
            if n > 1 {
                assert_eq!(max_len, ceil_log2, "n={n}");
            }
        }
    }

    #[test]
    fn distinct_small_leaf_sets_have_distinct_roots() {
        // Desk-scale binding proxy: no collisions across a fuzz corpus.
        use alloc::collections::BTreeMap;
        let mut seen: BTreeMap<Digest, Vec<Vec<u8>>> = BTreeMap::new();
        let mut corpus: Vec<Vec<Vec<u8>>> = Vec::new();
        for n in 1..=8usize {
            for salt in 0..32u8 {
                corpus.push(
                    (0..n)
                        .map(|i| alloc::vec![salt, i as u8, salt ^ i as u8])
                        .collect(),
                );
            }
        }
        for leaves in corpus {
            let root = build_tree(&leaves).unwrap().root;
            if let Some(prev) = seen.insert(root, leaves.clone()) {
                assert_eq!(prev, leaves, "root collision");
            }
        }
    }

    #[test]
    fn agreement_semantics() {
        let a = build_tree(&[b"a".as_slice()]).unwrap();
        let b = build_tree(&[b"b".as_slice()]).unwrap();
        assert!(agreement(&[a, a]));
        assert!(!agreement(&[a, b, a]));
        assert!(agreement(&[a]));
    }
}

//! Hash-chained, timestamped per-node operation logs.
//!
//! Each node appends every operation it applies (its own and delivered
//! remote ones). Entries chain by SHA-256 over a canonical byte encoding,
//! giving tamper-evident histories: `entry_hash =
//! H(len(op) u32be || op bytes || t u64be || prev_hash)`, with the genesis
//! predecessor fixed at 32 zero bytes. Entry timestamps are the owner's
//! apply times and never decrease within a log; an entry's vector clock is
//! the operation's origin clock, which is what conflict detection compares.

use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

use crate::automaton::{NodeId, ReplicatedOp};
use crate::merkle::Digest;

/// The all-zero predecessor of the first entry.
pub const GENESIS_HASH: Digest = [0u8; 32];

/// One log entry: an applied operation with chain metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    /// The applied operation.
    pub op: ReplicatedOp,
    /// Apply timestamp at the log owner (logical step).
    pub t: u64,
    /// Origin vector clock of the operation.
    pub vclock: Vec<u64>,
    /// Hash of the preceding entry (zeros for the first).
    pub prev_hash: Digest,
    /// Chained hash of this entry.
    pub entry_hash: Digest,
    /// Node vouching for this entry.
    pub signer_tag: NodeId,
}

/// Computes the chained hash of an entry from its parts.
pub fn entry_hash(op: &ReplicatedOp, t: u64, prev_hash: &Digest) -> Digest {
    let op_bytes = op.canonical_bytes();
    let mut h = Sha256::new();
    h.update((op_bytes.len() as u32).to_be_bytes());
    h.update(&op_bytes);
    h.update(t.to_be_bytes());
    h.update(prev_hash);
    h.finalize().into()
}

/// Errors from log appends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogError {
    /// Append with a timestamp older than the log tail.
    TimestampRegression {
        /// Timestamp of the current tail.
        last: u64,
        /// Offending append timestamp.
        offered: u64,
    },
}

impl fmt::Display for LogError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogError::TimestampRegression { last, offered } => {
                write!(f, "timestamp regression: {offered} after {last}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LogError {}

/// A node's hash-chained log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainedLog {
    /// Owning node.
    pub owner: NodeId,
    /// Entries in apply order.
    pub entries: Vec<LogEntry>,
}

impl ChainedLog {
    /// Empty log for a node.
    pub fn new(owner: NodeId) -> Self {
        ChainedLog {
            owner,
            entries: Vec::new(),
        }
    }

    /// Hash of the tail entry, or the genesis constant for an empty log.
    pub fn head_hash(&self) -> Digest {
        self.entries
            .last()
            .map(|e| e.entry_hash)
            .unwrap_or(GENESIS_HASH)
    }

    /// Appends one applied operation, signed by the owner.
    ///
    /// `t` is the owner's apply time and must not regress; `vclock` is the
    /// operation's origin vector clock.
    pub fn append(&mut self, op: ReplicatedOp, t: u64, vclock: Vec<u64>) -> Result<(), LogError> {
        if let Some(last) = self.entries.last() {
            if t < last.t {
                return Err(LogError::TimestampRegression {
                    last: last.t,
                    offered: t,
                });
            }
        }
        let prev_hash = self.head_hash();
        let hash = entry_hash(&op, t, &prev_hash);
        self.entries.push(LogEntry {
            op,
            t,
            vclock,
            prev_hash,
            entry_hash: hash,
            signer_tag: self.owner,
        });
        Ok(())
    }

    /// Rebuilds a log from (op, t, vclock, signer) tuples, re-chaining all
    /// hashes. Used when reconciliation replaces both peers' logs with the
    /// canonical merged history. Timestamps must be non-decreasing.
    pub fn rebuild(
        owner: NodeId,
        entries: impl IntoIterator<Item = (ReplicatedOp, u64, Vec<u64>, NodeId)>,
    ) -> Result<Self, LogError> {
        let mut log = ChainedLog::new(owner);
        for (op, t, vclock, signer) in entries {
            log.append(op, t, vclock)?;
            log.entries.last_mut().expect("just appended").signer_tag = signer;
        }
        Ok(log)
    }

    /// Whether someone applied this operation id already.
    pub fn contains_op(&self, id: crate::automaton::OpId) -> bool {
        self.entries.iter().any(|e| e.op.id == id)
    }

    /// Verifies the whole chain: every entry hash recomputes from its parts
    /// and chains onto its predecessor, and timestamps never decrease.
    pub fn verify(&self) -> bool {
        let mut prev = GENESIS_HASH;
        let mut last_t = 0u64;
        for (i, e) in self.entries.iter().enumerate() {
            if e.prev_hash != prev {
                return false;
            }
            if entry_hash(&e.op, e.t, &e.prev_hash) != e.entry_hash {
                return false;
            }
            if i > 0 && e.t < last_t {
                return false;
            }
            prev = e.entry_hash;
            last_t = e.t;
        }
        true
    }

    /// Length of the longest shared hash-chain prefix with another log.
    pub fn common_prefix_len(&self, other: &ChainedLog) -> usize {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .take_while(|(a, b)| a.entry_hash == b.entry_hash)
            .count()
    }
}

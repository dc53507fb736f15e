//! Post-partition state reconciliation: conflict detection, causal merge
//! ordering, replay-based recovery, and recovery-time measurement.
//!
//! Reconciliation exchanges two verified logs, merges their operations into
//! one strict total order, and deterministically replays the merged history
//! from the last shared hash-chain prefix. The merged order is primarily by
//! timestamp; equal-timestamp groups are ordered causally by vector clock
//! with the signer tag breaking ties among concurrent entries. Replay applies
//! the conflict rule at concurrent same-key writes, so both peers compute the
//! identical converged state regardless of invocation order.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::automaton::{Effect, LocalState, NodeId, NodeStatus, OpId, ReplicatedOp};
use crate::log::{ChainedLog, LogEntry};

/// Relation between two vector clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockOrder {
    /// Identical clocks.
    Equal,
    /// Left happened strictly before right.
    Before,
    /// Left happened strictly after right.
    After,
    /// Incomparable: concurrent.
    Concurrent,
}

/// Compares two vector clocks pointwise.
pub fn compare_clocks(a: &[u64], b: &[u64]) -> ClockOrder {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0);
    let mut some_less = false;
    let mut some_greater = false;
    for i in 0..len {
        match get(a, i).cmp(&get(b, i)) {
            Ordering::Less => some_less = true,
            Ordering::Greater => some_greater = true,
            Ordering::Equal => {}
        }
    }
    match (some_less, some_greater) {
        (false, false) => ClockOrder::Equal,
        (true, false) => ClockOrder::Before,
        (false, true) => ClockOrder::After,
        (true, true) => ClockOrder::Concurrent,
    }
}

/// True iff the clocks are ordered (one dominates the other or they are
/// equal); concurrent clocks are the unsynchronized case.
pub fn clocks_ordered(a: &[u64], b: &[u64]) -> bool {
    compare_clocks(a, b) != ClockOrder::Concurrent
}

/// How a conflicting write pair is resolved during replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// The conflicting operation with the earliest timestamp sticks.
    FirstTimestampWins,
    /// The conflicting operation with the latest timestamp sticks.
    LastWriterWins,
}

/// Pairwise operation classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kappa {
    /// Order-independent pair.
    Commute,
    /// Same-state conflict resolved by the given rule.
    Conflict(Resolution),
}

/// Application-specific conflict classification for operation pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConflictRule {
    /// Resolution applied to conflicting pairs.
    pub resolution: Resolution,
}

impl ConflictRule {
    /// Last-writer-wins rule, the live semantics of the register automaton.
    pub fn lww() -> Self {
        ConflictRule {
            resolution: Resolution::LastWriterWins,
        }
    }

    /// First-timestamp-wins rule.
    pub fn ftw() -> Self {
        ConflictRule {
            resolution: Resolution::FirstTimestampWins,
        }
    }

    /// Classifies an operation pair. Symmetric: increments commute with
    /// everything on their key and all ops on distinct keys commute; any
    /// same-key pair involving a write conflicts.
    pub fn classify(&self, a: &ReplicatedOp, b: &ReplicatedOp) -> Kappa {
        if a.effect.key() != b.effect.key() {
            return Kappa::Commute;
        }
        match (&a.effect, &b.effect) {
            (Effect::Inc { .. }, Effect::Inc { .. }) => Kappa::Commute,
            _ => Kappa::Conflict(self.resolution),
        }
    }
}

/// Errors from reconciliation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReconcileError {
    /// A participating log fails hash-chain verification.
    UnverifiedLog(NodeId),
    /// The two logs carry the same operation id with different content:
    /// evidence of equivocation, surfaced to the audit layer.
    DivergentPrefix {
        /// Operation id claimed twice with conflicting content.
        op: OpId,
    },
}

impl fmt::Display for ReconcileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReconcileError::UnverifiedLog(n) => write!(f, "log of {n} fails verification"),
            ReconcileError::DivergentPrefix { op } => write!(
                f,
                "operation {}#{} appears with divergent content",
                op.origin, op.seq
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ReconcileError {}

/// Cross-log conflicting pairs: distinct operations classified as conflicts
/// whose origin clocks are incomparable (true concurrency).
pub fn detect_conflicts(
    a: &ChainedLog,
    b: &ChainedLog,
    rule: &ConflictRule,
) -> Result<Vec<(LogEntry, LogEntry)>, ReconcileError> {
    if !a.verify() {
        return Err(ReconcileError::UnverifiedLog(a.owner));
    }
    if !b.verify() {
        return Err(ReconcileError::UnverifiedLog(b.owner));
    }
    let mut out = Vec::new();
    for ea in &a.entries {
        for eb in &b.entries {
            if ea.op.id == eb.op.id {
                continue;
            }
            if matches!(rule.classify(&ea.op, &eb.op), Kappa::Conflict(_))
                && compare_clocks(&ea.vclock, &eb.vclock) == ClockOrder::Concurrent
            {
                out.push((ea.clone(), eb.clone()));
            }
        }
    }
    Ok(out)
}

/// Merges two verified logs into one strict total order over their operation
/// union.
///
/// Duplicate instances of an operation id must agree on content (the
/// earliest instance, the origin's own record, is kept); disagreement is
/// equivocation and fails with [`ReconcileError::DivergentPrefix`]. Entries
/// sort by timestamp; within an equal-timestamp group causally ordered
/// entries keep their causal order and concurrent ones fall back to
/// `(signer, seq)`.
pub fn merge_order(a: &ChainedLog, b: &ChainedLog) -> Result<Vec<LogEntry>, ReconcileError> {
    if !a.verify() {
        return Err(ReconcileError::UnverifiedLog(a.owner));
    }
    if !b.verify() {
        return Err(ReconcileError::UnverifiedLog(b.owner));
    }
    let mut kept: BTreeMap<OpId, LogEntry> = BTreeMap::new();
    for e in a.entries.iter().chain(b.entries.iter()) {
        match kept.get(&e.op.id) {
            None => {
                kept.insert(e.op.id, e.clone());
            }
            Some(existing) => {
                if existing.op != e.op {
                    return Err(ReconcileError::DivergentPrefix { op: e.op.id });
                }
                if e.t < existing.t {
                    kept.insert(e.op.id, e.clone());
                }
            }
        }
    }
    let mut entries: Vec<LogEntry> = kept.into_values().collect();
    entries.sort_by_key(|e| (e.t, e.signer_tag, e.op.id.seq));

    // Causal fix-up inside equal-timestamp groups: emit, repeatedly, the
    // smallest (signer, seq) entry not causally after any remaining one.
    let mut ordered = Vec::with_capacity(entries.len());
    let mut i = 0;
    while i < entries.len() {
        let mut j = i + 1;
        while j < entries.len() && entries[j].t == entries[i].t {
            j += 1;
        }
        if j - i == 1 {
            ordered.push(entries[i].clone());
        } else {
            let mut group: Vec<LogEntry> = entries[i..j].to_vec();
            while !group.is_empty() {
                let pick = group
                    .iter()
                    .position(|c| {
                        group
                            .iter()
                            .all(|o| compare_clocks(&o.vclock, &c.vclock) != ClockOrder::Before)
                    })
                    .unwrap_or(0);
                ordered.push(group.remove(pick));
            }
        }
        i = j;
    }
    Ok(ordered)
}

/// Deterministic replay of a merged history from the last common prefix.
///
/// `merged` must come from [`merge_order`] over the two nodes' logs. The
/// result is symmetric in its inputs: registers come from the replay, the
/// vector clock is the pointwise maximum, and the local clock the maximum of
/// the two. Conflicting concurrent writes follow the rule; increments always
/// accumulate.
pub fn reconcile(
    q_i: &LocalState,
    q_j: &LocalState,
    merged: &[LogEntry],
    rule: &ConflictRule,
) -> LocalState {
    let k = q_i.vclock.len().max(q_j.vclock.len());
    let mut state = LocalState::new(k);
    let mut applied: Vec<LogEntry> = Vec::with_capacity(merged.len());
    for entry in merged {
        let mut skip = false;
        if let Effect::Write { key, value } = &entry.op.effect {
            let concurrent_conflict = applied.iter().any(|p| {
                matches!(rule.classify(&p.op, &entry.op), Kappa::Conflict(_))
                    && compare_clocks(&p.vclock, &entry.vclock) == ClockOrder::Concurrent
            });
            match rule.resolution {
                Resolution::FirstTimestampWins if concurrent_conflict => skip = true,
                _ => {
                    // Replay order already realizes last-writer-wins; apply
                    // directly so causally later writes overwrite.
                    state.registers.insert(key.clone(), *value);
                    state
                        .lww
                        .insert(key.clone(), (entry.op.stamp, entry.op.id.origin.0));
                    applied.push(entry.clone());
                    continue;
                }
            }
        }
        if !skip {
            state.apply_effect(&entry.op);
            applied.push(entry.clone());
        }
    }
    for i in 0..k {
        let a = q_i.vclock.get(i).copied().unwrap_or(0);
        let b = q_j.vclock.get(i).copied().unwrap_or(0);
        state.vclock[i] = a.max(b);
    }
    state.local_clock = q_i.local_clock.max(q_j.local_clock);
    state.status = NodeStatus::Up;
    state
}

/// Per-step convergence snapshot used for recovery measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvergenceSample {
    /// Logical step the snapshot describes (post-transition).
    pub step: u64,
    /// Size of the divergent pair set.
    pub divergent_pairs: usize,
    /// Whether all node commitments share one root.
    pub commitments_agree: bool,
}

impl ConvergenceSample {
    /// Converged: no divergent pairs and commitment agreement.
    pub fn converged(&self) -> bool {
        self.divergent_pairs == 0 && self.commitments_agree
    }
}

/// Recovery measurement result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryOutcome {
    /// Steps from heal to the first converged snapshot (zero when the
    /// system never diverged).
    Converged(u64),
    /// The horizon ended while still divergent.
    NotConverged,
}

/// Smallest `d` such that the snapshot at `heal_step + d` is converged.
pub fn recovery_time(samples: &[ConvergenceSample], heal_step: u64) -> RecoveryOutcome {
    for s in samples.iter().filter(|s| s.step >= heal_step) {
        if s.converged() {
            return RecoveryOutcome::Converged(s.step - heal_step);
        }
    }
    RecoveryOutcome::NotConverged
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;

    fn inc(origin: u32, seq: u64, stamp: u64, key: &str, amount: i64) -> ReplicatedOp {
        ReplicatedOp {
            id: OpId {
                origin: NodeId(origin),
                seq,
            },
            stamp,
            effect: Effect::Inc {
                key: String::from(key),
                amount,
            },
        }
    }

    fn write(origin: u32, seq: u64, stamp: u64, key: &str, value: i64) -> ReplicatedOp {
        ReplicatedOp {
            id: OpId {
                origin: NodeId(origin),
                seq,
            },
            stamp,
            effect: Effect::Write {
                key: String::from(key),
                value,
            },
        }
    }

    #[test]
    fn clock_comparison() {
        assert_eq!(compare_clocks(&[1, 2], &[1, 2]), ClockOrder::Equal);
        assert_eq!(compare_clocks(&[1, 1], &[1, 2]), ClockOrder::Before);
        assert_eq!(compare_clocks(&[2, 2], &[1, 2]), ClockOrder::After);
        assert_eq!(compare_clocks(&[2, 0], &[0, 2]), ClockOrder::Concurrent);
        assert!(clocks_ordered(&[1, 1], &[1, 2]));
        assert!(!clocks_ordered(&[2, 0], &[0, 2]));
    }

    #[test]
    fn disjoint_key_writes_do_not_conflict() {
        let rule = ConflictRule::lww();
        let mut a = ChainedLog::new(NodeId(0));
        a.append(write(0, 0, 1, "x", 1), 1, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(write(1, 0, 2, "y", 2), 2, vec![0, 1]).unwrap();
        assert!(detect_conflicts(&a, &b, &rule).unwrap().is_empty());
    }

    #[test]
    fn concurrent_same_key_writes_conflict_once() {
        let rule = ConflictRule::lww();
        // Two nodes write the same key under a partition: concurrent clocks.
        let mut a = ChainedLog::new(NodeId(0));
        a.append(write(0, 0, 3, "x", 1), 3, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(write(1, 0, 4, "x", 2), 4, vec![0, 1]).unwrap();
        let conflicts = detect_conflicts(&a, &b, &rule).unwrap();
        assert_eq!(conflicts.len(), 1);
        assert_eq!(conflicts[0].0.op.id.origin, NodeId(0));
        assert_eq!(conflicts[0].1.op.id.origin, NodeId(1));
    }

    #[test]
    fn identical_logs_have_no_conflicts() {
        let rule = ConflictRule::lww();
        let mut a = ChainedLog::new(NodeId(0));
        a.append(write(0, 0, 1, "x", 1), 1, vec![1, 0]).unwrap();
        let b = a.clone();
        assert!(detect_conflicts(&a, &b, &rule).unwrap().is_empty());
    }

    #[test]
    fn unverified_log_is_rejected() {
        let rule = ConflictRule::lww();
        let mut a = ChainedLog::new(NodeId(0));
        a.append(write(0, 0, 1, "x", 1), 1, vec![1, 0]).unwrap();
        let mut bad = a.clone();
        bad.entries[0].t = 9;
        assert_eq!(
            detect_conflicts(&bad, &a, &rule).unwrap_err(),
            ReconcileError::UnverifiedLog(NodeId(0))
        );
        assert_eq!(
            merge_order(&a, &bad).unwrap_err(),
            ReconcileError::UnverifiedLog(NodeId(0))
        );
    }

    #[test]
    fn merge_orders_by_timestamp_then_causality_then_signer() {
        let mut a = ChainedLog::new(NodeId(0));
        a.append(inc(0, 0, 1, "c", 1), 1, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(inc(1, 0, 2, "c", 2), 2, vec![0, 1]).unwrap();
        let merged = merge_order(&a, &b).unwrap();
        assert_eq!(merged[0].op.id.origin, NodeId(0));
        assert_eq!(merged[1].op.id.origin, NodeId(1));

        // Equal timestamps, causally ordered: causal order respected even
        // against the signer tie-break.
        let mut c = ChainedLog::new(NodeId(0));
        c.append(inc(0, 0, 5, "c", 1), 5, vec![2, 3]).unwrap();
        let mut d = ChainedLog::new(NodeId(1));
        d.append(inc(1, 0, 5, "c", 2), 5, vec![1, 2]).unwrap();
        let merged = merge_order(&c, &d).unwrap();
        assert_eq!(merged[0].op.id.origin, NodeId(1), "causal predecessor first");

        // Equal timestamps, concurrent: lower signer first.
        let mut e = ChainedLog::new(NodeId(1));
        e.append(inc(1, 0, 5, "c", 1), 5, vec![0, 1]).unwrap();
        let mut f = ChainedLog::new(NodeId(0));
        f.append(inc(0, 0, 5, "c", 2), 5, vec![1, 0]).unwrap();
        let merged = merge_order(&e, &f).unwrap();
        assert_eq!(merged[0].signer_tag, NodeId(0));
    }

    #[test]
    fn merge_deduplicates_shared_history() {
        // Node 1 applied node 0's op later; merge keeps the origin instance.
        let op0 = inc(0, 0, 1, "c", 2);
        let mut a = ChainedLog::new(NodeId(0));
        a.append(op0.clone(), 1, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(op0.clone(), 4, vec![1, 0]).unwrap();
        b.append(inc(1, 0, 5, "c", 3), 5, vec![1, 1]).unwrap();
        let merged = merge_order(&a, &b).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].t, 1, "origin instance kept");
        assert_eq!(merged[0].signer_tag, NodeId(0));
    }

    #[test]
    fn equivocation_surfaces_as_divergent_prefix() {
        let mut a = ChainedLog::new(NodeId(0));
        a.append(write(2, 0, 1, "x", 1), 3, vec![0, 0, 1]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        // Same op id, different payload content.
        b.append(write(2, 0, 1, "x", 9), 4, vec![0, 0, 1]).unwrap();
        assert_eq!(
            merge_order(&a, &b).unwrap_err(),
            ReconcileError::DivergentPrefix {
                op: OpId {
                    origin: NodeId(2),
                    seq: 0
                }
            }
        );
    }

    #[test]
    fn disjoint_increments_converge_to_sum() {
        let base = LocalState::new(2);
        let mut a_state = base.clone();
        let mut b_state = base.clone();
        let op_a = inc(0, 0, 1, "c", 2);
        let op_b = inc(1, 0, 2, "c", 3);
        a_state.apply_effect(&op_a);
        b_state.apply_effect(&op_b);

        let mut a = ChainedLog::new(NodeId(0));
        a.append(op_a, 1, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(op_b, 2, vec![0, 1]).unwrap();

        let merged = merge_order(&a, &b).unwrap();
        // Replay oracle: apply in timestamp order from the base.
        let mut oracle = base.clone();
        for e in &merged {
            oracle.apply_effect(&e.op);
        }
        let rule = ConflictRule::lww();
        let got = reconcile(&a_state, &b_state, &merged, &rule);
        assert_eq!(got.registers, oracle.registers);
        assert_eq!(got.read("c"), 5);

        // Symmetric in the argument order.
        let flipped = reconcile(&b_state, &a_state, &merged, &rule);
        assert_eq!(got.registers, flipped.registers);
        assert_eq!(got.vclock, flipped.vclock);
    }

    #[test]
    fn identical_logs_reconcile_to_identity() {
        let mut log = ChainedLog::new(NodeId(0));
        let op = inc(0, 0, 1, "c", 4);
        log.append(op.clone(), 1, vec![1, 0]).unwrap();
        let mut state = LocalState::new(2);
        state.apply_effect(&op);
        state.vclock = vec![1, 0];

        let merged = merge_order(&log, &log.clone()).unwrap();
        let got = reconcile(&state, &state.clone(), &merged, &ConflictRule::lww());
        assert_eq!(got.registers, state.registers);
    }

    #[test]
    fn concurrent_writes_follow_rules_in_both_replay_orders() {
        // Concurrent writes to the same key with distinct timestamps.
        let w_early = write(0, 0, 3, "x", 10);
        let w_late = write(1, 0, 7, "x", 20);
        let mut a = ChainedLog::new(NodeId(0));
        a.append(w_early.clone(), 3, vec![1, 0]).unwrap();
        let mut b = ChainedLog::new(NodeId(1));
        b.append(w_late.clone(), 7, vec![0, 1]).unwrap();

        let mut sa = LocalState::new(2);
        sa.apply_effect(&w_early);
        let mut sb = LocalState::new(2);
        sb.apply_effect(&w_late);

        let m_ab = merge_order(&a, &b).unwrap();
        let m_ba = merge_order(&b, &a).unwrap();
        assert_eq!(m_ab, m_ba, "merge order is canonical");

        let lww = reconcile(&sa, &sb, &m_ab, &ConflictRule::lww());
        assert_eq!(lww.read("x"), 20, "higher timestamp wins under lww");

        let ftw = reconcile(&sa, &sb, &m_ab, &ConflictRule::ftw());
        assert_eq!(ftw.read("x"), 10, "earliest timestamp sticks under ftw");
    }

    #[test]
    fn recovery_time_semantics() {
        let mk = |step, d, agree| ConvergenceSample {
            step,
            divergent_pairs: d,
            commitments_agree: agree,
        };
        // Never diverged.
        let samples = vec![mk(10, 0, true), mk(11, 0, true)];
        assert_eq!(recovery_time(&samples, 10), RecoveryOutcome::Converged(0));

        // Heals at 10, converges first at 13.
        let samples = vec![
            mk(10, 1, false),
            mk(11, 1, false),
            mk(12, 1, false),
            mk(13, 0, true),
        ];
        assert_eq!(recovery_time(&samples, 10), RecoveryOutcome::Converged(3));

        // Horizon ends divergent.
        let samples = vec![mk(10, 2, false), mk(11, 1, false)];
        assert_eq!(recovery_time(&samples, 10), RecoveryOutcome::NotConverged);
    }
}

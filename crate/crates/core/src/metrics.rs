//! Consistency and availability deviation metrics over operation histories,
//! divergence measures over states, and operation commutativity.
//!
//! The consistency deviation is the minimum, over all legal sequential
//! orders of the completed operations, of the number of real-time-ordered
//! pairs the order inverts; zero means linearizable. Search is exhaustive
//! with pruning and capped at ten completed operations. The availability
//! deviation is the worst latency overshoot beyond the response bound, with
//! pending operations charged their age.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::automaton::{Dsa, Event, GlobalState, LocalState, NodeAutomaton, NodeId, Registers};
use crate::merkle::commit_state;
use crate::reconcile::clocks_ordered;

/// Completed-operation cap for the exhaustive linearization search.
pub const MAX_SEARCH_OPS: usize = 10;

/// What an operation did and what the caller observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    /// Wrote `value` to `key`.
    Write {
        /// Register key.
        key: String,
        /// Written value.
        value: i64,
    },
    /// Read `key` and observed `returned`.
    Read {
        /// Register key.
        key: String,
        /// Observed value.
        returned: i64,
    },
    /// Added `amount` to `key`.
    Inc {
        /// Register key.
        key: String,
        /// Increment amount.
        amount: i64,
    },
}

/// One invocation/response record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationRecord {
    /// Unique id within the history.
    pub id: u64,
    /// Serving node.
    pub node: NodeId,
    /// Operation descriptor with observed result.
    pub kind: OpKind,
    /// Invocation step.
    pub inv: u64,
    /// Response step; pending operations have none.
    pub resp: Option<u64>,
}

impl OperationRecord {
    /// Latency of a completed operation.
    pub fn latency(&self) -> Option<u64> {
        self.resp.map(|r| r.saturating_sub(self.inv))
    }
}

/// Sequential semantics the history is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectSpec {
    /// Keyed last-value register; absent keys read 0.
    Register,
    /// Keyed grow-only counter; reads observe the running sum.
    Counter,
}

impl ObjectSpec {
    /// Applies one operation to sequential state; `false` when the observed
    /// result is illegal at this point.
    fn apply(&self, state: &mut Registers, kind: &OpKind) -> bool {
        match kind {
            OpKind::Write { key, value } => {
                state.insert(key.clone(), *value);
                true
            }
            OpKind::Inc { key, amount } => {
                *state.entry(key.clone()).or_insert(0) += amount;
                true
            }
            OpKind::Read { key, returned } => {
                state.get(key.as_str()).copied().unwrap_or(0) == *returned
            }
        }
    }
}

/// A recorded operation history plus the object semantics it ran against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationHistory {
    /// Records in id order.
    pub records: Vec<OperationRecord>,
    /// Sequential semantics oracle.
    pub object: ObjectSpec,
}

impl OperationHistory {
    /// Empty history over the given object.
    pub fn new(object: ObjectSpec) -> Self {
        OperationHistory {
            records: Vec::new(),
            object,
        }
    }

    /// Completed records only.
    pub fn completed(&self) -> Vec<&OperationRecord> {
        self.records.iter().filter(|r| r.resp.is_some()).collect()
    }
}

/// Metric errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    /// Too many completed operations for exhaustive search.
    TooManyOps {
        /// Completed count in the history.
        count: usize,
        /// Search cap.
        bound: usize,
    },
    /// Hamming distance over differing register key sets.
    KeyMismatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::TooManyOps { count, bound } => {
                write!(f, "{count} completed operations exceed search bound {bound}")
            }
            MetricsError::KeyMismatch => f.write_str("register key sets differ"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// Result of the consistency-deviation search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyDeviation {
    /// Minimum inverted real-time pairs over all legal orders; zero means
    /// linearizable.
    Inversions(u64),
    /// No legal sequential order explains the observed results.
    Unlinearizable,
}

impl ConsistencyDeviation {
    /// Numeric value with `u64::MAX` marking the unlinearizable case.
    pub fn as_count(&self) -> u64 {
        match self {
            ConsistencyDeviation::Inversions(n) => *n,
            ConsistencyDeviation::Unlinearizable => u64::MAX,
        }
    }
}

/// Minimum number of real-time order inversions over all legal sequential
/// orders of the completed operations.
pub fn consistency_deviation(
    history: &OperationHistory,
) -> Result<ConsistencyDeviation, MetricsError> {
    let ops = history.completed();
    if ops.len() > MAX_SEARCH_OPS {
        return Err(MetricsError::TooManyOps {
            count: ops.len(),
            bound: MAX_SEARCH_OPS,
        });
    }
    if ops.is_empty() {
        return Ok(ConsistencyDeviation::Inversions(0));
    }
    let n = ops.len();
    // precedes[i][j]: op i completed before op j began.
    let mut precedes = alloc::vec![alloc::vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                precedes[i][j] = ops[i].resp.unwrap() < ops[j].inv;
            }
        }
    }

    struct Search<'a> {
        ops: &'a [&'a OperationRecord],
        precedes: &'a [Vec<bool>],
        object: ObjectSpec,
        best: Option<u64>,
    }

    impl Search<'_> {
        fn dfs(&mut self, placed: &mut Vec<usize>, remaining: &mut BTreeSet<usize>, state: &Registers, cost: u64) {
            if let Some(best) = self.best {
                if cost >= best {
                    return;
                }
            }
            if remaining.is_empty() {
                self.best = Some(match self.best {
                    Some(b) => b.min(cost),
                    None => cost,
                });
                return;
            }
            let candidates: Vec<usize> = remaining.iter().copied().collect();
            for idx in candidates {
                let mut next_state = state.clone();
                if !self.object.apply(&mut next_state, &self.ops[idx].kind) {
                    continue;
                }
                // Placing idx now inverts every unplaced op that must
                // precede it in real time.
                let added: u64 = remaining
                    .iter()
                    .filter(|&&m| m != idx && self.precedes[m][idx])
                    .count() as u64;
                remaining.remove(&idx);
                placed.push(idx);
                self.dfs(placed, remaining, &next_state, cost + added);
                placed.pop();
                remaining.insert(idx);
            }
        }
    }

    let mut search = Search {
        ops: &ops,
        precedes: &precedes,
        object: history.object,
        best: None,
    };
    let mut remaining: BTreeSet<usize> = (0..n).collect();
    search.dfs(&mut Vec::new(), &mut remaining, &Registers::new(), 0);
    Ok(match search.best {
        Some(n) => ConsistencyDeviation::Inversions(n),
        None => ConsistencyDeviation::Unlinearizable,
    })
}

/// Worst latency overshoot beyond the response bound `tau`.
///
/// Completed operations contribute `resp - inv`; pending operations are
/// charged their age `now - inv`. Zero iff every latency is within bound.
pub fn availability_deviation(history: &OperationHistory, tau: u64, now: u64) -> u64 {
    history
        .records
        .iter()
        .map(|r| {
            let latency = match r.resp {
                Some(resp) => resp.saturating_sub(r.inv),
                None => now.saturating_sub(r.inv),
            };
            latency.saturating_sub(tau)
        })
        .max()
        .unwrap_or(0)
}

/// The synchronization predicate used by default for divergence: vector
/// clocks ordered (one dominates), meaning any register difference is mere
/// staleness.
pub fn vclock_sync(a: &LocalState, b: &LocalState) -> bool {
    clocks_ordered(&a.vclock, &b.vclock)
}

/// Unordered node pairs whose registers differ and that the predicate does
/// not excuse as synchronized. Symmetric and irreflexive by construction.
pub fn divergence_set<F>(state: &GlobalState, sync: F) -> BTreeSet<(NodeId, NodeId)>
where
    F: Fn(&LocalState, &LocalState) -> bool,
{
    let mut pairs = BTreeSet::new();
    let k = state.locals.len();
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (&state.locals[i], &state.locals[j]);
            if a.registers != b.registers && !sync(a, b) {
                pairs.insert((NodeId(i as u32), NodeId(j as u32)));
            }
        }
    }
    pairs
}

/// Divergence distance instantiations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMode {
    /// Count of keys holding unequal values (key sets must match).
    Hamming,
    /// 0 when commitments match, 1 otherwise.
    MerkleIndicator,
}

/// Distance between two local states.
pub fn divergence_distance(
    a: &LocalState,
    b: &LocalState,
    mode: DistanceMode,
) -> Result<u64, MetricsError> {
    match mode {
        DistanceMode::Hamming => {
            if a.registers.len() != b.registers.len()
                || !a.registers.keys().eq(b.registers.keys())
            {
                return Err(MetricsError::KeyMismatch);
            }
            Ok(a.registers
                .iter()
                .filter(|(k, v)| b.registers.get(k.as_str()) != Some(v))
                .count() as u64)
        }
        DistanceMode::MerkleIndicator => {
            Ok(u64::from(commit_state(a).root != commit_state(b).root))
        }
    }
}

/// True iff enacting `f` then `g` reaches the same registers on every node
/// as `g` then `f`. Clock fields are excluded from the comparison. Both
/// orders must be defined; full connectivity is assumed.
pub fn check_commutativity<A: NodeAutomaton>(
    dsa: &Dsa<A>,
    state: &GlobalState,
    f: &Event,
    g: &Event,
) -> Result<bool, crate::automaton::DsaError> {
    let fg = dsa.apply_global(&dsa.apply_global(state, f)?, g)?;
    let gf = dsa.apply_global(&dsa.apply_global(state, g)?, f)?;
    let registers = |s: &GlobalState| -> Vec<Registers> {
        s.locals.iter().map(|l| l.registers.clone()).collect()
    };
    Ok(registers(&fg) == registers(&gf))
}

//! Strategic layer: local information filtrations, feasible actions,
//! arbitration, stage and discounted utilities, reputation, and brute-force
//! equilibrium checking.
//!
//! Nodes are rational agents observing only their own projection of the
//! trace. Each step every node proposes a ranked list of events from its
//! feasible set; a deterministic arbitration rule enacts one admissible
//! proposal or the idle stutter.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use sha2::{Digest as _, Sha256};

use crate::audit::VerdictClass;
use crate::automaton::{enabled, Dsa, Event, GlobalState, LocalState, NodeAutomaton, NodeId};
use crate::partition::Link;
use crate::rational::Rat;

/// A node's local view: its own projection of the trace plus the links it
/// currently believes are severed (from observing its own proposals fail).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtration {
    /// Observing node.
    pub owner: NodeId,
    /// Append-only sequence of observed events.
    pub seen: Vec<Event>,
    /// Links the owner believes are currently cut.
    pub observed_cuts: BTreeSet<Link>,
}

impl Filtration {
    /// Empty view for a node.
    pub fn new(owner: NodeId) -> Self {
        Filtration {
            owner,
            seen: Vec::new(),
            observed_cuts: BTreeSet::new(),
        }
    }

    /// Feeds one enacted event: appended iff it belongs to the owner's
    /// projection and, for a receive, its link was active at delivery.
    /// Partition-induced omission leaves the view unchanged.
    pub fn observe(&mut self, event: &Event, active: &BTreeSet<Link>) {
        if !crate::automaton::project_alphabet(self.owner, event) {
            return;
        }
        if matches!(event, Event::Recv { .. }) && !event.comm_links().is_subset(active) {
            return;
        }
        // Successful communication clears any suspicion on those links.
        for link in event.comm_links() {
            self.observed_cuts.remove(&link);
        }
        self.seen.push(event.clone());
    }

    /// Records that a proposed communication over `link` was refused,
    /// marking it suspect until traffic crosses it again.
    pub fn note_cut(&mut self, link: Link) {
        self.observed_cuts.insert(link);
    }
}

/// Filters a candidate pool down to the actions the node can justify
/// locally: its own projection, enabled in its local state, and not using a
/// link it believes severed. A surviving action may still be globally
/// inadmissible; arbitration has the final word.
pub fn feasible_actions<A: NodeAutomaton>(
    node: NodeId,
    local: &LocalState,
    filtration: &Filtration,
    pool: &[Event],
    automaton: &A,
) -> Vec<Event> {
    pool.iter()
        .filter(|e| crate::automaton::project_alphabet(node, e))
        .filter(|e| enabled(local, e, automaton))
        .filter(|e| e.comm_links().is_disjoint(&filtration.observed_cuts))
        .cloned()
        .collect()
}

/// Deterministic arbitration policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArbitrationPolicy {
    /// The admissible proposal of the smallest proposing node index, taking
    /// the first admissible entry of its ranked list.
    LowestNodeIndex,
    /// A uniform deterministic pick over all admissible proposals, keyed by
    /// (seed, step).
    SeededUniform,
}

/// Selects one admissible event from the per-node ranked proposals, or
/// `None` for the idle transition.
pub fn arbitrate<A: NodeAutomaton>(
    dsa: &Dsa<A>,
    proposals: &[Vec<Event>],
    state: &GlobalState,
    cuts: &BTreeSet<Link>,
    policy: ArbitrationPolicy,
    seed: u64,
) -> Option<Event> {
    let active: BTreeSet<Link> = dsa.topology.difference(cuts).copied().collect();
    match policy {
        ArbitrationPolicy::LowestNodeIndex => {
            for ranked in proposals {
                for event in ranked {
                    if dsa.is_admissible(state, &active, event) {
                        return Some(event.clone());
                    }
                }
            }
            None
        }
        ArbitrationPolicy::SeededUniform => {
            let mut candidates: Vec<Event> = Vec::new();
            for ranked in proposals {
                for event in ranked {
                    if !candidates.contains(event) && dsa.is_admissible(state, &active, event) {
                        candidates.push(event.clone());
                    }
                }
            }
            if candidates.is_empty() {
                return None;
            }
            let mut h = Sha256::new();
            h.update(seed.to_be_bytes());
            h.update(state.step.to_be_bytes());
            let digest: [u8; 32] = h.finalize().into();
            let pick = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
            Some(candidates[(pick % candidates.len() as u64) as usize].clone())
        }
    }
}

/// Economic parameters of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilityParams {
    /// Reward granted per completed operation.
    pub reward_per_op: Rat,
    /// Cost charged per enacted computation event.
    pub comp_cost: Rat,
    /// Cost charged per enacted send.
    pub send_cost: Rat,
    /// Cost charged per enacted receive.
    pub recv_cost: Rat,
    /// Common discount factor, strictly inside (0, 1).
    pub discount: Rat,
}

impl UtilityParams {
    /// Flat parameters with zero costs and the given discount.
    pub fn flat(reward_per_op: Rat, discount: Rat) -> Self {
        UtilityParams {
            reward_per_op,
            comp_cost: Rat::zero(),
            send_cost: Rat::zero(),
            recv_cost: Rat::zero(),
            discount,
        }
    }
}

/// Reward, cost, and penalty assessed to one node at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageRecord {
    /// Rewards earned this step.
    pub reward: Rat,
    /// Costs incurred this step.
    pub cost: Rat,
    /// Penalties assessed this step (non-positive).
    pub penalty: Rat,
}

/// Stage utility: reward minus cost plus penalty, exactly.
pub fn stage_utility(record: &StageRecord) -> Rat {
    record.reward - record.cost + record.penalty
}

/// Game-layer errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameError {
    /// Discount factor outside the open unit interval.
    BadDiscount,
    /// Profile space too large to enumerate.
    TooLarge {
        /// Number of profiles implied by the strategy sets.
        profiles: u64,
    },
}

impl fmt::Display for GameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameError::BadDiscount => f.write_str("discount factor must lie strictly in (0,1)"),
            GameError::TooLarge { profiles } => {
                write!(f, "{profiles} profiles exceed the enumeration bound")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GameError {}

/// Discounted sum of a finite stage-utility sequence.
///
/// Computed in arbitrary precision since the discount powers outgrow
/// machine-word rationals quickly.
pub fn discounted_utility(stage_values: &[Rat], discount: Rat) -> Result<BigRational, GameError> {
    if discount <= Rat::zero() || discount >= Rat::one() {
        return Err(GameError::BadDiscount);
    }
    let delta = big(&discount);
    // Horner evaluation from the tail.
    let mut acc = BigRational::zero();
    for v in stage_values.iter().rev() {
        acc = big(v) + &delta * acc;
    }
    Ok(acc)
}

fn big(r: &Rat) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Local reputation scores: `rows[j][i]` is the reputation node `j` assigns
/// node `i`. Entries stay in `[0, 1]`; self-reputation is pinned at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReputationMatrix {
    /// Reputation rows, one per observer.
    pub rows: Vec<Vec<Rat>>,
    /// Cooperation threshold: below it the observer refuses the subject.
    pub threshold: Rat,
    /// Smoothing weight of the newest verdict.
    pub alpha: Rat,
}

impl ReputationMatrix {
    /// Fully-trusting initial matrix for `k` nodes.
    pub fn new(k: usize, threshold: Rat, alpha: Rat) -> Self {
        ReputationMatrix {
            rows: alloc::vec![alloc::vec![Rat::one(); k]; k],
            threshold,
            alpha,
        }
    }

    /// Reputation `observer` assigns `subject`.
    pub fn score(&self, observer: NodeId, subject: NodeId) -> Rat {
        self.rows[observer.idx()][subject.idx()]
    }

    /// Whether `observer` still cooperates with `subject`.
    pub fn trusts(&self, observer: NodeId, subject: NodeId) -> bool {
        self.score(observer, subject) >= self.threshold
    }
}

/// Verdict score: compliant 1, minor 1/2, violation 0.
pub fn verdict_score(verdict: VerdictClass) -> Rat {
    match verdict {
        VerdictClass::Compliant => Rat::one(),
        VerdictClass::MinorDelay => Rat::new(1, 2),
        VerdictClass::ConsistencyViolation => Rat::zero(),
    }
}

/// Exponential-smoothing reputation update from an audit verdict:
/// `r' = (1 - alpha) * r + alpha * score`, clamped into `[0, 1]`.
///
/// Scores whose denominators outgrow one million are snapped to that grid;
/// repeated smoothing otherwise compounds denominators without bound.
pub fn update_reputation(
    matrix: &ReputationMatrix,
    observer: NodeId,
    subject: NodeId,
    verdict: VerdictClass,
) -> ReputationMatrix {
    debug_assert_ne!(observer, subject, "observers do not score themselves");
    const GRID: i64 = 1_000_000;
    let mut next = matrix.clone();
    let old = matrix.score(observer, subject);
    let updated = (Rat::one() - matrix.alpha) * old + matrix.alpha * verdict_score(verdict);
    let mut clamped = updated.min(Rat::one()).max(Rat::zero());
    if *clamped.denom() > GRID {
        clamped = Rat::new((clamped * Rat::from_integer(GRID)).round().to_integer(), GRID);
    }
    next.rows[observer.idx()][subject.idx()] = clamped;
    next
}

/// Outcome of a best-response sweep over a candidate profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EquilibriumCheck {
    /// No node gains by unilateral deviation.
    Equilibrium,
    /// A witnessing profitable deviation.
    Deviation {
        /// Deviating node.
        node: usize,
        /// Strategy index it profits by switching to.
        strategy: usize,
        /// Payoff gain over the candidate profile.
        gain: Rat,
    },
}

/// Enumeration bound for [`best_response_check`].
pub const MAX_PROFILES: u64 = 1_000_000;

/// Exhaustive unilateral-deviation check of a candidate profile.
///
/// `strategy_counts[i]` is the size of node `i`'s finite strategy set;
/// `payoff` maps a full profile to per-node payoffs. Returns the first
/// profitable deviation in (node, strategy) order, or `Equilibrium`.
pub fn best_response_check<F>(
    strategy_counts: &[usize],
    payoff: F,
    profile: &[usize],
) -> Result<EquilibriumCheck, GameError>
where
    F: Fn(&[usize]) -> Vec<Rat>,
{
    let mut profiles: u64 = 1;
    for &c in strategy_counts {
        profiles = profiles.saturating_mul(c.max(1) as u64);
        if profiles > MAX_PROFILES {
            return Err(GameError::TooLarge { profiles });
        }
    }
    let base = payoff(profile);
    for (node, &count) in strategy_counts.iter().enumerate() {
        for strategy in 0..count {
            if strategy == profile[node] {
                continue;
            }
            let mut deviated = profile.to_vec();
            deviated[node] = strategy;
            let outcome = payoff(&deviated);
            if outcome[node] > base[node] {
                return Ok(EquilibriumCheck::Deviation {
                    node,
                    strategy,
                    gain: outcome[node] - base[node],
                });
            }
        }
    }
    Ok(EquilibriumCheck::Equilibrium)
}

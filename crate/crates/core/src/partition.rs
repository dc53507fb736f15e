//! Adversarial partition schedules: representation, constraint validation,
//! and seeded synthetic generation.
//!
//! A schedule assigns each logical step a set of severed directed links.
//! The adversary is a function of time only and must satisfy the declared
//! constraint predicate: bounded link disruption, minimum component size,
//! bounded partition duration, and bounded partition frequency.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::automaton::NodeId;

/// A directed communication link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Link {
    /// Transmitting endpoint.
    pub from: NodeId,
    /// Receiving endpoint.
    pub to: NodeId,
}

impl Link {
    /// Convenience constructor from raw indices.
    pub fn new(from: u32, to: u32) -> Self {
        Link {
            from: NodeId(from),
            to: NodeId(to),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Full directed mesh over `k` nodes.
pub fn full_mesh(k: u32) -> BTreeSet<Link> {
    let mut links = BTreeSet::new();
    for i in 0..k {
        for j in 0..k {
            if i != j {
                links.insert(Link::new(i, j));
            }
        }
    }
    links
}

/// Time-indexed sets of severed links over a finite horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSchedule {
    /// Number of nodes in the system.
    pub node_count: u32,
    /// All potential links; every cut must be drawn from here.
    pub all_links: BTreeSet<Link>,
    /// Horizon: the schedule is defined on steps `[0, horizon)`.
    pub horizon: u64,
    /// Severed links per step; steps absent from the map have no cuts.
    pub cuts: BTreeMap<u64, BTreeSet<Link>>,
}

impl PartitionSchedule {
    /// A schedule with no cuts anywhere.
    pub fn quiet(node_count: u32, horizon: u64) -> Self {
        PartitionSchedule {
            node_count,
            all_links: full_mesh(node_count),
            horizon,
            cuts: BTreeMap::new(),
        }
    }

    /// Severed links at `t` (empty when none are scheduled).
    pub fn cuts_at(&self, t: u64) -> BTreeSet<Link> {
        self.cuts.get(&t).cloned().unwrap_or_default()
    }

    /// The last step with a non-empty cut set, if any.
    pub fn last_disrupted_step(&self) -> Option<u64> {
        self.cuts
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(t, _)| *t)
            .next_back()
    }

    /// First step after which the network stays healed for the remainder of
    /// the horizon. Zero for a schedule with no cuts.
    pub fn heal_step(&self) -> u64 {
        self.last_disrupted_step().map(|t| t + 1).unwrap_or(0)
    }
}

/// Bounds on the adversary's power. Absent bounds are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryConstraints {
    /// Maximum number of simultaneously severed links.
    pub max_links_cut: Option<usize>,
    /// Minimum connected-component size under every cut set.
    pub min_component_size: Option<usize>,
    /// Maximum length of a maximal run of disrupted steps.
    pub max_partition_duration: Option<u64>,
    /// At most `limit` disrupted steps within any window of `window` steps.
    pub max_partition_frequency: Option<FrequencyBound>,
}

/// Frequency constraint: a cap on disrupted steps per sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrequencyBound {
    /// Maximum disrupted steps per window.
    pub limit: u64,
    /// Window length in steps.
    pub window: u64,
}

/// Which constraint a schedule violates at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRule {
    /// `|P_t|` exceeded the link-cut bound.
    LinkBudget,
    /// Some connected component fell below the minimum size.
    ComponentSize,
    /// A disrupted run exceeded the duration bound.
    Duration,
    /// A window contained too many disrupted steps.
    Frequency,
}

impl fmt::Display for ConstraintRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintRule::LinkBudget => "link-budget",
            ConstraintRule::ComponentSize => "component-size",
            ConstraintRule::Duration => "duration",
            ConstraintRule::Frequency => "frequency",
        };
        f.write_str(s)
    }
}

/// One constraint violation: the step where it holds and the broken rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    /// Offending step.
    pub step: u64,
    /// Broken rule.
    pub rule: ConstraintRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} violates {}", self.step, self.rule)
    }
}

/// Errors from topology arithmetic and schedule generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionError {
    /// A cut references a link outside the topology.
    CutNotInTopology(Link),
    /// Generator parameters cannot satisfy their embedded constraints.
    InfeasibleParams(&'static str),
}

impl fmt::Display for PartitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionError::CutNotInTopology(l) => {
                write!(f, "cut link {l} is not in the topology")
            }
            PartitionError::InfeasibleParams(why) => {
                write!(f, "infeasible schedule parameters: {why}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PartitionError {}

/// Active links remaining after removing the cuts.
pub fn effective_topology(
    all_links: &BTreeSet<Link>,
    cuts: &BTreeSet<Link>,
) -> Result<BTreeSet<Link>, PartitionError> {
    if let Some(bad) = cuts.iter().find(|l| !all_links.contains(l)) {
        return Err(PartitionError::CutNotInTopology(*bad));
    }
    Ok(all_links.difference(cuts).copied().collect())
}

/// Connected components of the nodes under the symmetric-transitive closure
/// of the active links.
pub fn components(nodes: &BTreeSet<NodeId>, active: &BTreeSet<Link>) -> Vec<BTreeSet<NodeId>> {
    let mut neighbours: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for link in active {
        if nodes.contains(&link.from) && nodes.contains(&link.to) {
            neighbours.entry(link.from).or_default().insert(link.to);
            neighbours.entry(link.to).or_default().insert(link.from);
        }
    }
    let mut unseen: BTreeSet<NodeId> = nodes.clone();
    let mut blocks = Vec::new();
    while let Some(&start) = unseen.iter().next() {
        let mut block = BTreeSet::new();
        let mut frontier = alloc::vec![start];
        unseen.remove(&start);
        block.insert(start);
        while let Some(n) = frontier.pop() {
            if let Some(adj) = neighbours.get(&n) {
                for &m in adj {
                    if unseen.remove(&m) {
                        block.insert(m);
                        frontier.push(m);
                    }
                }
            }
        }
        blocks.push(block);
    }
    blocks
}

/// Checks a schedule against the constraint predicate. An empty result means
/// the schedule is admissible; each violation names its step and rule.
pub fn validate_schedule(
    schedule: &PartitionSchedule,
    constraints: &AdversaryConstraints,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let nodes: BTreeSet<NodeId> = (0..schedule.node_count).map(NodeId).collect();

    let mut disrupted = alloc::vec![false; schedule.horizon as usize];
    for t in 0..schedule.horizon {
        let cuts = schedule.cuts_at(t);
        if cuts.is_empty() {
            continue;
        }
        disrupted[t as usize] = true;
        if let Some(bound) = constraints.max_links_cut {
            if cuts.len() > bound {
                violations.push(Violation {
                    step: t,
                    rule: ConstraintRule::LinkBudget,
                });
            }
        }
        if let Some(min_size) = constraints.min_component_size {
            let active = schedule
                .all_links
                .difference(&cuts)
                .copied()
                .collect::<BTreeSet<_>>();
            if components(&nodes, &active)
                .iter()
                .any(|b| b.len() < min_size)
            {
                violations.push(Violation {
                    step: t,
                    rule: ConstraintRule::ComponentSize,
                });
            }
        }
    }

    if let Some(d_max) = constraints.max_partition_duration {
        let mut run = 0u64;
        for (t, d) in disrupted.iter().enumerate() {
            if *d {
                run += 1;
                if run == d_max + 1 {
                    // Flag each over-long run once, at the step it first
                    // exceeds the bound.
                    violations.push(Violation {
                        step: t as u64,
                        rule: ConstraintRule::Duration,
                    });
                }
            } else {
                run = 0;
            }
        }
    }

    if let Some(freq) = constraints.max_partition_frequency {
        let window = freq.window.max(1) as usize;
        let mut count = 0u64;
        for t in 0..disrupted.len() {
            count += u64::from(disrupted[t]);
            if t >= window {
                count -= u64::from(disrupted[t - window]);
            }
            // Flag the disrupted steps that push a window over its budget.
            if disrupted[t] && count > freq.limit {
                violations.push(Violation {
                    step: t as u64,
                    rule: ConstraintRule::Frequency,
                });
            }
        }
    }

    violations.sort_by_key(|v| (v.step, v.rule as u8));
    violations
}

/// Parameters for the synthetic schedule generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleKind {
    /// A fixed cut set held on `[from, to)`.
    StaticCut {
        /// First disrupted step.
        from: u64,
        /// First healed step.
        to: u64,
        /// Links severed throughout the window.
        cut: BTreeSet<Link>,
    },
    /// The cut set applied during the first half of every period.
    Oscillating {
        /// Period length in steps; the cut holds for `ceil(period/2)` steps.
        period: u64,
        /// Links severed while the oscillation is on.
        cut: BTreeSet<Link>,
        /// Last step (exclusive) at which the oscillation may be on.
        until: u64,
    },
    /// Seeded random bipartitions of the node set, re-drawn per episode.
    DynamicSplit {
        /// Steps between episode starts.
        every: u64,
        /// Disrupted steps per episode.
        duration: u64,
        /// Minimum block size of each side of the split.
        min_block: usize,
        /// First step (inclusive) after which no episode starts.
        quiesce_after: u64,
    },
}

/// Generates a schedule as a deterministic function of kind, parameters and
/// seed. The output always passes [`validate_schedule`] for the constraints
/// implied by its parameters.
pub fn generate_schedule(
    kind: &ScheduleKind,
    node_count: u32,
    horizon: u64,
    seed: u64,
) -> Result<PartitionSchedule, PartitionError> {
    if node_count < 2 {
        return Err(PartitionError::InfeasibleParams("need at least two nodes"));
    }
    let all_links = full_mesh(node_count);
    let mut cuts: BTreeMap<u64, BTreeSet<Link>> = BTreeMap::new();
    match kind {
        ScheduleKind::StaticCut { from, to, cut } => {
            for l in cut {
                if !all_links.contains(l) {
                    return Err(PartitionError::CutNotInTopology(*l));
                }
            }
            for t in *from..(*to).min(horizon) {
                cuts.insert(t, cut.clone());
            }
        }
        ScheduleKind::Oscillating { period, cut, until } => {
            if *period == 0 {
                return Err(PartitionError::InfeasibleParams("zero period"));
            }
            for l in cut {
                if !all_links.contains(l) {
                    return Err(PartitionError::CutNotInTopology(*l));
                }
            }
            let on_len = period.div_ceil(2);
            for t in 0..(*until).min(horizon) {
                if t % period < on_len {
                    cuts.insert(t, cut.clone());
                }
            }
        }
        ScheduleKind::DynamicSplit {
            every,
            duration,
            min_block,
            quiesce_after,
        } => {
            if *every == 0 {
                return Err(PartitionError::InfeasibleParams("zero episode spacing"));
            }
            if *duration >= *every {
                return Err(PartitionError::InfeasibleParams(
                    "episodes must heal before the next one starts",
                ));
            }
            let k = node_count as usize;
            if min_block.saturating_mul(2) > k {
                return Err(PartitionError::InfeasibleParams(
                    "minimum block size exceeds half the node count",
                ));
            }
            let min_block = (*min_block).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut start = *every;
            while start < horizon.min(*quiesce_after) {
                // Draw a bipartition with both blocks >= min_block.
                let left_size =
                    min_block + (rng.next_u64() as usize) % (k - 2 * min_block + 1);
                let mut ids: Vec<u32> = (0..node_count).collect();
                // Fisher-Yates with the seeded stream.
                for i in (1..ids.len()).rev() {
                    let j = (rng.next_u64() as usize) % (i + 1);
                    ids.swap(i, j);
                }
                let left: BTreeSet<u32> = ids[..left_size].iter().copied().collect();
                let mut cut = BTreeSet::new();
                for l in &all_links {
                    if left.contains(&l.from.0) != left.contains(&l.to.0) {
                        cut.insert(*l);
                    }
                }
                for t in start..(start + duration).min(horizon) {
                    cuts.insert(t, cut.clone());
                }
                start += every;
            }
        }
    }
    Ok(PartitionSchedule {
        node_count,
        all_links,
        horizon,
        cuts,
    })
}

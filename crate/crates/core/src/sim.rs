//! Simulation harness: scenario configuration, the per-step loop
//! (propose, arbitrate, step, audit, log), reconciliation sweeps after the
//! final heal, metric computation, and trace emission.
//!
//! A run is a pure function of the scenario value and seed. Every step
//! enacts exactly one action: a strategy-proposed event chosen by
//! arbitration, a scheduled fault, a reconciliation exchange between one
//! node pair, or the idle stutter. Traces serialize deterministically, so
//! equal scenarios produce byte-identical metric streams.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use num_traits::Zero;
use sha2::{Digest as _, Sha256};

use crate::audit::{
    apply_penalty, audit, AuditError, AuditInputs, AuditVerdict, EscrowAccount, PenaltyParams,
};
use crate::automaton::{
    BuiltinAutomaton, Dsa, Effect, Event, EventKind, GlobalState, NodeId, OpId, Payload,
    ReplicatedOp,
};
use crate::game::{
    arbitrate, best_response_check, feasible_actions, update_reputation, ArbitrationPolicy,
    EquilibriumCheck, Filtration, GameError, ReputationMatrix, StageRecord, UtilityParams,
};
use crate::log::{ChainedLog, LogError};
use crate::merkle::{agreement, commit_state, Commitment};
use crate::metrics::{
    availability_deviation, consistency_deviation, divergence_set, vclock_sync,
    ConsistencyDeviation, MetricsError, ObjectSpec, OpKind, OperationHistory, OperationRecord,
};
use crate::partition::{
    generate_schedule, validate_schedule, AdversaryConstraints, Link, PartitionError,
    PartitionSchedule, ScheduleKind, Violation,
};
use crate::rational::{format_rat, Rat};
use crate::reconcile::{
    merge_order, reconcile, recovery_time, ConflictRule, ConvergenceSample, ReconcileError,
    RecoveryOutcome,
};

/// Built-in strategies, referenced by name in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// Serves promptly, replicates, receives oldest-first.
    Honest,
    /// Honest, but holds every response for a fixed number of steps.
    Lazy {
        /// Steps each response is withheld.
        delay: u64,
    },
    /// Honest behaviour with corrupted reported commitments.
    Equivocator,
    /// Serves only when the audit fine outweighs the net cost of serving.
    Withholder,
    /// Never serves; the unconditional deviation used in bundled games.
    Defector,
}

impl StrategyKind {
    /// Scenario-file name.
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Honest => "honest",
            StrategyKind::Lazy { .. } => "lazy",
            StrategyKind::Equivocator => "equivocator",
            StrategyKind::Withholder => "withholder",
            StrategyKind::Defector => "defector",
        }
    }
}

/// One client operation in the scenario workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadOp {
    /// Serving node.
    pub node: NodeId,
    /// Step at which the request arrives (its invocation time).
    pub step: u64,
    /// Requested action.
    pub action: WorkloadAction,
}

/// Client-visible actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadAction {
    /// Write `value` to `key`.
    Write {
        /// Register key.
        key: String,
        /// Value to write.
        value: i64,
    },
    /// Add `amount` to `key`.
    Inc {
        /// Register key.
        key: String,
        /// Amount, positive.
        amount: i64,
    },
    /// Read `key`.
    Read {
        /// Register key.
        key: String,
    },
}

/// A scheduled fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultSpec {
    /// Step at which the fault fires.
    pub step: u64,
    /// Crash or recovery, with its subject.
    pub fault: FaultKind,
}

/// Fault kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    /// Crash the node.
    Crash(NodeId),
    /// Recover the node.
    Recover(NodeId),
}

/// Partition schedule specification: explicit cut map or seeded generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleSpec {
    /// A fully explicit schedule.
    Explicit(PartitionSchedule),
    /// Generated from a kind; the run seed feeds the generator.
    Generated(ScheduleKind),
}

/// A bundled finite deviation game evaluated by simulating each profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviationGame {
    /// The common per-node strategy space.
    pub strategy_space: Vec<StrategyKind>,
    /// Candidate profile to check, one strategy index per node.
    pub profile: Vec<usize>,
}

/// Complete description of one simulation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    /// Scenario name, echoed in traces.
    pub name: String,
    /// Default seed; sweeps override it.
    pub seed: u64,
    /// Number of steps.
    pub horizon: u64,
    /// Number of nodes.
    pub node_count: u32,
    /// Object type every node replicates.
    pub automaton: BuiltinAutomaton,
    /// Per-node strategies.
    pub strategies: Vec<StrategyKind>,
    /// Per-node economic parameters.
    pub node_params: Vec<UtilityParams>,
    /// Audit and penalty mechanism parameters.
    pub penalty: PenaltyParams,
    /// Escrow each node posts.
    pub escrow_deposit: Rat,
    /// Consistency tolerance.
    pub theta_c: u64,
    /// Delivery bound for in-flight messages.
    pub delta_max: u64,
    /// Arbitration policy.
    pub arbitration: ArbitrationPolicy,
    /// Partition schedule.
    pub schedule: ScheduleSpec,
    /// Adversary constraint envelope the schedule must satisfy.
    pub constraints: AdversaryConstraints,
    /// Client workload.
    pub workload: Vec<WorkloadOp>,
    /// Scheduled faults.
    pub faults: Vec<FaultSpec>,
    /// Conflict rule for reconciliation replay.
    pub reconcile_rule: ConflictRule,
    /// Reputation threshold below which nodes refuse cooperation.
    pub reputation_threshold: Rat,
    /// Reputation smoothing weight.
    pub reputation_alpha: Rat,
    /// Optional bundled deviation game for the footer equilibrium verdict.
    pub deviation_game: Option<DeviationGame>,
}

impl Scenario {
    /// The sequential object spec matching the automaton.
    pub fn object_spec(&self) -> ObjectSpec {
        match self.automaton {
            BuiltinAutomaton::Counter => ObjectSpec::Counter,
            BuiltinAutomaton::Register => ObjectSpec::Register,
        }
    }

    /// Materializes the partition schedule for a given seed.
    pub fn resolved_schedule(&self, seed: u64) -> Result<PartitionSchedule, PartitionError> {
        match &self.schedule {
            ScheduleSpec::Explicit(s) => Ok(s.clone()),
            ScheduleSpec::Generated(kind) => {
                generate_schedule(kind, self.node_count, self.horizon, seed)
            }
        }
    }

    /// Structural validation plus the adversary constraint check.
    pub fn validate(&self) -> Result<(), SimError> {
        let k = self.node_count as usize;
        if self.node_count < 2 {
            return Err(SimError::BadScenario(String::from(
                "node_count must be at least 2",
            )));
        }
        if self.horizon == 0 {
            return Err(SimError::BadScenario(String::from("horizon must be >= 1")));
        }
        if self.strategies.len() != k || self.node_params.len() != k {
            return Err(SimError::BadScenario(String::from(
                "per-node strategy and parameter lists must cover every node",
            )));
        }
        for p in &self.node_params {
            if p.discount <= Rat::zero() || p.discount >= Rat::from_integer(1) {
                return Err(SimError::BadScenario(String::from(
                    "discount must lie strictly in (0,1)",
                )));
            }
        }
        if self.penalty.audit_period == 0 {
            return Err(SimError::BadScenario(String::from(
                "audit_period must be >= 1",
            )));
        }
        for (i, op) in self.workload.iter().enumerate() {
            if op.node.idx() >= k {
                return Err(SimError::BadScenario(format!(
                    "workload[{i}] names unknown node {}",
                    op.node
                )));
            }
            if op.step >= self.horizon {
                return Err(SimError::BadScenario(format!(
                    "workload[{i}] arrives past the horizon"
                )));
            }
            let compatible = match (&op.action, self.automaton) {
                (WorkloadAction::Inc { amount, .. }, BuiltinAutomaton::Counter) => *amount > 0,
                (WorkloadAction::Write { .. }, BuiltinAutomaton::Register) => true,
                (WorkloadAction::Read { .. }, _) => true,
                _ => false,
            };
            if !compatible {
                return Err(SimError::BadScenario(format!(
                    "workload[{i}] does not fit the {:?} automaton",
                    self.automaton
                )));
            }
        }
        let mut fault_steps = BTreeSet::new();
        for f in &self.faults {
            let node = match f.fault {
                FaultKind::Crash(n) | FaultKind::Recover(n) => n,
            };
            if node.idx() >= k {
                return Err(SimError::BadScenario(format!(
                    "fault at step {} names unknown node {node}",
                    f.step
                )));
            }
            if !fault_steps.insert(f.step) {
                return Err(SimError::BadScenario(format!(
                    "multiple faults scheduled at step {}",
                    f.step
                )));
            }
        }
        if let Some(game) = &self.deviation_game {
            if game.strategy_space.is_empty() {
                return Err(SimError::BadScenario(String::from(
                    "deviation game needs a non-empty strategy space",
                )));
            }
            if game.profile.len() != k
                || game.profile.iter().any(|&s| s >= game.strategy_space.len())
            {
                return Err(SimError::BadScenario(String::from(
                    "deviation game profile must name a strategy per node",
                )));
            }
        }
        let schedule = self.resolved_schedule(self.seed)?;
        let violations = validate_schedule(&schedule, &self.constraints);
        if !violations.is_empty() {
            return Err(SimError::ConstraintViolations(violations));
        }
        Ok(())
    }
}

/// Errors from scenario validation and execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    /// Structural scenario problem.
    BadScenario(String),
    /// The schedule fails the adversary constraints.
    ConstraintViolations(Vec<Violation>),
    /// Schedule generation failed.
    Partition(PartitionError),
    /// Reconciliation failed (equivocation or broken log).
    Reconcile(ReconcileError),
    /// Log bookkeeping failed.
    Log(LogError),
    /// Audit failed.
    Audit(AuditError),
    /// Game evaluation failed.
    Game(GameError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::BadScenario(msg) => write!(f, "invalid scenario: {msg}"),
            SimError::ConstraintViolations(v) => {
                write!(f, "schedule violates adversary constraints at {} steps", v.len())
            }
            SimError::Partition(e) => write!(f, "{e}"),
            SimError::Reconcile(e) => write!(f, "{e}"),
            SimError::Log(e) => write!(f, "{e}"),
            SimError::Audit(e) => write!(f, "{e}"),
            SimError::Game(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

impl From<PartitionError> for SimError {
    fn from(e: PartitionError) -> Self {
        SimError::Partition(e)
    }
}
impl From<ReconcileError> for SimError {
    fn from(e: ReconcileError) -> Self {
        SimError::Reconcile(e)
    }
}
impl From<LogError> for SimError {
    fn from(e: LogError) -> Self {
        SimError::Log(e)
    }
}
impl From<AuditError> for SimError {
    fn from(e: AuditError) -> Self {
        SimError::Audit(e)
    }
}
impl From<GameError> for SimError {
    fn from(e: GameError) -> Self {
        SimError::Game(e)
    }
}

/// The action a step enacted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepAction {
    /// A strategy-proposed or fault event.
    Event(Event),
    /// Idle stutter: nothing admissible surfaced.
    Idle,
    /// Reconciliation exchange between two nodes.
    Reconcile(NodeId, NodeId),
}

impl fmt::Display for StepAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepAction::Event(e) => write!(f, "{e}"),
            StepAction::Idle => f.write_str("idle"),
            StepAction::Reconcile(a, b) => write!(f, "reconcile {a}<->{b}"),
        }
    }
}

/// One step of the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    /// Step index.
    pub step: u64,
    /// Enacted action.
    pub action: StepAction,
    /// Links cut at this step.
    pub cuts: BTreeSet<Link>,
    /// True per-node commitments after the step.
    pub commitments: Vec<Commitment>,
    /// Commitments as reported by the nodes (equivocators lie here).
    pub reported: Vec<Commitment>,
    /// Per-node stage utilities for this step.
    pub stage_utilities: Vec<Rat>,
    /// Per-node cumulative forfeited escrow after this step.
    pub cumulative_forfeited: Vec<Rat>,
    /// Size of the divergent pair set after the step.
    pub divergent_pairs: usize,
    /// Availability deviation over the history so far.
    pub epsilon_a_to_date: u64,
    /// Audit verdicts issued at this step.
    pub verdicts: Vec<AuditVerdict>,
}

/// Consistency deviation as reported in trace footers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEpsilonC {
    /// Minimal inversion count.
    Inversions(u64),
    /// No legal order exists.
    Unlinearizable,
    /// History too large for the exhaustive search.
    SearchBoundExceeded,
}

impl fmt::Display for TraceEpsilonC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEpsilonC::Inversions(n) => write!(f, "{n}"),
            TraceEpsilonC::Unlinearizable => f.write_str("unlinearizable"),
            TraceEpsilonC::SearchBoundExceeded => f.write_str("search-bound-exceeded"),
        }
    }
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footer {
    /// Consistency deviation of the recorded history.
    pub epsilon_c: TraceEpsilonC,
    /// Availability deviation at the horizon.
    pub epsilon_a: u64,
    /// Steps from heal to convergence.
    pub recovery: RecoveryOutcome,
    /// First step with the network healed for good.
    pub heal_step: u64,
    /// Per-node cumulative (undiscounted) utilities.
    pub cumulative_utilities: Vec<Rat>,
    /// Per-node total forfeited escrow.
    pub forfeited: Vec<Rat>,
    /// Whether all final commitments agree.
    pub commitments_agree: bool,
    /// Whether the run stayed within its (theta_c, theta_a) envelope.
    pub within_envelope: bool,
    /// Equilibrium verdict of the bundled deviation game, when declared.
    pub equilibrium: Option<EquilibriumCheck>,
}

/// Complete run record: per-step metrics plus the footer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunTrace {
    /// Scenario name.
    pub scenario_name: String,
    /// Seed the run used.
    pub seed: u64,
    /// Node count.
    pub node_count: u32,
    /// Horizon.
    pub horizon: u64,
    /// Consistency tolerance.
    pub theta_c: u64,
    /// Availability tolerance.
    pub theta_a: u64,
    /// Response bound.
    pub tau: u64,
    /// Per-step records, one per horizon step.
    pub steps: Vec<StepRecord>,
    /// The recorded operation history.
    pub history: OperationHistory,
    /// Final per-node logs.
    pub final_logs: Vec<ChainedLog>,
    /// Summary.
    pub footer: Footer,
}

impl RunTrace {
    /// Convergence samples feeding [`recovery_time`].
    pub fn convergence_samples(&self) -> Vec<ConvergenceSample> {
        self.steps
            .iter()
            .map(|s| ConvergenceSample {
                step: s.step,
                divergent_pairs: s.divergent_pairs,
                commitments_agree: agreement(&s.commitments),
            })
            .collect()
    }

    /// SHA-256 of the serialized `lines` stream; the reproducibility handle.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(emit_metrics(self, MetricFormat::Lines).as_bytes()).into()
    }
}

// ---------------------------------------------------------------------------
// Candidate pools and strategies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum CandidateKind {
    Deliver { send_time: u64 },
    Serve { record_id: u64, issued: u64 },
    Replicate { seq: u64 },
}

#[derive(Debug, Clone)]
struct Candidate {
    event: Event,
    kind: CandidateKind,
}

struct RunState {
    dsa: Dsa<BuiltinAutomaton>,
    global: GlobalState,
    logs: Vec<ChainedLog>,
    filtrations: Vec<Filtration>,
    reputation: ReputationMatrix,
    escrows: Vec<EscrowAccount>,
    records: Vec<OperationRecord>,
    next_seq: Vec<u64>,
    /// (op, peer) pairs already replicated or subsumed by reconciliation.
    replicated: BTreeSet<(OpId, NodeId)>,
    cumulative_utilities: Vec<Rat>,
    reconcile_cursor: usize,
}

fn workload_effect(action: &WorkloadAction) -> Option<Effect> {
    match action {
        WorkloadAction::Write { key, value } => Some(Effect::Write {
            key: key.clone(),
            value: *value,
        }),
        WorkloadAction::Inc { key, amount } => Some(Effect::Inc {
            key: key.clone(),
            amount: *amount,
        }),
        WorkloadAction::Read { .. } => None,
    }
}

fn build_candidates(rs: &RunState, node: NodeId, step: u64, scenario: &Scenario) -> Vec<Candidate> {
    let mut out = Vec::new();
    // Deliverable messages addressed to this node, skipping operations the
    // node already holds (pre-reconciled duplicates expire unreceived).
    for m in rs.global.in_flight.iter().filter(|m| m.to == node) {
        if let Payload::Replicate(op) = &m.payload {
            if rs.logs[node.idx()].contains_op(op.id) {
                continue;
            }
        }
        out.push(Candidate {
            event: Event::Recv {
                from: m.from,
                to: m.to,
                payload: m.payload.clone(),
                attached_vclock: m.attached_vclock.clone(),
                send_time: m.send_time,
            },
            kind: CandidateKind::Deliver {
                send_time: m.send_time,
            },
        });
    }
    // Unserved client operations that have arrived.
    for (record_id, (op, record)) in scenario.workload.iter().zip(&rs.records).enumerate() {
        if op.node != node || op.step > step || record.resp.is_some() {
            continue;
        }
        let payload = match workload_effect(&op.action) {
            Some(effect) => Payload::Apply(ReplicatedOp {
                id: OpId {
                    origin: node,
                    seq: rs.next_seq[node.idx()],
                },
                stamp: step,
                effect,
            }),
            None => match &op.action {
                WorkloadAction::Read { key } => Payload::Read { key: key.clone() },
                _ => unreachable!("non-read actions have effects"),
            },
        };
        out.push(Candidate {
            event: Event::Comp {
                actor: node,
                payload,
            },
            kind: CandidateKind::Serve {
                record_id: record_id as u64,
                issued: op.step,
            },
        });
    }
    // Replication duties: own logged operations not yet sent to each peer.
    for entry in &rs.logs[node.idx()].entries {
        if entry.op.id.origin != node {
            continue;
        }
        for peer in 0..rs.global.node_count() as u32 {
            let peer = NodeId(peer);
            if peer == node || rs.replicated.contains(&(entry.op.id, peer)) {
                continue;
            }
            out.push(Candidate {
                event: Event::Send {
                    from: node,
                    to: peer,
                    payload: Payload::Replicate(entry.op.clone()),
                },
                kind: CandidateKind::Replicate {
                    seq: entry.op.id.seq,
                },
            });
        }
    }
    out
}

/// Ranks a node's feasible candidates according to its strategy. Delivery
/// first (oldest sends first), then serving (oldest requests first), then
/// replication, with strategy-specific holdbacks applied to serving.
fn rank_candidates(
    strategy: StrategyKind,
    node: NodeId,
    step: u64,
    candidates: &[Candidate],
    reputation: &ReputationMatrix,
    params: &UtilityParams,
    penalty: &PenaltyParams,
) -> Vec<Event> {
    let serve_allowed = |issued: u64| -> bool {
        match strategy {
            StrategyKind::Honest | StrategyKind::Equivocator => true,
            StrategyKind::Lazy { delay } => step.saturating_sub(issued) >= delay,
            StrategyKind::Defector => false,
            // Withhold exactly when the audit fine does not cover the net
            // cost of serving.
            StrategyKind::Withholder => penalty.lambda >= params.comp_cost - params.reward_per_op,
        }
    };
    let mut delivers: Vec<&Candidate> = Vec::new();
    let mut serves: Vec<&Candidate> = Vec::new();
    let mut replicates: Vec<&Candidate> = Vec::new();
    for c in candidates {
        match &c.kind {
            CandidateKind::Deliver { .. } => delivers.push(c),
            CandidateKind::Serve { issued, .. } => {
                if serve_allowed(*issued) {
                    serves.push(c);
                }
            }
            CandidateKind::Replicate { .. } => {
                if let Event::Send { to, .. } = &c.event {
                    if reputation.trusts(node, *to) {
                        replicates.push(c);
                    }
                }
            }
        }
    }
    delivers.sort_by_key(|c| match c.kind {
        CandidateKind::Deliver { send_time } => send_time,
        _ => u64::MAX,
    });
    serves.sort_by_key(|c| match c.kind {
        CandidateKind::Serve { issued, record_id } => (issued, record_id),
        _ => (u64::MAX, u64::MAX),
    });
    replicates.sort_by_key(|c| match (&c.kind, &c.event) {
        (CandidateKind::Replicate { seq }, Event::Send { to, .. }) => (*seq, to.0),
        _ => (u64::MAX, u32::MAX),
    });
    delivers
        .into_iter()
        .chain(serves)
        .chain(replicates)
        .map(|c| c.event.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// The run loop
// ---------------------------------------------------------------------------

/// Executes a scenario with its embedded seed.
pub fn run(scenario: &Scenario) -> Result<RunTrace, SimError> {
    run_seeded(scenario, scenario.seed)
}

/// Executes a scenario under an explicit seed (sweeps).
pub fn run_seeded(scenario: &Scenario, seed: u64) -> Result<RunTrace, SimError> {
    scenario.validate()?;
    let schedule = scenario.resolved_schedule(seed)?;
    let violations = validate_schedule(&schedule, &scenario.constraints);
    if !violations.is_empty() {
        return Err(SimError::ConstraintViolations(violations));
    }

    let k = scenario.node_count as usize;
    let object = scenario.object_spec();
    let mut rs = RunState {
        dsa: Dsa::full_mesh(
            alloc::vec![scenario.automaton; k],
            scenario.delta_max,
        ),
        global: GlobalState::new(k),
        logs: (0..k).map(|i| ChainedLog::new(NodeId(i as u32))).collect(),
        filtrations: (0..k).map(|i| Filtration::new(NodeId(i as u32))).collect(),
        reputation: ReputationMatrix::new(
            k,
            scenario.reputation_threshold,
            scenario.reputation_alpha,
        ),
        escrows: (0..k)
            .map(|i| EscrowAccount::new(NodeId(i as u32), scenario.escrow_deposit))
            .collect(),
        records: scenario
            .workload
            .iter()
            .enumerate()
            .map(|(id, op)| OperationRecord {
                id: id as u64,
                node: op.node,
                kind: match &op.action {
                    WorkloadAction::Write { key, value } => OpKind::Write {
                        key: key.clone(),
                        value: *value,
                    },
                    WorkloadAction::Inc { key, amount } => OpKind::Inc {
                        key: key.clone(),
                        amount: *amount,
                    },
                    WorkloadAction::Read { key } => OpKind::Read {
                        key: key.clone(),
                        returned: 0,
                    },
                },
                inv: op.step,
                resp: None,
            })
            .collect(),
        next_seq: alloc::vec![0; k],
        replicated: BTreeSet::new(),
        cumulative_utilities: alloc::vec![Rat::zero(); k],
        reconcile_cursor: 0,
    };
    let heal_step = schedule.heal_step();
    let retry_interval = scenario.delta_max.max(1);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(scenario.horizon as usize);

    for t in 0..scenario.horizon {
        let cuts = schedule.cuts_at(t);
        let active: BTreeSet<Link> = rs
            .dsa
            .topology
            .difference(&cuts)
            .copied()
            .collect();

        // Periodic retry: stale link suspicions expire.
        if t % retry_interval == 0 {
            for f in &mut rs.filtrations {
                f.observed_cuts.clear();
            }
        }

        let mut stage = alloc::vec![StageRecord::default(); k];
        let mut verdicts: Vec<AuditVerdict> = Vec::new();

        // 1. Scheduled fault, if admissible, consumes the step.
        let fault_event = scenario
            .faults
            .iter()
            .find(|f| f.step == t)
            .map(|f| match f.fault {
                FaultKind::Crash(n) => Event::Crash { actor: n },
                FaultKind::Recover(n) => Event::Recover { actor: n },
            })
            .filter(|e| rs.dsa.is_admissible(&rs.global, &active, e));

        // 2. Otherwise, post-heal reconciliation sweeps until agreement.
        let needs_reconcile = fault_event.is_none()
            && t >= heal_step
            && cuts.is_empty()
            && !converged(&rs.global);

        let action: StepAction = if let Some(event) = fault_event {
            rs.global = rs
                .dsa
                .apply_global(&rs.global, &event)
                .expect("admissible fault");
            StepAction::Event(event)
        } else if needs_reconcile {
            match next_reconcile_pair(&mut rs, k) {
                Some((a, b)) => {
                    reconcile_pair(&mut rs, a, b, &scenario.reconcile_rule)?;
                    rs.global.step += 1;
                    StepAction::Reconcile(a, b)
                }
                None => {
                    rs.global = rs.global.idle();
                    StepAction::Idle
                }
            }
        } else {
            // 3. Normal flow: pools, feasibility, strategies, arbitration.
            let mut proposals: Vec<Vec<Event>> = Vec::with_capacity(k);
            let mut heads: Vec<Option<Event>> = Vec::with_capacity(k);
            for n in 0..k {
                let node = NodeId(n as u32);
                let candidates = build_candidates(&rs, node, t, scenario);
                let pool: Vec<Event> = candidates.iter().map(|c| c.event.clone()).collect();
                let feasible = feasible_actions(
                    node,
                    &rs.global.locals[n],
                    &rs.filtrations[n],
                    &pool,
                    &rs.dsa.automata[n],
                );
                let feasible_candidates: Vec<Candidate> = candidates
                    .into_iter()
                    .filter(|c| feasible.contains(&c.event))
                    .collect();
                let ranked = rank_candidates(
                    scenario.strategies[n],
                    node,
                    t,
                    &feasible_candidates,
                    &rs.reputation,
                    &scenario.node_params[n],
                    &scenario.penalty,
                );
                heads.push(ranked.first().cloned());
                proposals.push(ranked);
            }
            let picked = arbitrate(
                &rs.dsa,
                &proposals,
                &rs.global,
                &cuts,
                scenario.arbitration,
                seed,
            );
            // Nodes whose head proposal needed a severed link observe the
            // refusal and mark the link suspect.
            for (n, head) in heads.iter().enumerate() {
                if let Some(event) = head {
                    if Some(event) != picked.as_ref() {
                        for link in event.comm_links() {
                            if !active.contains(&link) {
                                rs.filtrations[n].note_cut(link);
                            }
                        }
                    }
                }
            }
            match picked {
                Some(event) => {
                    enact(&mut rs, &event, t, scenario, &mut stage)?;
                    StepAction::Event(event)
                }
                None => {
                    rs.global = rs.global.idle();
                    StepAction::Idle
                }
            }
        };

        // Feed the enacted event to every filtration.
        if let StepAction::Event(event) = &action {
            for f in &mut rs.filtrations {
                f.observe(event, &active);
            }
        }

        // End-of-step message aging under the active links.
        rs.dsa.age_messages(&mut rs.global, &active);

        // Audits at period boundaries and at the final step.
        let audit_due =
            (t + 1) % scenario.penalty.audit_period == 0 || t + 1 == scenario.horizon;
        if audit_due {
            for n in 0..k {
                let node = NodeId(n as u32);
                // The trace as visible at the audit step: operations whose
                // requests have arrived by now.
                let owned: Vec<OperationRecord> = rs
                    .records
                    .iter()
                    .filter(|r| r.node == node && r.inv <= t + 1)
                    .cloned()
                    .collect();
                let verdict = audit(
                    &AuditInputs {
                        node,
                        log: &rs.logs[n],
                        reported_commitment: reported_commitment(&rs, n, scenario),
                        operations: &owned,
                        now: t + 1,
                    },
                    k,
                    &scenario.penalty,
                )?;
                let (penalty, escrow) =
                    apply_penalty(&verdict, &rs.escrows[n], &scenario.penalty);
                stage[n].penalty += penalty;
                rs.escrows[n] = escrow;
                for observer in 0..k {
                    if observer != n {
                        rs.reputation = update_reputation(
                            &rs.reputation,
                            NodeId(observer as u32),
                            node,
                            verdict.class,
                        );
                    }
                }
                verdicts.push(verdict);
            }
        }

        // Metrics for the step.
        let stage_utilities: Vec<Rat> = stage.iter().map(crate::game::stage_utility).collect();
        for (n, u) in stage_utilities.iter().enumerate() {
            rs.cumulative_utilities[n] += u;
        }
        let commitments: Vec<Commitment> =
            rs.global.locals.iter().map(commit_state).collect();
        let reported: Vec<Commitment> = (0..k)
            .map(|n| reported_commitment(&rs, n, scenario))
            .collect();
        let history_so_far = OperationHistory {
            records: rs.records.clone(),
            object,
        };
        steps.push(StepRecord {
            step: t,
            action,
            cuts,
            divergent_pairs: divergence_set(&rs.global, vclock_sync).len(),
            epsilon_a_to_date: availability_deviation(
                &history_so_far,
                scenario.penalty.tau,
                t + 1,
            ),
            commitments,
            reported,
            stage_utilities,
            cumulative_forfeited: rs.escrows.iter().map(|e| e.forfeited).collect(),
            verdicts,
        });
    }

    // Footer metrics.
    let history = OperationHistory {
        records: rs.records.clone(),
        object,
    };
    let epsilon_c = match consistency_deviation(&history) {
        Ok(ConsistencyDeviation::Inversions(n)) => TraceEpsilonC::Inversions(n),
        Ok(ConsistencyDeviation::Unlinearizable) => TraceEpsilonC::Unlinearizable,
        Err(MetricsError::TooManyOps { .. }) => TraceEpsilonC::SearchBoundExceeded,
        Err(MetricsError::KeyMismatch) => unreachable!("history search never compares key sets"),
    };
    let epsilon_a = availability_deviation(&history, scenario.penalty.tau, scenario.horizon);
    let samples: Vec<ConvergenceSample> = steps
        .iter()
        .map(|s| ConvergenceSample {
            step: s.step,
            divergent_pairs: s.divergent_pairs,
            commitments_agree: agreement(&s.commitments),
        })
        .collect();
    let recovery = recovery_time(&samples, heal_step);
    let final_commit_agree = steps
        .last()
        .map(|s| agreement(&s.commitments))
        .unwrap_or(true);
    let within_envelope = matches!(epsilon_c, TraceEpsilonC::Inversions(n) if n <= scenario.theta_c)
        && epsilon_a <= scenario.penalty.theta_a;

    let equilibrium = match &scenario.deviation_game {
        Some(game) => Some(evaluate_deviation_game(scenario, game, seed)?),
        None => None,
    };

    Ok(RunTrace {
        scenario_name: scenario.name.clone(),
        seed,
        node_count: scenario.node_count,
        horizon: scenario.horizon,
        theta_c: scenario.theta_c,
        theta_a: scenario.penalty.theta_a,
        tau: scenario.penalty.tau,
        steps,
        history,
        final_logs: rs.logs,
        footer: Footer {
            epsilon_c,
            epsilon_a,
            recovery,
            heal_step,
            cumulative_utilities: rs.cumulative_utilities.clone(),
            forfeited: rs.escrows.iter().map(|e| e.forfeited).collect(),
            commitments_agree: final_commit_agree,
            within_envelope,
            equilibrium,
        },
    })
}

fn converged(global: &GlobalState) -> bool {
    divergence_set(global, vclock_sync).is_empty()
        && agreement(
            &global
                .locals
                .iter()
                .map(commit_state)
                .collect::<Vec<_>>(),
        )
}

/// Next adjacent up-pair in the round-robin sweep, if any.
fn next_reconcile_pair(rs: &mut RunState, k: usize) -> Option<(NodeId, NodeId)> {
    let pairs = k - 1;
    for _ in 0..pairs {
        let i = rs.reconcile_cursor % pairs;
        rs.reconcile_cursor += 1;
        let (a, b) = (NodeId(i as u32), NodeId(i as u32 + 1));
        let up = |n: NodeId| {
            rs.global.locals[n.idx()].status == crate::automaton::NodeStatus::Up
        };
        if up(a) && up(b) {
            return Some((a, b));
        }
    }
    None
}

fn reconcile_pair(
    rs: &mut RunState,
    a: NodeId,
    b: NodeId,
    rule: &ConflictRule,
) -> Result<(), SimError> {
    let merged = merge_order(&rs.logs[a.idx()], &rs.logs[b.idx()])?;
    let converged_state = reconcile(
        &rs.global.locals[a.idx()],
        &rs.global.locals[b.idx()],
        &merged,
        rule,
    );
    let entries: Vec<_> = merged
        .iter()
        .map(|e| (e.op.clone(), e.t, e.vclock.clone(), e.signer_tag))
        .collect();
    rs.logs[a.idx()] = ChainedLog::rebuild(a, entries.clone())?;
    rs.logs[b.idx()] = ChainedLog::rebuild(b, entries)?;
    rs.global.locals[a.idx()] = converged_state.clone();
    rs.global.locals[b.idx()] = converged_state;

    // The exchange subsumes direct replication between the pair and any
    // in-flight copies of operations both sides now hold.
    let ids: BTreeSet<OpId> = merged.iter().map(|e| e.op.id).collect();
    for id in &ids {
        if id.origin == a {
            rs.replicated.insert((*id, b));
        }
        if id.origin == b {
            rs.replicated.insert((*id, a));
        }
    }
    rs.global.in_flight.retain(|m| {
        let duplicate = match &m.payload {
            Payload::Replicate(op) => (m.to == a || m.to == b) && ids.contains(&op.id),
            _ => false,
        };
        !duplicate
    });
    // Successful exchange clears link suspicion between the pair.
    for (x, y) in [(a, b), (b, a)] {
        rs.filtrations[x.idx()].observed_cuts.remove(&Link { from: x, to: y });
        rs.filtrations[x.idx()].observed_cuts.remove(&Link { from: y, to: x });
    }
    Ok(())
}

/// Enacts an arbitrated event and performs the bookkeeping it implies:
/// costs, log appends, replication tracking, and operation completion.
fn enact(
    rs: &mut RunState,
    event: &Event,
    t: u64,
    scenario: &Scenario,
    stage: &mut [StageRecord],
) -> Result<(), SimError> {
    let actor = event.actor();
    let n = actor.idx();
    let read_value = match event {
        Event::Comp {
            payload: Payload::Read { key },
            ..
        } => Some(rs.global.locals[n].read(key)),
        _ => None,
    };

    rs.global = rs
        .dsa
        .apply_global(&rs.global, event)
        .expect("arbitration only yields admissible events");

    let params = &scenario.node_params[n];
    match event {
        Event::Comp { payload, .. } => {
            stage[n].cost += params.comp_cost;
            match payload {
                Payload::Apply(op) => {
                    rs.next_seq[n] += 1;
                    let vclock = rs.global.locals[n].vclock.clone();
                    rs.logs[n].append(op.clone(), t, vclock)?;
                    self_complete(rs, actor, t, event, read_value, params, stage);
                }
                Payload::Read { .. } => {
                    self_complete(rs, actor, t, event, read_value, params, stage);
                }
                _ => {}
            }
        }
        Event::Send { to, payload, .. } => {
            stage[n].cost += params.send_cost;
            if let Payload::Replicate(op) = payload {
                rs.replicated.insert((op.id, *to));
            }
        }
        Event::Recv { to, payload, .. } => {
            stage[n].cost += params.recv_cost;
            if let Payload::Replicate(op) = payload {
                if !rs.logs[to.idx()].contains_op(op.id) {
                    // Entry clock: the op's origin clock as carried by the
                    // message.
                    if let Event::Recv {
                        attached_vclock, ..
                    } = event
                    {
                        rs.logs[to.idx()].append(op.clone(), t, attached_vclock.clone())?;
                    }
                }
            }
        }
        Event::Crash { .. } | Event::Recover { .. } => {}
    }
    Ok(())
}

/// Marks the workload record served by this computation as completed.
fn self_complete(
    rs: &mut RunState,
    node: NodeId,
    t: u64,
    event: &Event,
    read_value: Option<i64>,
    params: &UtilityParams,
    stage: &mut [StageRecord],
) {
    // The serving record: the oldest unserved request of this node whose
    // action matches the enacted payload.
    let matching = rs.records.iter_mut().find(|r| {
        r.node == node
            && r.resp.is_none()
            && r.inv <= t
            && match (&r.kind, event) {
                (
                    OpKind::Read { key, .. },
                    Event::Comp {
                        payload: Payload::Read { key: k2 },
                        ..
                    },
                ) => key == k2,
                (
                    OpKind::Write { key, value },
                    Event::Comp {
                        payload: Payload::Apply(op),
                        ..
                    },
                ) => {
                    matches!(&op.effect, Effect::Write { key: k2, value: v2 } if k2 == key && v2 == value)
                }
                (
                    OpKind::Inc { key, amount },
                    Event::Comp {
                        payload: Payload::Apply(op),
                        ..
                    },
                ) => {
                    matches!(&op.effect, Effect::Inc { key: k2, amount: a2 } if k2 == key && a2 == amount)
                }
                _ => false,
            }
    });
    if let Some(record) = matching {
        record.resp = Some(t);
        if let (OpKind::Read { returned, .. }, Some(v)) = (&mut record.kind, read_value) {
            *returned = v;
        }
        stage[node.idx()].reward += params.reward_per_op;
    }
}

/// The commitment a node reports: truthful for everyone except the
/// equivocator, which commits to a forged register map.
fn reported_commitment(rs: &RunState, n: usize, scenario: &Scenario) -> Commitment {
    let local = &rs.global.locals[n];
    match scenario.strategies[n] {
        StrategyKind::Equivocator => {
            let mut forged = local.clone();
            let tampered = forged.read("c").wrapping_add(1);
            forged.registers.insert(String::from("c"), tampered);
            commit_state(&forged)
        }
        _ => commit_state(local),
    }
}

fn evaluate_deviation_game(
    scenario: &Scenario,
    game: &DeviationGame,
    seed: u64,
) -> Result<EquilibriumCheck, SimError> {
    let k = scenario.node_count as usize;
    let counts = alloc::vec![game.strategy_space.len(); k];
    // Pre-compute payoffs for the candidate profile and each unilateral
    // deviation; the payoff closure then just looks them up.
    let mut table: alloc::collections::BTreeMap<Vec<usize>, Vec<Rat>> =
        alloc::collections::BTreeMap::new();
    let mut profiles = alloc::vec![game.profile.clone()];
    for node in 0..k {
        for s in 0..game.strategy_space.len() {
            if s != game.profile[node] {
                let mut p = game.profile.clone();
                p[node] = s;
                profiles.push(p);
            }
        }
    }
    for profile in profiles {
        let mut sub = scenario.clone();
        sub.deviation_game = None;
        sub.strategies = profile
            .iter()
            .map(|&s| game.strategy_space[s])
            .collect();
        let trace = run_seeded(&sub, seed)?;
        table.insert(profile, trace.footer.cumulative_utilities);
    }
    let payoff = |profile: &[usize]| -> Vec<Rat> {
        table
            .get(profile)
            .cloned()
            .expect("all unilateral deviations precomputed")
    };
    best_response_check(&counts, payoff, &game.profile).map_err(SimError::Game)
}

// ---------------------------------------------------------------------------
// Metric emission
// ---------------------------------------------------------------------------

/// Output encodings for metric streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFormat {
    /// One `key=value` record per line.
    Lines,
    /// Comma-separated step table plus a footer table.
    Csv,
}

fn join_rats(values: &[Rat]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&format_rat(v));
    }
    out
}

fn join_commits(values: &[Commitment]) -> String {
    let mut out = String::new();
    for (i, c) in values.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&c.root_hex());
    }
    out
}

fn join_verdicts(verdicts: &[AuditVerdict]) -> String {
    if verdicts.is_empty() {
        return String::from("-");
    }
    let mut out = String::new();
    for (i, v) in verdicts.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let _ = write!(out, "{}:{}", v.node, v.class);
    }
    out
}

fn recovery_str(outcome: &RecoveryOutcome) -> String {
    match outcome {
        RecoveryOutcome::Converged(d) => format!("{d}"),
        RecoveryOutcome::NotConverged => String::from("not-converged"),
    }
}

fn equilibrium_str(eq: &Option<EquilibriumCheck>) -> String {
    match eq {
        None => String::from("none"),
        Some(EquilibriumCheck::Equilibrium) => String::from("equilibrium"),
        Some(EquilibriumCheck::Deviation { node, strategy, .. }) => {
            format!("deviation:node={node},strategy={strategy}")
        }
    }
}

/// Serializes a trace. Both formats encode identical values; `lines` is the
/// canonical stream whose SHA-256 is the trace digest.
pub fn emit_metrics(trace: &RunTrace, format: MetricFormat) -> String {
    let mut out = String::new();
    match format {
        MetricFormat::Lines => {
            let _ = writeln!(
                out,
                "run scenario={} seed={} nodes={} horizon={} theta_c={} theta_a={} tau={}",
                trace.scenario_name,
                trace.seed,
                trace.node_count,
                trace.horizon,
                trace.theta_c,
                trace.theta_a,
                trace.tau
            );
            for s in &trace.steps {
                let _ = writeln!(
                    out,
                    "step t={} event={} action={} cuts={} divergent={} eps_a={} util={} forfeit={} commit={} reported={} verdicts={}",
                    s.step,
                    step_kind(&s.action),
                    s.action,
                    s.cuts.len(),
                    s.divergent_pairs,
                    s.epsilon_a_to_date,
                    join_rats(&s.stage_utilities),
                    join_rats(&s.cumulative_forfeited),
                    join_commits(&s.commitments),
                    join_commits(&s.reported),
                    join_verdicts(&s.verdicts),
                );
            }
            let f = &trace.footer;
            let _ = writeln!(
                out,
                "footer eps_c={} eps_a={} t_rec={} heal={} util={} forfeit={} agreement={} envelope={} equilibrium={}",
                f.epsilon_c,
                f.epsilon_a,
                recovery_str(&f.recovery),
                f.heal_step,
                join_rats(&f.cumulative_utilities),
                join_rats(&f.forfeited),
                f.commitments_agree,
                if f.within_envelope { "ok" } else { "violated" },
                equilibrium_str(&f.equilibrium),
            );
        }
        MetricFormat::Csv => {
            let _ = writeln!(
                out,
                "t,event,action,cuts,divergent,eps_a,util,forfeit,commit,reported,verdicts"
            );
            for s in &trace.steps {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    s.step,
                    step_kind(&s.action),
                    s.action,
                    s.cuts.len(),
                    s.divergent_pairs,
                    s.epsilon_a_to_date,
                    join_rats(&s.stage_utilities),
                    join_rats(&s.cumulative_forfeited),
                    join_commits(&s.commitments),
                    join_commits(&s.reported),
                    join_verdicts(&s.verdicts),
                );
            }
            let f = &trace.footer;
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "eps_c,eps_a,t_rec,heal,util,forfeit,agreement,envelope,equilibrium"
            );
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                f.epsilon_c,
                f.epsilon_a,
                recovery_str(&f.recovery),
                f.heal_step,
                join_rats(&f.cumulative_utilities),
                join_rats(&f.forfeited),
                f.commitments_agree,
                if f.within_envelope { "ok" } else { "violated" },
                equilibrium_str(&f.equilibrium),
            );
        }
    }
    out
}

fn step_kind(action: &StepAction) -> &'static str {
    match action {
        StepAction::Event(e) => match e.kind() {
            EventKind::Comp => "comp",
            EventKind::Send => "send",
            EventKind::Recv => "recv",
            EventKind::Crash => "crash",
            EventKind::Recover => "recover",
        },
        StepAction::Idle => "idle",
        StepAction::Reconcile(_, _) => "reconcile",
    }
}

//! Node automata, the composed global automaton, event admissibility, and
//! the partition-aware global transition.
//!
//! Execution is strictly interleaved: one atomic event per logical step,
//! enacted against the product of all local states. Events are admissible
//! only when locally enabled, feasible under the current link cuts, causally
//! justified (receives match an in-flight send within the delivery bound),
//! and the global transition is defined. The partition-aware transition is a
//! partial function; callers above arbitration map "no admissible event" to
//! an explicit idle stutter.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::partition::Link;

/// Dense node index in `[0, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Index into per-node vectors.
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Identity of a replicated operation: originating node plus a per-origin
/// sequence number. Replicas deduplicate by this id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId {
    /// Node that originated the operation.
    pub origin: NodeId,
    /// Origin-local sequence number, starting at 0.
    pub seq: u64,
}

/// State-mutating effect of a replicated operation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Effect {
    /// Add `amount` to the register `key` (grow-only counter semantics).
    Inc {
        /// Register key.
        key: String,
        /// Increment, must be positive for the counter automaton.
        amount: i64,
    },
    /// Set register `key` to `value` under last-writer-wins resolution.
    Write {
        /// Register key.
        key: String,
        /// New value.
        value: i64,
    },
}

impl Effect {
    /// Register key the effect touches.
    pub fn key(&self) -> &str {
        match self {
            Effect::Inc { key, .. } | Effect::Write { key, .. } => key,
        }
    }
}

/// A replicated operation: identity, origin timestamp, and effect.
///
/// The stamp is the logical step at which the origin enacted the operation;
/// last-writer-wins resolution orders writes by `(stamp, origin)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReplicatedOp {
    /// Operation identity.
    pub id: OpId,
    /// Logical time of enactment at the origin.
    pub stamp: u64,
    /// State mutation carried by the operation.
    pub effect: Effect,
}

impl ReplicatedOp {
    /// Canonical byte encoding, used bit-exactly in hash-chained logs:
    /// `origin u32be || seq u64be || stamp u64be || tag u8 ||
    ///  keylen u32be || key || arg i64be` with tag 1 = Inc, 2 = Write.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let (tag, key, arg): (u8, &str, i64) = match &self.effect {
            Effect::Inc { key, amount } => (1, key, *amount),
            Effect::Write { key, value } => (2, key, *value),
        };
        let mut out = Vec::with_capacity(4 + 8 + 8 + 1 + 4 + key.len() + 8);
        out.extend_from_slice(&self.id.origin.0.to_be_bytes());
        out.extend_from_slice(&self.id.seq.to_be_bytes());
        out.extend_from_slice(&self.stamp.to_be_bytes());
        out.push(tag);
        out.extend_from_slice(&(key.len() as u32).to_be_bytes());
        out.extend_from_slice(key.as_bytes());
        out.extend_from_slice(&arg.to_be_bytes());
        out
    }
}

/// Payload carried by computation and communication events.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Payload {
    /// Originate and locally apply a replicated operation.
    Apply(ReplicatedOp),
    /// Serve a local read of `key`; mutates nothing.
    Read {
        /// Register key to read.
        key: String,
    },
    /// Carry an operation to a peer replica.
    Replicate(ReplicatedOp),
    /// Inert message, useful in tests.
    Ping,
}

/// Event kind tags, mirroring the local/comm/fault alphabet split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    /// Local computation.
    Comp,
    /// Message transmission.
    Send,
    /// Message delivery.
    Recv,
    /// Node crash.
    Crash,
    /// Node recovery.
    Recover,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Comp => "comp",
            EventKind::Send => "send",
            EventKind::Recv => "recv",
            EventKind::Crash => "crash",
            EventKind::Recover => "recover",
        };
        f.write_str(s)
    }
}

/// An atomic event. Receives are always written (payload, sender, receiver).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    /// Local computation by `actor`.
    Comp {
        /// Acting node.
        actor: NodeId,
        /// Computation payload (`Apply` or `Read`).
        payload: Payload,
    },
    /// Transmission from `from` to `to`.
    Send {
        /// Sender.
        from: NodeId,
        /// Receiver.
        to: NodeId,
        /// Message body.
        payload: Payload,
    },
    /// Delivery at `to` of a message sent by `from`.
    Recv {
        /// Sender of the matched message.
        from: NodeId,
        /// Receiving (acting) node.
        to: NodeId,
        /// Message body.
        payload: Payload,
        /// Sender vector clock attached at send time.
        attached_vclock: Vec<u64>,
        /// Logical step of the matched send.
        send_time: u64,
    },
    /// Crash fault at `actor`.
    Crash {
        /// Crashing node.
        actor: NodeId,
    },
    /// Recovery of `actor`.
    Recover {
        /// Recovering node.
        actor: NodeId,
    },
}

impl Event {
    /// Event kind tag.
    pub fn kind(&self) -> EventKind {
        match self {
            Event::Comp { .. } => EventKind::Comp,
            Event::Send { .. } => EventKind::Send,
            Event::Recv { .. } => EventKind::Recv,
            Event::Crash { .. } => EventKind::Crash,
            Event::Recover { .. } => EventKind::Recover,
        }
    }

    /// The single node whose local state the event may change.
    pub fn actor(&self) -> NodeId {
        match self {
            Event::Comp { actor, .. } | Event::Crash { actor } | Event::Recover { actor } => {
                *actor
            }
            Event::Send { from, .. } => *from,
            Event::Recv { to, .. } => *to,
        }
    }

    /// Directed links the event requires; empty except for comm events.
    pub fn comm_links(&self) -> BTreeSet<Link> {
        let mut links = BTreeSet::new();
        match self {
            Event::Send { from, to, .. } | Event::Recv { from, to, .. } => {
                links.insert(Link {
                    from: *from,
                    to: *to,
                });
            }
            _ => {}
        }
        links
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Comp { actor, .. } => write!(f, "comp@{actor}"),
            Event::Send { from, to, .. } => write!(f, "send {from}->{to}"),
            Event::Recv { from, to, .. } => write!(f, "recv {from}->{to}"),
            Event::Crash { actor } => write!(f, "crash@{actor}"),
            Event::Recover { actor } => write!(f, "recover@{actor}"),
        }
    }
}

/// Liveness status of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeStatus {
    /// Executing normally.
    Up,
    /// Crashed; only a recovery event is accepted.
    Crashed,
}

/// Register map of a node.
pub type Registers = BTreeMap<String, i64>;

/// Complete local state of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalState {
    /// Keyed integer registers; the committed, observable state.
    pub registers: Registers,
    /// Liveness status.
    pub status: NodeStatus,
    /// Monotone local event counter.
    pub local_clock: u64,
    /// Vector clock over all k nodes.
    pub vclock: Vec<u64>,
    /// Last-writer-wins stamps per key: (origin stamp, origin node).
    /// Bookkeeping for write resolution; excluded from commitments and
    /// register equality.
    pub lww: BTreeMap<String, (u64, u32)>,
}

impl LocalState {
    /// Fresh state for one node in a k-node system.
    pub fn new(k: usize) -> Self {
        LocalState {
            registers: BTreeMap::new(),
            status: NodeStatus::Up,
            local_clock: 0,
            vclock: alloc::vec![0; k],
            lww: BTreeMap::new(),
        }
    }

    /// Reads a register, defaulting absent keys to 0.
    pub fn read(&self, key: &str) -> i64 {
        self.registers.get(key).copied().unwrap_or(0)
    }

    /// Applies an operation's effect to the registers.
    ///
    /// Increments accumulate; writes follow last-writer-wins on
    /// `(stamp, origin)`, which makes re-delivery of the same write a no-op.
    pub fn apply_effect(&mut self, op: &ReplicatedOp) {
        match &op.effect {
            Effect::Inc { key, amount } => {
                *self.registers.entry(key.clone()).or_insert(0) += amount;
            }
            Effect::Write { key, value } => {
                let incoming = (op.stamp, op.id.origin.0);
                let current = self.lww.get(key.as_str()).copied();
                if current.is_none() || current < Some(incoming) {
                    self.registers.insert(key.clone(), *value);
                    self.lww.insert(key.clone(), incoming);
                }
            }
        }
    }
}

/// A message in transit: body, endpoints, send step, sender clock, and how
/// many steps it has been deliverable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    /// Message body.
    pub payload: Payload,
    /// Sender.
    pub from: NodeId,
    /// Receiver.
    pub to: NodeId,
    /// Logical step of the send.
    pub send_time: u64,
    /// Sender vector clock at send time.
    pub attached_vclock: Vec<u64>,
    /// Steps elapsed while the link was active. Messages age only while
    /// deliverable; a severed link freezes them until reconnection.
    pub active_age: u64,
}

/// Global system state: the product of local states plus the message pool
/// and the logical step counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalState {
    /// Per-node local states, indexed by node id.
    pub locals: Vec<LocalState>,
    /// Messages sent but not yet received.
    pub in_flight: Vec<InFlight>,
    /// Logical time, incremented once per enacted event or idle stutter.
    pub step: u64,
}

impl GlobalState {
    /// Initial state for k nodes.
    pub fn new(k: usize) -> Self {
        GlobalState {
            locals: (0..k).map(|_| LocalState::new(k)).collect(),
            in_flight: Vec::new(),
            step: 0,
        }
    }

    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.locals.len()
    }

    /// Idle stutter: state unchanged except the step counter.
    pub fn idle(&self) -> GlobalState {
        let mut next = self.clone();
        next.step += 1;
        next
    }
}

/// Per-node transition behaviour: which effects the node's object type
/// accepts. Enablement and state application compose this with the
/// universal rules (crash gating, vector clocks, message handling).
pub trait NodeAutomaton {
    /// Whether the effect is executable from the given local state.
    fn effect_enabled(&self, local: &LocalState, effect: &Effect) -> bool;
}

/// The two reference automata shipped with the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinAutomaton {
    /// Grow-only counter: accepts positive increments.
    Counter,
    /// Last-writer-wins keyed register: accepts writes.
    Register,
}

impl NodeAutomaton for BuiltinAutomaton {
    fn effect_enabled(&self, _local: &LocalState, effect: &Effect) -> bool {
        match (self, effect) {
            (BuiltinAutomaton::Counter, Effect::Inc { amount, .. }) => *amount > 0,
            (BuiltinAutomaton::Register, Effect::Write { .. }) => true,
            _ => false,
        }
    }
}

/// Errors from global transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DsaError {
    /// The acting node's automaton does not enable the event.
    NotEnabled {
        /// Acting node.
        node: NodeId,
        /// Kind of the refused event.
        kind: EventKind,
    },
    /// A receive without a matching in-flight send.
    UnmatchedRecv {
        /// Claimed sender.
        from: NodeId,
        /// Claimed receiver.
        to: NodeId,
    },
    /// Event references a node outside `[0, k)`.
    UnknownNode(NodeId),
}

impl fmt::Display for DsaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DsaError::NotEnabled { node, kind } => {
                write!(f, "event {kind} not enabled at {node}")
            }
            DsaError::UnmatchedRecv { from, to } => {
                write!(f, "no in-flight message matches recv {from}->{to}")
            }
            DsaError::UnknownNode(n) => write!(f, "unknown node {n}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DsaError {}

/// True iff the event belongs to the node's alphabet projection: the node
/// is the computing/faulting subject, the sender of a send, or the receiver
/// of a receive.
pub fn project_alphabet(node: NodeId, event: &Event) -> bool {
    event.actor() == node
}

/// Applies an event to one local state under the node's automaton.
///
/// The acting node's own vector clock component is incremented on every
/// event; a receive first merges the sender's attached clock pointwise-max,
/// then increments. Crashed nodes accept only recovery.
pub fn apply_local<A: NodeAutomaton>(
    local: &LocalState,
    event: &Event,
    automaton: &A,
) -> Result<LocalState, DsaError> {
    if !enabled(local, event, automaton) {
        return Err(DsaError::NotEnabled {
            node: event.actor(),
            kind: event.kind(),
        });
    }
    let me = event.actor().idx();
    let mut next = local.clone();
    match event {
        Event::Comp { payload, .. } => {
            if let Payload::Apply(op) = payload {
                next.apply_effect(op);
            }
        }
        Event::Send { .. } => {}
        Event::Recv {
            payload,
            attached_vclock,
            ..
        } => {
            for (own, theirs) in next.vclock.iter_mut().zip(attached_vclock.iter()) {
                *own = (*own).max(*theirs);
            }
            if let Payload::Replicate(op) = payload {
                next.apply_effect(op);
            }
        }
        Event::Crash { .. } => next.status = NodeStatus::Crashed,
        Event::Recover { .. } => next.status = NodeStatus::Up,
    }
    if me < next.vclock.len() {
        next.vclock[me] += 1;
    }
    next.local_clock += 1;
    Ok(next)
}

/// Local enablement: universal crash gating plus the automaton's effect
/// filter.
pub fn enabled<A: NodeAutomaton>(local: &LocalState, event: &Event, automaton: &A) -> bool {
    match local.status {
        NodeStatus::Crashed => matches!(event, Event::Recover { .. }),
        NodeStatus::Up => match event {
            Event::Recover { .. } => false,
            Event::Crash { .. } | Event::Send { .. } => true,
            Event::Comp { actor, payload } => match payload {
                Payload::Apply(op) => {
                    op.id.origin == *actor && automaton.effect_enabled(local, &op.effect)
                }
                Payload::Read { .. } => true,
                Payload::Replicate(_) | Payload::Ping => false,
            },
            Event::Recv { payload, .. } => match payload {
                Payload::Replicate(op) => automaton.effect_enabled(local, &op.effect),
                Payload::Ping => true,
                Payload::Apply(_) | Payload::Read { .. } => false,
            },
        },
    }
}

/// The composed system: per-node automata, the full link topology, and the
/// delivery bound.
#[derive(Debug, Clone)]
pub struct Dsa<A: NodeAutomaton> {
    /// One automaton per node.
    pub automata: Vec<A>,
    /// All potential directed links.
    pub topology: BTreeSet<Link>,
    /// Maximum deliverable age of an in-flight message while its link is
    /// active.
    pub delta_max: u64,
}

impl<A: NodeAutomaton> Dsa<A> {
    /// Builds a system over a full mesh of `automata.len()` nodes.
    pub fn full_mesh(automata: Vec<A>, delta_max: u64) -> Self {
        let k = automata.len() as u32;
        let mut topology = BTreeSet::new();
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    topology.insert(Link {
                        from: NodeId(i),
                        to: NodeId(j),
                    });
                }
            }
        }
        Dsa {
            automata,
            topology,
            delta_max,
        }
    }

    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.automata.len()
    }

    fn automaton_for(&self, node: NodeId) -> Result<&A, DsaError> {
        self.automata
            .get(node.idx())
            .ok_or(DsaError::UnknownNode(node))
    }

    fn find_in_flight(&self, state: &GlobalState, event: &Event) -> Option<usize> {
        if let Event::Recv {
            from,
            to,
            payload,
            attached_vclock,
            send_time,
        } = event
        {
            state.in_flight.iter().position(|m| {
                m.from == *from
                    && m.to == *to
                    && m.payload == *payload
                    && m.send_time == *send_time
                    && m.attached_vclock == *attached_vclock
            })
        } else {
            None
        }
    }

    /// Enacts one atomic event globally.
    ///
    /// Exactly the acting node's local state changes; a send adds one
    /// in-flight entry stamped with the current step and the sender's
    /// post-event clock, a receive consumes its matched entry. The step
    /// counter advances by one.
    pub fn apply_global(
        &self,
        state: &GlobalState,
        event: &Event,
    ) -> Result<GlobalState, DsaError> {
        let actor = event.actor();
        let automaton = self.automaton_for(actor)?;
        let local = state
            .locals
            .get(actor.idx())
            .ok_or(DsaError::UnknownNode(actor))?;

        let matched = if let Event::Recv { from, to, .. } = event {
            Some(
                self.find_in_flight(state, event)
                    .ok_or(DsaError::UnmatchedRecv {
                        from: *from,
                        to: *to,
                    })?,
            )
        } else {
            None
        };

        let next_local = apply_local(local, event, automaton)?;
        let mut next = state.clone();
        if let Some(idx) = matched {
            next.in_flight.remove(idx);
        }
        if let Event::Send { from, to, payload } = event {
            next.in_flight.push(InFlight {
                payload: payload.clone(),
                from: *from,
                to: *to,
                send_time: state.step,
                attached_vclock: next_local.vclock.clone(),
                active_age: 0,
            });
        }
        next.locals[actor.idx()] = next_local;
        next.step += 1;
        Ok(next)
    }

    /// The admissible subset of a candidate pool under the active links:
    /// locally executable, communication-consistent, causally justified
    /// within the delivery bound, and globally defined.
    pub fn admissible_events(
        &self,
        state: &GlobalState,
        active: &BTreeSet<Link>,
        pool: &[Event],
    ) -> Vec<Event> {
        pool.iter()
            .filter(|e| self.is_admissible(state, active, e))
            .cloned()
            .collect()
    }

    /// Checks one event against all four admissibility conditions.
    pub fn is_admissible(&self, state: &GlobalState, active: &BTreeSet<Link>, event: &Event) -> bool {
        let actor = event.actor();
        let (Ok(automaton), Some(local)) =
            (self.automaton_for(actor), state.locals.get(actor.idx()))
        else {
            return false;
        };
        // (i) local executability
        if !enabled(local, event, automaton) {
            return false;
        }
        // (ii) all required links active
        if !event.comm_links().is_subset(active) {
            return false;
        }
        // (iii) causal receive within the delivery bound
        if matches!(event, Event::Recv { .. }) {
            match self.find_in_flight(state, event) {
                Some(idx) => {
                    if state.in_flight[idx].active_age > self.delta_max {
                        return false;
                    }
                }
                None => return false,
            }
        }
        // (iv) global transition defined
        self.apply_global(state, event).is_ok()
    }

    /// Partition-aware transition: the applied event when admissible under
    /// the cuts, `None` (undefined) otherwise. The harness maps an absent
    /// admissible event to an explicit idle stutter.
    pub fn step_partition_aware(
        &self,
        state: &GlobalState,
        event: &Event,
        cuts: &BTreeSet<Link>,
    ) -> Option<GlobalState> {
        let active: BTreeSet<Link> = self.topology.difference(cuts).copied().collect();
        if self.is_admissible(state, &active, event) {
            Some(self.apply_global(state, event).expect("admissible implies defined"))
        } else {
            None
        }
    }

    /// End-of-step message bookkeeping: in-flight messages age one unit
    /// while their link is active and expire past the delivery bound;
    /// messages on severed links persist without aging and are deliverable
    /// after reconnection.
    pub fn age_messages(&self, state: &mut GlobalState, active: &BTreeSet<Link>) {
        state.in_flight.retain_mut(|m| {
            let link = Link {
                from: m.from,
                to: m.to,
            };
            if active.contains(&link) {
                m.active_age += 1;
                m.active_age <= self.delta_max
            } else {
                true
            }
        });
    }
}

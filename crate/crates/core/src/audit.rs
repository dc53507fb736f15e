//! Trace auditing, penalties, escrow forfeiture, and the collusion test.
//!
//! An audit inspects one node's slice of the run: its hash-chained log, the
//! state commitment it reported, and the latencies of the operations it
//! served. Verdicts are three-valued: compliant, minor delay (latency inside
//! the grace window), and consistency violation, which also covers
//! availability breaches past the full response deadline. Penalties scale
//! with the fine parameter and escrow forfeits partially or fully.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Zero;

use crate::automaton::{LocalState, NodeId};
use crate::log::ChainedLog;
use crate::merkle::{commit_state, Commitment};
use crate::metrics::OperationRecord;
use crate::rational::Rat;

/// Escrow posted by a node; forfeiture only ever grows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowAccount {
    /// Account owner.
    pub node: NodeId,
    /// Posted deposit.
    pub deposited: Rat,
    /// Cumulative forfeited amount, at most the deposit.
    pub forfeited: Rat,
}

impl EscrowAccount {
    /// Opens an account with the given deposit.
    pub fn new(node: NodeId, deposited: Rat) -> Self {
        EscrowAccount {
            node,
            deposited,
            forfeited: Rat::zero(),
        }
    }

    /// Deposit still at stake.
    pub fn remaining(&self) -> Rat {
        self.deposited - self.forfeited
    }

    fn forfeit(&mut self, amount: Rat) -> Rat {
        let taken = amount.min(self.remaining()).max(Rat::zero());
        self.forfeited += taken;
        taken
    }
}

/// Audit verdict classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VerdictClass {
    /// No findings.
    Compliant,
    /// Some served operation landed inside the grace window.
    MinorDelay,
    /// Log or commitment inconsistency, or an availability breach past the
    /// full deadline.
    ConsistencyViolation,
}

impl fmt::Display for VerdictClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VerdictClass::Compliant => "compliant",
            VerdictClass::MinorDelay => "minor-delay",
            VerdictClass::ConsistencyViolation => "consistency-violation",
        };
        f.write_str(s)
    }
}

/// An audit outcome with its supporting trace positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditVerdict {
    /// Audited node.
    pub node: NodeId,
    /// Verdict class.
    pub class: VerdictClass,
    /// Evidence: steps or operation ids backing a non-compliant verdict.
    pub evidence: Vec<u64>,
}

/// Penalty mechanism parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PenaltyParams {
    /// Full fine for a consistency violation; a minor delay costs half.
    pub lambda: Rat,
    /// Fraction of the deposit forfeited on a minor delay.
    pub minor_forfeit_fraction: Rat,
    /// Steps between audits.
    pub audit_period: u64,
    /// Response bound.
    pub tau: u64,
    /// Grace window past the response bound.
    pub theta_a: u64,
}

impl PenaltyParams {
    /// Latency past this is an availability breach.
    pub fn response_deadline(&self) -> u64 {
        self.tau + self.theta_a
    }
}

/// Audit failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditError {
    /// The operation records extend past the audit step.
    IncompleteTrace {
        /// Step of the offending record.
        at: u64,
    },
}

impl fmt::Display for AuditError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditError::IncompleteTrace { at } => {
                write!(f, "trace extends past the audit step (record at {at})")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AuditError {}

/// Everything the auditor sees about one node.
#[derive(Debug, Clone)]
pub struct AuditInputs<'a> {
    /// Audited node.
    pub node: NodeId,
    /// The node's hash-chained log.
    pub log: &'a ChainedLog,
    /// Commitment the node reported at the audit step.
    pub reported_commitment: Commitment,
    /// Operations served by the node, completed or pending.
    pub operations: &'a [OperationRecord],
    /// Audit step.
    pub now: u64,
}

/// Replays a log from genesis into a fresh local state.
///
/// The auditor's reference: the registers any honest replica would hold
/// after applying exactly the logged operations.
pub fn replay_log(log: &ChainedLog, k: usize) -> LocalState {
    let mut state = LocalState::new(k);
    for entry in &log.entries {
        state.apply_effect(&entry.op);
    }
    state
}

/// Audits one node.
///
/// A verdict is a consistency violation when the log fails verification,
/// when the reported commitment disagrees with the log replay, or when any
/// served or pending operation aged past the full response deadline. It is
/// a minor delay when some completed operation landed in `(tau, tau+theta_a]`.
/// Otherwise the node is compliant.
pub fn audit(
    inputs: &AuditInputs<'_>,
    k: usize,
    params: &PenaltyParams,
) -> Result<AuditVerdict, AuditError> {
    for r in inputs.operations {
        let latest = r.resp.unwrap_or(r.inv);
        if latest > inputs.now || r.inv > inputs.now {
            return Err(AuditError::IncompleteTrace { at: latest });
        }
    }

    if !inputs.log.verify() {
        let first_bad = inputs
            .log
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| {
                let prev = if *i == 0 {
                    crate::log::GENESIS_HASH
                } else {
                    inputs.log.entries[i - 1].entry_hash
                };
                e.prev_hash != prev || crate::log::entry_hash(&e.op, e.t, &e.prev_hash) != e.entry_hash
            })
            .map(|(i, _)| i as u64)
            .unwrap_or(0);
        return Ok(AuditVerdict {
            node: inputs.node,
            class: VerdictClass::ConsistencyViolation,
            evidence: alloc::vec![first_bad],
        });
    }

    let reference = replay_log(inputs.log, k);
    if commit_state(&reference).root != inputs.reported_commitment.root {
        return Ok(AuditVerdict {
            node: inputs.node,
            class: VerdictClass::ConsistencyViolation,
            evidence: alloc::vec![inputs.now],
        });
    }

    let deadline = params.response_deadline();
    let mut breaches = Vec::new();
    let mut minors = Vec::new();
    for r in inputs.operations {
        match r.resp {
            Some(resp) => {
                let latency = resp.saturating_sub(r.inv);
                if latency > deadline {
                    breaches.push(r.id);
                } else if latency > params.tau {
                    minors.push(r.id);
                }
            }
            None => {
                if inputs.now.saturating_sub(r.inv) > deadline {
                    breaches.push(r.id);
                }
            }
        }
    }
    if !breaches.is_empty() {
        return Ok(AuditVerdict {
            node: inputs.node,
            class: VerdictClass::ConsistencyViolation,
            evidence: breaches,
        });
    }
    if !minors.is_empty() {
        return Ok(AuditVerdict {
            node: inputs.node,
            class: VerdictClass::MinorDelay,
            evidence: minors,
        });
    }
    Ok(AuditVerdict {
        node: inputs.node,
        class: VerdictClass::Compliant,
        evidence: Vec::new(),
    })
}

/// Applies a verdict: returns the (non-positive) utility penalty and the
/// updated escrow.
///
/// Compliant nodes lose nothing. A minor delay costs half the fine and
/// forfeits the minor fraction of the posted deposit; a consistency
/// violation costs the full fine and forfeits the whole remaining deposit.
pub fn apply_penalty(
    verdict: &AuditVerdict,
    escrow: &EscrowAccount,
    params: &PenaltyParams,
) -> (Rat, EscrowAccount) {
    let mut next = escrow.clone();
    let penalty = match verdict.class {
        VerdictClass::Compliant => Rat::zero(),
        VerdictClass::MinorDelay => {
            next.forfeit(params.minor_forfeit_fraction * escrow.deposited);
            -params.lambda / Rat::from_integer(2)
        }
        VerdictClass::ConsistencyViolation => {
            let all = next.remaining();
            next.forfeit(all);
            -params.lambda
        }
    };
    (penalty, next)
}

/// True iff a coalition's summed utility under the collusive profile falls
/// strictly below its summed utility under the truthful profile, i.e. the
/// mechanism makes the collusion unprofitable.
pub fn collusion_test<F>(
    payoff: F,
    coalition: &[usize],
    collusive_profile: &[usize],
    truthful_profile: &[usize],
) -> bool
where
    F: Fn(&[usize]) -> Vec<Rat>,
{
    let collusive = payoff(collusive_profile);
    let truthful = payoff(truthful_profile);
    let sum = |values: &[Rat]| -> Rat {
        coalition
            .iter()
            .map(|&i| values[i])
            .fold(Rat::zero(), |a, b| a + b)
    };
    sum(&collusive) < sum(&truthful)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{Effect, OpId, ReplicatedOp};
    use crate::metrics::OpKind;
    use alloc::string::String;
    use alloc::vec;

    fn params(lambda: i64) -> PenaltyParams {
        PenaltyParams {
            lambda: Rat::from_integer(lambda),
            minor_forfeit_fraction: Rat::new(3, 10),
            audit_period: 8,
            tau: 2,
            theta_a: 4,
        }
    }

    fn op(origin: u32, seq: u64, stamp: u64, amount: i64) -> ReplicatedOp {
        ReplicatedOp {
            id: OpId {
                origin: NodeId(origin),
                seq,
            },
            stamp,
            effect: Effect::Inc {
                key: String::from("c"),
                amount,
            },
        }
    }

    fn record(id: u64, inv: u64, resp: Option<u64>) -> OperationRecord {
        OperationRecord {
            id,
            node: NodeId(0),
            kind: OpKind::Inc {
                key: String::from("c"),
                amount: 1,
            },
            inv,
            resp,
        }
    }

    fn honest_setup() -> (ChainedLog, Commitment) {
        let mut log = ChainedLog::new(NodeId(0));
        log.append(op(0, 0, 1, 1), 1, vec![1, 0]).unwrap();
        log.append(op(0, 1, 3, 2), 3, vec![2, 0]).unwrap();
        let commitment = commit_state(&replay_log(&log, 2));
        (log, commitment)
    }

    #[test]
    fn prompt_and_consistent_is_compliant() {
        let (log, commitment) = honest_setup();
        let ops = vec![record(0, 1, Some(2)), record(1, 3, Some(5))];
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &log,
                reported_commitment: commitment,
                operations: &ops,
                now: 8,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::Compliant);
        assert!(verdict.evidence.is_empty());
    }

    #[test]
    fn latency_in_grace_window_is_minor_delay() {
        let (log, commitment) = honest_setup();
        // tau=2, theta_a=4: latency 4 sits at tau + theta_a/2.
        let ops = vec![record(0, 1, Some(5))];
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &log,
                reported_commitment: commitment,
                operations: &ops,
                now: 8,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::MinorDelay);
        assert_eq!(verdict.evidence, vec![0]);
    }

    #[test]
    fn latency_past_deadline_is_a_violation() {
        let (log, commitment) = honest_setup();
        let ops = vec![record(0, 1, Some(9))]; // latency 8 > 6
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &log,
                reported_commitment: commitment,
                operations: &ops,
                now: 10,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::ConsistencyViolation);
    }

    #[test]
    fn pending_op_past_deadline_is_a_violation() {
        let (log, commitment) = honest_setup();
        let ops = vec![record(0, 1, None)];
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &log,
                reported_commitment: commitment,
                operations: &ops,
                now: 12,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::ConsistencyViolation);
    }

    #[test]
    fn tampered_log_is_a_violation_with_evidence() {
        let (log, commitment) = honest_setup();
        let mut tampered = log.clone();
        if let Effect::Inc { amount, .. } = &mut tampered.entries[1].op.effect {
            *amount = 50;
        }
        assert!(!tampered.verify(), "tamper oracle");
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &tampered,
                reported_commitment: commitment,
                operations: &[],
                now: 8,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::ConsistencyViolation);
        assert_eq!(verdict.evidence, vec![1]);
    }

    #[test]
    fn false_commitment_is_a_violation() {
        let (log, _) = honest_setup();
        let mut forged_state = replay_log(&log, 2);
        forged_state.registers.insert(String::from("c"), 999);
        let forged = commit_state(&forged_state);
        let verdict = audit(
            &AuditInputs {
                node: NodeId(0),
                log: &log,
                reported_commitment: forged,
                operations: &[],
                now: 8,
            },
            2,
            &params(2),
        )
        .unwrap();
        assert_eq!(verdict.class, VerdictClass::ConsistencyViolation);
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let (log, commitment) = honest_setup();
        let ops = vec![record(0, 1, Some(9))];
        assert_eq!(
            audit(
                &AuditInputs {
                    node: NodeId(0),
                    log: &log,
                    reported_commitment: commitment,
                    operations: &ops,
                    now: 5,
                },
                2,
                &params(2),
            )
            .unwrap_err(),
            AuditError::IncompleteTrace { at: 9 }
        );
    }

    #[test]
    fn penalty_and_forfeiture_schedule() {
        let p = params(2);
        let escrow = EscrowAccount::new(NodeId(0), Rat::from_integer(1));
        let verdict = |class| AuditVerdict {
            node: NodeId(0),
            class,
            evidence: vec![0],
        };

        let (pen, esc) = apply_penalty(&verdict(VerdictClass::Compliant), &escrow, &p);
        assert_eq!(pen, Rat::zero());
        assert_eq!(esc.forfeited, Rat::zero());

        let (pen, esc) = apply_penalty(&verdict(VerdictClass::MinorDelay), &escrow, &p);
        assert_eq!(pen, Rat::from_integer(-1));
        assert_eq!(esc.forfeited, Rat::new(3, 10));

        let (pen, esc) = apply_penalty(&verdict(VerdictClass::ConsistencyViolation), &escrow, &p);
        assert_eq!(pen, Rat::from_integer(-2));
        assert_eq!(esc.forfeited, Rat::from_integer(1));
        assert_eq!(esc.remaining(), Rat::zero());
    }

    #[test]
    fn forfeiture_is_monotone_and_capped() {
        let p = params(2);
        let mut escrow = EscrowAccount::new(NodeId(0), Rat::from_integer(1));
        let minor = AuditVerdict {
            node: NodeId(0),
            class: VerdictClass::MinorDelay,
            evidence: vec![0],
        };
        let mut last = Rat::zero();
        for _ in 0..6 {
            let (_, next) = apply_penalty(&minor, &escrow, &p);
            assert!(next.forfeited >= last);
            assert!(next.forfeited <= next.deposited);
            last = next.forfeited;
            escrow = next;
        }
        let violation = AuditVerdict {
            node: NodeId(0),
            class: VerdictClass::ConsistencyViolation,
            evidence: vec![0],
        };
        let (_, done) = apply_penalty(&violation, &escrow, &p);
        assert_eq!(done.forfeited, done.deposited);
    }

    #[test]
    fn collusion_is_unprofitable_exactly_when_penalized() {
        // Strategy 1 = equivocate: gains 2, fined lambda on audit.
        let game = |lambda: i64| {
            move |p: &[usize]| {
                p.iter()
                    .map(|&s| {
                        if s == 1 {
                            Rat::from_integer(2 - lambda)
                        } else {
                            Rat::zero()
                        }
                    })
                    .collect::<Vec<_>>()
            }
        };
        let coalition = [0usize, 1];
        // Coalition of everyone colluding "truthfully": sums equal, not less.
        assert!(!collusion_test(game(5), &[0, 1, 2], &[0, 0, 0], &[0, 0, 0]));
        // Two equivocators under full forfeiture lose as a group.
        assert!(collusion_test(game(5), &coalition, &[1, 1, 0], &[0, 0, 0]));
        // Zero penalty and positive gain: collusion pays, flagging
        // mechanism miscalibration.
        assert!(!collusion_test(game(0), &coalition, &[1, 1, 0], &[0, 0, 0]));
    }
}

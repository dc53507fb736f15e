//! Bounded stack-machine script interpreter.
//!
//! A script is a straight-line opcode sequence with structured conditionals
//! and no loop or jump opcodes, so every evaluation halts within the script
//! length. Evaluation is deterministic and fully traced: each step records
//! the machine configuration, which makes replay determinism checkable as
//! trace equality. Scripts plug into scenarios as node-level acceptance
//! predicates.

use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

/// Maximum stack depth before evaluation rejects.
pub const MAX_STACK_DEPTH: usize = 1000;

/// Script opcodes. Integers travel as 8-byte little-endian values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpCode {
    /// Push a literal integer.
    PushInt(i64),
    /// Duplicate the top item.
    Dup,
    /// Discard the top item.
    Drop,
    /// Pop two integers, push their sum.
    Add,
    /// Pop two items, push 1 if byte-equal else 0.
    Equal,
    /// Pop the top item; reject the script if it is false.
    Verify,
    /// Pop a condition and begin a conditional branch.
    If,
    /// Flip the innermost conditional branch.
    Else,
    /// Close the innermost conditional branch.
    EndIf,
    /// Pop an item, push its SHA-256 digest.
    Hash,
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpCode::PushInt(n) => write!(f, "push:{n}"),
            OpCode::Dup => f.write_str("dup"),
            OpCode::Drop => f.write_str("drop"),
            OpCode::Add => f.write_str("add"),
            OpCode::Equal => f.write_str("equal"),
            OpCode::Verify => f.write_str("verify"),
            OpCode::If => f.write_str("if"),
            OpCode::Else => f.write_str("else"),
            OpCode::EndIf => f.write_str("endif"),
            OpCode::Hash => f.write_str("hash"),
        }
    }
}

/// An opcode sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    /// Opcodes in execution order.
    pub opcodes: Vec<OpCode>,
}

impl Script {
    /// Wraps an opcode list.
    pub fn new(opcodes: Vec<OpCode>) -> Self {
        Script { opcodes }
    }

    /// Static nesting check: every `If` closes, `Else`/`EndIf` never dangle.
    pub fn well_formed(&self) -> bool {
        let mut depth = 0usize;
        let mut else_seen = alloc::vec![false];
        for op in &self.opcodes {
            match op {
                OpCode::If => {
                    depth += 1;
                    else_seen.push(false);
                }
                OpCode::Else => {
                    if depth == 0 || else_seen[depth] {
                        return false;
                    }
                    else_seen[depth] = true;
                }
                OpCode::EndIf => {
                    if depth == 0 {
                        return false;
                    }
                    depth -= 1;
                    else_seen.pop();
                }
                _ => {}
            }
        }
        depth == 0
    }
}

/// Why a script rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Conditional nesting is broken.
    MalformedScript,
    /// An opcode needed more stack items than present.
    StackUnderflow,
    /// Stack grew past [`MAX_STACK_DEPTH`].
    StackOverflow,
    /// A `Verify` popped a false value.
    VerifyFailed,
    /// `Add` consumed a non-integer item.
    TypeError,
    /// Evaluation finished with an empty stack.
    EmptyFinalStack,
    /// Evaluation finished with a false top item.
    FalseTop,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::MalformedScript => "malformed script",
            RejectReason::StackUnderflow => "stack underflow",
            RejectReason::StackOverflow => "stack overflow",
            RejectReason::VerifyFailed => "verify failed",
            RejectReason::TypeError => "type error",
            RejectReason::EmptyFinalStack => "empty final stack",
            RejectReason::FalseTop => "false top of stack",
        };
        f.write_str(s)
    }
}

/// Script verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Final stack non-empty with a true top and no failed verification.
    Accept,
    /// Rejected for the given reason.
    Reject(RejectReason),
}

/// One machine configuration: stack contents, execution cursor, and the
/// conditional-execution stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineConfig {
    /// Stack of byte strings, top last.
    pub stack: Vec<Vec<u8>>,
    /// Index of the next opcode.
    pub cursor: usize,
    /// Nested conditional flags; execution is live when all are true.
    pub cond_stack: Vec<bool>,
}

fn truthy(bytes: &[u8]) -> bool {
    bytes.iter().any(|b| *b != 0)
}

fn encode_int(n: i64) -> Vec<u8> {
    n.to_le_bytes().to_vec()
}

fn decode_int(bytes: &[u8]) -> Option<i64> {
    let arr: [u8; 8] = bytes.try_into().ok()?;
    Some(i64::from_le_bytes(arr))
}

/// Evaluates a script over an initial stack.
///
/// Returns the verdict plus the execution trace: the configuration before
/// execution and after every step. Structural problems and stack faults
/// reject rather than trap; evaluation always halts within the script
/// length.
pub fn eval_script(script: &Script, initial_stack: &[Vec<u8>]) -> (Verdict, Vec<MachineConfig>) {
    let mut trace = Vec::with_capacity(script.opcodes.len() + 1);
    let mut config = MachineConfig {
        stack: initial_stack.to_vec(),
        cursor: 0,
        cond_stack: Vec::new(),
    };
    trace.push(config.clone());
    if !script.well_formed() {
        return (Verdict::Reject(RejectReason::MalformedScript), trace);
    }

    while config.cursor < script.opcodes.len() {
        let op = script.opcodes[config.cursor];
        let live = config.cond_stack.iter().all(|b| *b);
        match op {
            OpCode::If => {
                if live {
                    let Some(cond) = config.stack.pop() else {
                        return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                    };
                    config.cond_stack.push(truthy(&cond));
                } else {
                    config.cond_stack.push(false);
                }
            }
            OpCode::Else => {
                let depth = config.cond_stack.len();
                if depth == 0 {
                    return (Verdict::Reject(RejectReason::MalformedScript), trace);
                }
                // A branch nested under a dead outer branch stays dead.
                let outer_live = config.cond_stack[..depth - 1].iter().all(|b| *b);
                let top = config.cond_stack[depth - 1];
                config.cond_stack[depth - 1] = !top && outer_live;
            }
            OpCode::EndIf => {
                if config.cond_stack.pop().is_none() {
                    return (Verdict::Reject(RejectReason::MalformedScript), trace);
                }
            }
            _ if !live => {}
            OpCode::PushInt(n) => config.stack.push(encode_int(n)),
            OpCode::Dup => {
                let Some(top) = config.stack.last().cloned() else {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                };
                config.stack.push(top);
            }
            OpCode::Drop => {
                if config.stack.pop().is_none() {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                }
            }
            OpCode::Add => {
                let (Some(b), Some(a)) = (config.stack.pop(), config.stack.pop()) else {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                };
                let (Some(a), Some(b)) = (decode_int(&a), decode_int(&b)) else {
                    return (Verdict::Reject(RejectReason::TypeError), trace);
                };
                config.stack.push(encode_int(a.wrapping_add(b)));
            }
            OpCode::Equal => {
                let (Some(b), Some(a)) = (config.stack.pop(), config.stack.pop()) else {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                };
                config.stack.push(encode_int(i64::from(a == b)));
            }
            OpCode::Verify => {
                let Some(top) = config.stack.pop() else {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                };
                if !truthy(&top) {
                    return (Verdict::Reject(RejectReason::VerifyFailed), trace);
                }
            }
            OpCode::Hash => {
                let Some(top) = config.stack.pop() else {
                    return (Verdict::Reject(RejectReason::StackUnderflow), trace);
                };
                let digest: [u8; 32] = Sha256::digest(&top).into();
                config.stack.push(digest.to_vec());
            }
        }
        if config.stack.len() > MAX_STACK_DEPTH {
            return (Verdict::Reject(RejectReason::StackOverflow), trace);
        }
        config.cursor += 1;
        trace.push(config.clone());
    }

    let verdict = match config.stack.last() {
        None => Verdict::Reject(RejectReason::EmptyFinalStack),
        Some(top) if truthy(top) => Verdict::Accept,
        Some(_) => Verdict::Reject(RejectReason::FalseTop),
    };
    (verdict, trace)
}

/// Runs two independent evaluations and compares traces step by step.
pub fn replay_determinism(script: &Script, initial_stack: &[Vec<u8>]) -> bool {
    let (v1, t1) = eval_script(script, initial_stack);
    let (v2, t2) = eval_script(script, initial_stack);
    v1 == v2 && traces_equal(&t1, &t2)
}

/// Step-by-step trace equality, the replay-determinism witness.
pub fn traces_equal(a: &[MachineConfig], b: &[MachineConfig]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use OpCode::*;

    fn run(ops: Vec<OpCode>) -> Verdict {
        eval_script(&Script::new(ops), &[]).0
    }

    #[test]
    fn nonzero_top_accepts_zero_top_rejects() {
        assert_eq!(run(vec![PushInt(1)]), Verdict::Accept);
        assert_eq!(run(vec![PushInt(0)]), Verdict::Reject(RejectReason::FalseTop));
        assert_eq!(run(vec![]), Verdict::Reject(RejectReason::EmptyFinalStack));
    }

    #[test]
    fn both_branch_paths() {
        let then_path = vec![PushInt(1), If, PushInt(1), Else, PushInt(0), EndIf];
        assert_eq!(run(then_path), Verdict::Accept);
        let else_path = vec![PushInt(0), If, PushInt(1), Else, PushInt(0), EndIf];
        assert_eq!(run(else_path), Verdict::Reject(RejectReason::FalseTop));
    }

    #[test]
    fn nested_dead_branches_stay_dead() {
        // Outer branch false: the inner Else must not resurrect execution.
        let ops = vec![
            PushInt(0),
            If,
            If,
            Else,
            PushInt(7),
            EndIf,
            EndIf,
            PushInt(1),
        ];
        let (verdict, trace) = eval_script(&Script::new(ops), &[]);
        assert_eq!(verdict, Verdict::Accept);
        // Nothing from the dead branch reached the stack.
        assert_eq!(trace.last().unwrap().stack, vec![encode_int(1)]);
    }

    #[test]
    fn arithmetic_and_equality() {
        assert_eq!(run(vec![PushInt(2), PushInt(3), Add, PushInt(5), Equal]), Verdict::Accept);
        assert_eq!(
            run(vec![PushInt(2), PushInt(2), Add, PushInt(5), Equal]),
            Verdict::Reject(RejectReason::FalseTop)
        );
    }

    #[test]
    fn verify_gates_acceptance() {
        assert_eq!(run(vec![PushInt(1), Verify, PushInt(1)]), Verdict::Accept);
        assert_eq!(
            run(vec![PushInt(0), Verify, PushInt(1)]),
            Verdict::Reject(RejectReason::VerifyFailed)
        );
    }

    #[test]
    fn underflow_and_malformed_reject() {
        assert_eq!(run(vec![Dup]), Verdict::Reject(RejectReason::StackUnderflow));
        assert_eq!(run(vec![Add]), Verdict::Reject(RejectReason::StackUnderflow));
        assert_eq!(
            run(vec![Else]),
            Verdict::Reject(RejectReason::MalformedScript)
        );
        assert_eq!(
            run(vec![PushInt(1), If]),
            Verdict::Reject(RejectReason::MalformedScript)
        );
        assert_eq!(
            run(vec![EndIf]),
            Verdict::Reject(RejectReason::MalformedScript)
        );
    }

    #[test]
    fn hash_pushes_digest() {
        let (verdict, trace) = eval_script(&Script::new(vec![PushInt(1), Hash]), &[]);
        assert_eq!(verdict, Verdict::Accept);
        let top = trace.last().unwrap().stack.last().unwrap().clone();
        let expected: [u8; 32] = Sha256::digest(encode_int(1)).into();
        assert_eq!(top, expected.to_vec());
    }

    #[test]
    fn add_on_non_integers_is_a_type_error() {
        let ops = vec![PushInt(1), Hash, PushInt(1), Add];
        assert_eq!(run(ops), Verdict::Reject(RejectReason::TypeError));
    }

    #[test]
    fn halting_within_script_length() {
        let script = Script::new(vec![PushInt(1), Dup, Drop, Verify, PushInt(2)]);
        let (_, trace) = eval_script(&script, &[]);
        // Initial config + at most one per opcode.
        assert!(trace.len() <= script.opcodes.len() + 1);
    }

    #[test]
    fn replay_is_deterministic_and_mutation_is_detected() {
        let script = Script::new(vec![PushInt(1), If, PushInt(3), PushInt(4), Add, EndIf]);
        assert!(replay_determinism(&script, &[]));
        let (_, trace) = eval_script(&script, &[]);
        assert!(traces_equal(&trace, &trace.clone()));
        // An injected divergence in one step must be caught.
        let mut mutated = trace.clone();
        mutated[2].stack.push(vec![0xff]);
        assert!(!traces_equal(&trace, &mutated));
    }
}

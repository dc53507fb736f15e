//! End-to-end behaviour of the simulation harness: determinism, operation
//! completion, divergence under partitions, and post-heal convergence.

use capsim_core::audit::PenaltyParams;
use capsim_core::automaton::{BuiltinAutomaton, NodeId};
use capsim_core::game::{ArbitrationPolicy, UtilityParams};
use capsim_core::partition::{AdversaryConstraints, ScheduleKind};
use capsim_core::rational::{parse_rat, Rat};
use capsim_core::reconcile::{ConflictRule, RecoveryOutcome};
use capsim_core::sim::{
    emit_metrics, run, run_seeded, MetricFormat, ScheduleSpec, Scenario, StepAction,
    StrategyKind, TraceEpsilonC, WorkloadAction, WorkloadOp,
};

fn params(reward: &str, comp_cost: &str) -> UtilityParams {
    UtilityParams {
        reward_per_op: parse_rat(reward).unwrap(),
        comp_cost: parse_rat(comp_cost).unwrap(),
        send_cost: Rat::new(0, 1),
        recv_cost: Rat::new(0, 1),
        discount: parse_rat("0.9").unwrap(),
    }
}

fn base_scenario(k: u32, horizon: u64) -> Scenario {
    Scenario {
        name: String::from("test"),
        seed: 0,
        horizon,
        node_count: k,
        automaton: BuiltinAutomaton::Counter,
        strategies: vec![StrategyKind::Honest; k as usize],
        node_params: vec![params("1", "0"); k as usize],
        penalty: PenaltyParams {
            lambda: Rat::new(2, 1),
            minor_forfeit_fraction: parse_rat("0.3").unwrap(),
            audit_period: horizon,
            tau: 6,
            theta_a: 8,
        },
        escrow_deposit: Rat::new(1, 1),
        theta_c: 1,
        delta_max: 6,
        arbitration: ArbitrationPolicy::LowestNodeIndex,
        schedule: ScheduleSpec::Generated(ScheduleKind::StaticCut {
            from: 0,
            to: 0,
            cut: Default::default(),
        }),
        constraints: AdversaryConstraints::default(),
        workload: Vec::new(),
        faults: Vec::new(),
        reconcile_rule: ConflictRule::lww(),
        reputation_threshold: Rat::new(1, 4),
        reputation_alpha: Rat::new(1, 2),
        deviation_game: None,
    }
}

fn inc(node: u32, step: u64, key: &str, amount: i64) -> WorkloadOp {
    WorkloadOp {
        node: NodeId(node),
        step,
        action: WorkloadAction::Inc {
            key: key.into(),
            amount,
        },
    }
}

fn read(node: u32, step: u64, key: &str) -> WorkloadOp {
    WorkloadOp {
        node: NodeId(node),
        step,
        action: WorkloadAction::Read { key: key.into() },
    }
}

#[test]
fn quiet_honest_run_completes_all_ops_and_converges() {
    let mut scenario = base_scenario(3, 40);
    scenario.workload = vec![
        inc(0, 2, "c", 1),
        inc(1, 4, "c", 2),
        read(2, 20, "c"),
        read(0, 24, "c"),
    ];
    let trace = run(&scenario).unwrap();

    assert!(trace.history.records.iter().all(|r| r.resp.is_some()));
    assert_eq!(trace.footer.epsilon_c, TraceEpsilonC::Inversions(0));
    assert_eq!(trace.footer.epsilon_a, 0);
    assert!(trace.footer.commitments_agree);
    assert_eq!(trace.footer.recovery, RecoveryOutcome::Converged(0));
    assert!(trace.footer.within_envelope);
    // Both reads observed the fully replicated counter.
    for r in &trace.history.records {
        if let capsim_core::metrics::OpKind::Read { returned, .. } = &r.kind {
            assert_eq!(*returned, 3);
        }
    }
    // Every node earned its op rewards.
    assert_eq!(trace.footer.cumulative_utilities[0], Rat::new(2, 1));
}

#[test]
fn identical_runs_serialize_identically() {
    let mut scenario = base_scenario(3, 30);
    scenario.workload = vec![inc(0, 1, "c", 1), inc(2, 3, "c", 5), read(1, 15, "c")];
    scenario.arbitration = ArbitrationPolicy::SeededUniform;
    let a = run(&scenario).unwrap();
    let b = run(&scenario).unwrap();
    assert_eq!(
        emit_metrics(&a, MetricFormat::Lines),
        emit_metrics(&b, MetricFormat::Lines)
    );
    assert_eq!(a.digest(), b.digest());
    // A different seed changes the trace under seeded arbitration.
    let c = run_seeded(&scenario, 1).unwrap();
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn partition_diverges_and_reconciliation_heals() {
    let mut scenario = base_scenario(3, 60);
    // Cut node 2 off from both peers during [5, 25).
    scenario.schedule = ScheduleSpec::Generated(ScheduleKind::StaticCut {
        from: 5,
        to: 25,
        cut: [(0u32, 2u32), (2, 0), (1, 2), (2, 1)]
            .into_iter()
            .map(|(a, b)| capsim_core::partition::Link::new(a, b))
            .collect(),
    });
    scenario.workload = vec![inc(0, 6, "c", 1), inc(2, 7, "c", 2)];
    let trace = run(&scenario).unwrap();

    // Divergence existed during the cut.
    assert!(
        trace.steps.iter().any(|s| s.divergent_pairs > 0),
        "expected divergence under the partition"
    );
    // Reconciliation ran and converged within 2k rounds of the heal.
    assert!(trace
        .steps
        .iter()
        .any(|s| matches!(s.action, StepAction::Reconcile(_, _))));
    match trace.footer.recovery {
        RecoveryOutcome::Converged(d) => assert!(d <= 2 * 3, "recovery took {d} steps"),
        RecoveryOutcome::NotConverged => panic!("run never converged"),
    }
    assert!(trace.footer.commitments_agree);
    // All counters agree on the total.
    let last = trace.steps.last().unwrap();
    assert_eq!(last.divergent_pairs, 0);
}

#[test]
fn crash_freezes_and_recovery_resumes() {
    let mut scenario = base_scenario(3, 40);
    scenario.faults = vec![
        capsim_core::sim::FaultSpec {
            step: 3,
            fault: capsim_core::sim::FaultKind::Crash(NodeId(1)),
        },
        capsim_core::sim::FaultSpec {
            step: 20,
            fault: capsim_core::sim::FaultKind::Recover(NodeId(1)),
        },
    ];
    scenario.workload = vec![inc(1, 5, "c", 4), inc(0, 6, "c", 1)];
    let trace = run(&scenario).unwrap();
    // Node 1's op waited for recovery but completed afterwards.
    let r = &trace.history.records[0];
    assert!(r.resp.unwrap() > 20);
    assert!(trace.footer.commitments_agree);
}

#[test]
fn defectors_breach_availability_and_forfeit() {
    let mut scenario = base_scenario(3, 40);
    scenario.penalty.audit_period = 20;
    scenario.penalty.tau = 3;
    scenario.penalty.theta_a = 3;
    scenario.strategies = vec![
        StrategyKind::Honest,
        StrategyKind::Defector,
        StrategyKind::Honest,
    ];
    scenario.workload = vec![inc(0, 1, "c", 1), inc(1, 2, "c", 2), read(2, 4, "c")];
    let trace = run(&scenario).unwrap();

    let defector_op = &trace.history.records[1];
    assert!(defector_op.resp.is_none(), "defector never serves");
    assert!(trace.footer.epsilon_a > scenario.penalty.theta_a);
    // The defector was fined and its escrow fully forfeited.
    assert!(trace.footer.cumulative_utilities[1] < Rat::new(0, 1));
    assert_eq!(trace.footer.forfeited[1], scenario.escrow_deposit);
    assert_eq!(trace.footer.forfeited[0], Rat::new(0, 1));
}

#[test]
fn equivocator_is_caught_by_commitment_audit() {
    let mut scenario = base_scenario(2, 20);
    scenario.penalty.audit_period = 10;
    scenario.strategies = vec![StrategyKind::Honest, StrategyKind::Equivocator];
    scenario.workload = vec![inc(0, 1, "c", 1)];
    let trace = run(&scenario).unwrap();
    let verdicts: Vec<_> = trace
        .steps
        .iter()
        .flat_map(|s| s.verdicts.iter())
        .filter(|v| v.node == NodeId(1))
        .collect();
    assert!(!verdicts.is_empty());
    assert!(verdicts
        .iter()
        .all(|v| v.class == capsim_core::audit::VerdictClass::ConsistencyViolation));
    assert_eq!(trace.footer.forfeited[1], scenario.escrow_deposit);
}

#[test]
fn lazy_strategy_draws_minor_delay() {
    let mut scenario = base_scenario(2, 24);
    scenario.penalty.audit_period = 24;
    scenario.penalty.tau = 2;
    scenario.penalty.theta_a = 6;
    scenario.strategies = vec![StrategyKind::Lazy { delay: 4 }, StrategyKind::Honest];
    scenario.workload = vec![inc(0, 1, "c", 1)];
    let trace = run(&scenario).unwrap();
    let r = &trace.history.records[0];
    let latency = r.resp.unwrap() - r.inv;
    assert!(latency > 2 && latency <= 8, "latency {latency}");
    let verdict = trace
        .steps
        .iter()
        .flat_map(|s| s.verdicts.iter())
        .find(|v| v.node == NodeId(0))
        .unwrap();
    assert_eq!(verdict.class, capsim_core::audit::VerdictClass::MinorDelay);
    assert_eq!(
        trace.footer.forfeited[0],
        parse_rat("0.3").unwrap() * scenario.escrow_deposit
    );
}

#[test]
fn csv_and_lines_encode_identical_values() {
    let mut scenario = base_scenario(3, 20);
    scenario.workload = vec![inc(0, 1, "c", 1), read(1, 6, "c")];
    let trace = run(&scenario).unwrap();
    let lines = emit_metrics(&trace, MetricFormat::Lines);
    let csv = emit_metrics(&trace, MetricFormat::Csv);

    // Horizon records plus header and footer on the lines side.
    assert_eq!(lines.lines().count() as u64, trace.horizon + 2);

    // Cross-format equality of the per-step epsilon and divergence columns.
    let line_vals: Vec<(String, String)> = lines
        .lines()
        .filter(|l| l.starts_with("step "))
        .map(|l| {
            let field = |name: &str| {
                l.split_whitespace()
                    .find_map(|kv| kv.strip_prefix(&format!("{name}=")).map(String::from))
                    .unwrap()
            };
            (field("eps_a"), field("divergent"))
        })
        .collect();
    let csv_vals: Vec<(String, String)> = csv
        .lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            (cols[5].to_string(), cols[4].to_string())
        })
        .collect();
    assert_eq!(line_vals, csv_vals);
}

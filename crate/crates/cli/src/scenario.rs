//! Scenario file format: a TOML schema mapped onto the core scenario value.
//!
//! The full grammar is documented in the repository README. Rational fields
//! accept integer, fraction (`3/10`) and exact decimal (`0.3`) literals as
//! strings.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use capsim_core::audit::PenaltyParams;
use capsim_core::automaton::{BuiltinAutomaton, NodeId};
use capsim_core::game::{ArbitrationPolicy, UtilityParams};
use capsim_core::partition::{
    AdversaryConstraints, FrequencyBound, Link, PartitionSchedule, ScheduleKind,
};
use capsim_core::rational::{parse_rat, Rat};
use capsim_core::reconcile::ConflictRule;
use capsim_core::sim::{
    DeviationGame, FaultKind, FaultSpec, ScheduleSpec, Scenario, StrategyKind, WorkloadAction,
    WorkloadOp,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    horizon: u64,
    nodes: u32,
    automaton: String,
    theta_c: u64,
    delta_max: u64,
    #[serde(default)]
    arbitration: Option<ArbitrationSection>,
    economics: EconomicsSection,
    #[serde(default)]
    reputation: Option<ReputationSection>,
    #[serde(default)]
    reconciliation: Option<ReconciliationSection>,
    #[serde(default, rename = "node")]
    node_overrides: Vec<NodeSection>,
    #[serde(default)]
    partitions: Option<PartitionsSection>,
    #[serde(default)]
    workload: Vec<WorkloadSection>,
    #[serde(default, rename = "fault")]
    faults: Vec<FaultSection>,
    #[serde(default)]
    deviation_game: Option<DeviationGameSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArbitrationSection {
    policy: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EconomicsSection {
    lambda: String,
    minor_forfeit_fraction: String,
    audit_period: u64,
    tau: u64,
    theta_a: u64,
    escrow: String,
    #[serde(default = "default_discount")]
    discount: String,
    #[serde(default = "default_zero")]
    reward_per_op: String,
    #[serde(default = "default_zero")]
    comp_cost: String,
    #[serde(default = "default_zero")]
    send_cost: String,
    #[serde(default = "default_zero")]
    recv_cost: String,
}

fn default_discount() -> String {
    "0.9".into()
}

fn default_zero() -> String {
    "0".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReputationSection {
    threshold: String,
    alpha: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconciliationSection {
    rule: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSection {
    index: u32,
    #[serde(default)]
    strategy: Option<String>,
    #[serde(default)]
    lazy_delay: Option<u64>,
    #[serde(default)]
    reward_per_op: Option<String>,
    #[serde(default)]
    comp_cost: Option<String>,
    #[serde(default)]
    send_cost: Option<String>,
    #[serde(default)]
    recv_cost: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionsSection {
    kind: String,
    #[serde(default)]
    from: Option<u64>,
    #[serde(default)]
    to: Option<u64>,
    #[serde(default)]
    period: Option<u64>,
    #[serde(default)]
    until: Option<u64>,
    #[serde(default)]
    every: Option<u64>,
    #[serde(default)]
    duration: Option<u64>,
    #[serde(default)]
    min_block: Option<usize>,
    #[serde(default)]
    quiesce_after: Option<u64>,
    #[serde(default)]
    cut: Vec<[u32; 2]>,
    #[serde(default, rename = "at")]
    explicit: Vec<ExplicitCut>,
    #[serde(default)]
    constraints: Option<ConstraintsSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitCut {
    step: u64,
    cut: Vec<[u32; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintsSection {
    #[serde(default)]
    max_links_cut: Option<usize>,
    #[serde(default)]
    min_component_size: Option<usize>,
    #[serde(default)]
    max_partition_duration: Option<u64>,
    #[serde(default)]
    max_partition_frequency: Option<FrequencySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrequencySection {
    limit: u64,
    window: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadSection {
    node: u32,
    step: u64,
    op: String,
    key: String,
    #[serde(default)]
    value: Option<i64>,
    #[serde(default)]
    amount: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSection {
    step: u64,
    kind: String,
    node: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviationGameSection {
    strategies: Vec<String>,
    profile: Vec<String>,
}

fn rat(field: &str, text: &str) -> Result<Rat> {
    parse_rat(text).map_err(|e| anyhow!("field `{field}`: {e}"))
}

fn strategy(name: &str, lazy_delay: Option<u64>) -> Result<StrategyKind> {
    Ok(match name {
        "honest" => StrategyKind::Honest,
        "lazy" => StrategyKind::Lazy {
            delay: lazy_delay.unwrap_or(2),
        },
        "equivocator" => StrategyKind::Equivocator,
        "withholder" => StrategyKind::Withholder,
        "defector" => StrategyKind::Defector,
        other => bail!("unknown strategy `{other}`"),
    })
}

fn links(pairs: &[[u32; 2]]) -> BTreeSet<Link> {
    pairs.iter().map(|[a, b]| Link::new(*a, *b)).collect()
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let k = self.nodes as usize;
        let automaton = match self.automaton.as_str() {
            "counter" => BuiltinAutomaton::Counter,
            "register" => BuiltinAutomaton::Register,
            other => bail!("field `automaton`: unknown kind `{other}`"),
        };
        let arbitration = match self.arbitration.as_ref().map(|a| a.policy.as_str()) {
            None | Some("lowest-index") => ArbitrationPolicy::LowestNodeIndex,
            Some("seeded-uniform") => ArbitrationPolicy::SeededUniform,
            Some(other) => bail!("field `arbitration.policy`: unknown policy `{other}`"),
        };

        let eco = &self.economics;
        let default_params = UtilityParams {
            reward_per_op: rat("economics.reward_per_op", &eco.reward_per_op)?,
            comp_cost: rat("economics.comp_cost", &eco.comp_cost)?,
            send_cost: rat("economics.send_cost", &eco.send_cost)?,
            recv_cost: rat("economics.recv_cost", &eco.recv_cost)?,
            discount: rat("economics.discount", &eco.discount)?,
        };
        let mut strategies = vec![StrategyKind::Honest; k];
        let mut node_params = vec![default_params.clone(); k];
        for over in &self.node_overrides {
            let i = over.index as usize;
            if i >= k {
                bail!("node override names unknown node {}", over.index);
            }
            if let Some(name) = &over.strategy {
                strategies[i] = strategy(name, over.lazy_delay)?;
            }
            if let Some(v) = &over.reward_per_op {
                node_params[i].reward_per_op = rat("node.reward_per_op", v)?;
            }
            if let Some(v) = &over.comp_cost {
                node_params[i].comp_cost = rat("node.comp_cost", v)?;
            }
            if let Some(v) = &over.send_cost {
                node_params[i].send_cost = rat("node.send_cost", v)?;
            }
            if let Some(v) = &over.recv_cost {
                node_params[i].recv_cost = rat("node.recv_cost", v)?;
            }
        }

        let (schedule, constraints) = match &self.partitions {
            None => (
                ScheduleSpec::Generated(ScheduleKind::StaticCut {
                    from: 0,
                    to: 0,
                    cut: BTreeSet::new(),
                }),
                AdversaryConstraints::default(),
            ),
            Some(p) => {
                let spec = match p.kind.as_str() {
                    "none" => ScheduleSpec::Generated(ScheduleKind::StaticCut {
                        from: 0,
                        to: 0,
                        cut: BTreeSet::new(),
                    }),
                    "static-cut" => ScheduleSpec::Generated(ScheduleKind::StaticCut {
                        from: p.from.context("static-cut needs `from`")?,
                        to: p.to.context("static-cut needs `to`")?,
                        cut: links(&p.cut),
                    }),
                    "oscillating" => ScheduleSpec::Generated(ScheduleKind::Oscillating {
                        period: p.period.context("oscillating needs `period`")?,
                        cut: links(&p.cut),
                        until: p.until.unwrap_or(self.horizon),
                    }),
                    "dynamic-split" => ScheduleSpec::Generated(ScheduleKind::DynamicSplit {
                        every: p.every.context("dynamic-split needs `every`")?,
                        duration: p.duration.context("dynamic-split needs `duration`")?,
                        min_block: p.min_block.unwrap_or(1),
                        quiesce_after: p.quiesce_after.unwrap_or(self.horizon / 2),
                    }),
                    "explicit" => {
                        let mut schedule =
                            PartitionSchedule::quiet(self.nodes, self.horizon);
                        for at in &p.explicit {
                            schedule.cuts.insert(at.step, links(&at.cut));
                        }
                        ScheduleSpec::Explicit(schedule)
                    }
                    other => bail!("field `partitions.kind`: unknown kind `{other}`"),
                };
                let constraints = match &p.constraints {
                    None => AdversaryConstraints::default(),
                    Some(c) => AdversaryConstraints {
                        max_links_cut: c.max_links_cut,
                        min_component_size: c.min_component_size,
                        max_partition_duration: c.max_partition_duration,
                        max_partition_frequency: c
                            .max_partition_frequency
                            .as_ref()
                            .map(|f| FrequencyBound {
                                limit: f.limit,
                                window: f.window,
                            }),
                    },
                };
                (spec, constraints)
            }
        };

        let mut workload = Vec::new();
        for (i, w) in self.workload.iter().enumerate() {
            let action = match w.op.as_str() {
                "write" => WorkloadAction::Write {
                    key: w.key.clone(),
                    value: w.value.with_context(|| format!("workload[{i}] needs `value`"))?,
                },
                "inc" => WorkloadAction::Inc {
                    key: w.key.clone(),
                    amount: w.amount.unwrap_or(1),
                },
                "read" => WorkloadAction::Read { key: w.key.clone() },
                other => bail!("workload[{i}]: unknown op `{other}`"),
            };
            workload.push(WorkloadOp {
                node: NodeId(w.node),
                step: w.step,
                action,
            });
        }

        let mut faults = Vec::new();
        for f in &self.faults {
            let fault = match f.kind.as_str() {
                "crash" => FaultKind::Crash(NodeId(f.node)),
                "recover" => FaultKind::Recover(NodeId(f.node)),
                other => bail!("fault at step {}: unknown kind `{other}`", f.step),
            };
            faults.push(FaultSpec {
                step: f.step,
                fault,
            });
        }

        let deviation_game = match &self.deviation_game {
            None => None,
            Some(g) => {
                let strategy_space = g
                    .strategies
                    .iter()
                    .map(|s| strategy(s, None))
                    .collect::<Result<Vec<_>>>()?;
                let profile = g
                    .profile
                    .iter()
                    .map(|name| {
                        g.strategies
                            .iter()
                            .position(|s| s == name)
                            .with_context(|| {
                                format!("deviation_game profile strategy `{name}` not in space")
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(DeviationGame {
                    strategy_space,
                    profile,
                })
            }
        };

        let reconcile_rule = match self.reconciliation.as_ref().map(|r| r.rule.as_str()) {
            None | Some("last-writer-wins") => ConflictRule::lww(),
            Some("first-timestamp-wins") => ConflictRule::ftw(),
            Some(other) => bail!("field `reconciliation.rule`: unknown rule `{other}`"),
        };
        let (threshold, alpha) = match &self.reputation {
            None => (Rat::new(1, 4), Rat::new(1, 2)),
            Some(r) => (
                rat("reputation.threshold", &r.threshold)?,
                rat("reputation.alpha", &r.alpha)?,
            ),
        };

        Ok(Scenario {
            name: self.name,
            seed: self.seed,
            horizon: self.horizon,
            node_count: self.nodes,
            automaton,
            strategies,
            node_params,
            penalty: PenaltyParams {
                lambda: rat("economics.lambda", &eco.lambda)?,
                minor_forfeit_fraction: rat(
                    "economics.minor_forfeit_fraction",
                    &eco.minor_forfeit_fraction,
                )?,
                audit_period: eco.audit_period,
                tau: eco.tau,
                theta_a: eco.theta_a,
            },
            escrow_deposit: rat("economics.escrow", &eco.escrow)?,
            theta_c: self.theta_c,
            delta_max: self.delta_max,
            arbitration,
            schedule,
            constraints,
            workload,
            faults,
            reconcile_rule,
            reputation_threshold: threshold,
            reputation_alpha: alpha,
            deviation_game,
        })
    }
}

/// Parses a scenario from TOML text. Parse errors carry the offending
/// line/column and field; the result is structurally validated, including
/// the adversary constraint check on the schedule.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| anyhow!("parse error: {e}"))?;
    let scenario = file.into_scenario()?;
    scenario
        .validate()
        .map_err(|e| anyhow!("constraint violation: {e}"))?;
    Ok(scenario)
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("in scenario {}", path.display()))
}

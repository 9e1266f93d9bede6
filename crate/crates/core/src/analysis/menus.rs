//! Finite deviation menus searched by the equilibrium checkers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{round_length, ScenarioConfig};
use crate::model::{players, PlayerId, Role, Value};
use crate::scalar::Scalar;
use crate::scheduler::SchedulerPolicy;
use crate::strategies::{split_for_quorum, ByzantineKind, DisagreePlan, StrategyKind};

/// Values the coalition pushes on the two sides.
pub const VALUE_A: Value = 7_000;
pub const VALUE_B: Value = 9_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTemplate {
    RoundRobin,
    SeededRandom,
    /// Hold traffic between the two sides for the default delivery bound.
    Partition,
    /// Stretch the delivery bound to cover every round, then heal.
    GstPartition,
}

impl PolicyTemplate {
    pub fn label(self) -> &'static str {
        match self {
            PolicyTemplate::RoundRobin => "round-robin",
            PolicyTemplate::SeededRandom => "seeded-random",
            PolicyTemplate::Partition => "partition",
            PolicyTemplate::GstPartition => "gst-partition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Menu {
    pub name: String,
    pub policies: Vec<PolicyTemplate>,
    pub seeds: Vec<u64>,
}

impl Menu {
    /// Scheduler policies searched for coalition deviations.
    pub fn coalition() -> Self {
        Menu {
            name: "coalition".into(),
            policies: vec![
                PolicyTemplate::RoundRobin,
                PolicyTemplate::SeededRandom,
                PolicyTemplate::Partition,
            ],
            seeds: vec![1],
        }
    }

    /// Scheduler policies searched for fault patterns, including a long
    /// partition before stabilization.
    pub fn immunity() -> Self {
        Menu {
            name: "immunity".into(),
            policies: vec![
                PolicyTemplate::RoundRobin,
                PolicyTemplate::SeededRandom,
                PolicyTemplate::Partition,
                PolicyTemplate::GstPartition,
            ],
            seeds: vec![1],
        }
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn describe(&self) -> String {
        let p: Vec<&str> = self.policies.iter().map(|p| p.label()).collect();
        format!("{}: policies [{}], seeds {:?}", self.name, p.join(", "), self.seeds)
    }
}

/// `cfg` under `tpl`, with partitions along `(a, b)`.
pub fn apply_policy<S: Scalar>(
    cfg: &ScenarioConfig<S>,
    tpl: PolicyTemplate,
    seed: u64,
    a: &BTreeSet<PlayerId>,
    b: &BTreeSet<PlayerId>,
) -> ScenarioConfig<S> {
    let mut c = cfg.clone().with_seed(seed);
    match tpl {
        PolicyTemplate::RoundRobin => c.policy = SchedulerPolicy::RoundRobin,
        PolicyTemplate::SeededRandom => c.policy = SchedulerPolicy::SeededRandom { seed },
        PolicyTemplate::Partition => {
            c.policy = SchedulerPolicy::PartitionAdversary {
                group_a: a.clone(),
                group_b: b.clone(),
                heal_at: None,
            }
        }
        PolicyTemplate::GstPartition => {
            let delta = (c.n as u64 + 1) * round_length(c.n, c.round_timeout);
            c = c.with_delta(delta);
            c.policy = SchedulerPolicy::PartitionAdversary {
                group_a: a.clone(),
                group_b: b.clone(),
                heal_at: Some(delta),
            };
        }
    }
    c
}

/// Balanced split of `pool`, lower indices to the first side.
pub fn balanced_split(pool: &BTreeSet<PlayerId>) -> (BTreeSet<PlayerId>, BTreeSet<PlayerId>) {
    split_for_quorum(pool, 0, 0).unwrap_or_else(|| (pool.clone(), BTreeSet::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllyKind {
    /// Crash after sending only to the first side and the coalition.
    Crash,
    /// Byzantine equivocators sharing the plan.
    Byzantine,
}

/// One coalition deviation from the menu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanSpec {
    pub label: String,
    pub plan: DisagreePlan,
    pub ally_kind: Option<AllyKind>,
}

/// The disagreement plans for a coalition `p0..p(k-1)`, alone and with `t`
/// allies `pk..p(k+t-1)`, split so both sides reach `quorum_r` when possible.
pub fn coalition_plans(n: usize, k: usize, t: usize, quorum_r: usize, ally: AllyKind) -> Vec<PlanSpec> {
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let mut variants = vec![0];
    if t > 0 {
        variants.push(t);
    }
    for allies in variants {
        let members: BTreeSet<PlayerId> = players(n).take(k).collect();
        let ally_set: BTreeSet<PlayerId> = players(n).skip(k).take(allies).collect();
        let rest: BTreeSet<PlayerId> = players(n).skip(k + allies).collect();
        let (need_a, need_b) = match ally {
            AllyKind::Crash => (quorum_r.saturating_sub(k + allies), quorum_r.saturating_sub(k)),
            AllyKind::Byzantine => {
                let need = quorum_r.saturating_sub(k + allies);
                (need, need)
            }
        };
        let split = split_for_quorum(&rest, need_a, need_b).or_else(|| split_for_quorum(&rest, 1, 1));
        let Some((a, b)) = split else { continue };
        let plan = DisagreePlan {
            members,
            allies: ally_set,
            partition_a: a,
            partition_b: b,
            value_a: VALUE_A,
            value_b: VALUE_B,
            round: 0,
        };
        let label = if allies == 0 {
            format!("disagree(K=p0..p{})", k - 1)
        } else {
            let kind = match ally {
                AllyKind::Crash => "crash",
                AllyKind::Byzantine => "byzantine",
            };
            format!("disagree(K=p0..p{}, {allies} {kind} allies)", k - 1)
        };
        out.push(PlanSpec {
            label,
            plan,
            ally_kind: (allies > 0).then_some(ally),
        });
    }
    out
}

/// How coalition members play in one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberPlay {
    Follow,
    Disagree,
    /// The `m` highest-indexed members bait, the rest disagree.
    Bait {
        m: usize,
    },
}

fn ally_role(spec: &PlanSpec) -> Option<Role> {
    let plan = &spec.plan;
    spec.ally_kind.map(|kind| match kind {
        AllyKind::Crash => {
            let mut to: BTreeSet<PlayerId> = plan.partition_a.union(&plan.members).copied().collect();
            to.extend(&plan.allies);
            Role::crash(StrategyKind::CrashAt {
                round: Some(0),
                final_recipients: to,
            })
        }
        AllyKind::Byzantine => Role::byzantine(StrategyKind::Byzantine(ByzantineKind::D1 { plan: plan.clone() })),
    })
}

/// Assign the plan's roles on top of `base` (others keep their roles).
pub fn plan_scenario<S: Scalar>(base: &ScenarioConfig<S>, spec: &PlanSpec, play: MemberPlay) -> ScenarioConfig<S> {
    let mut c = base.clone();
    let plan = &spec.plan;
    let members: Vec<PlayerId> = plan.members.iter().copied().collect();
    let baiters: BTreeSet<PlayerId> = match play {
        MemberPlay::Bait { m } => members.iter().rev().take(m).copied().collect(),
        _ => BTreeSet::new(),
    };
    let all_bait = baiters.len() == members.len();
    for p in &members {
        let s = match play {
            MemberPlay::Follow => StrategyKind::RationalFollow,
            MemberPlay::Disagree => StrategyKind::RationalDisagree { plan: plan.clone() },
            MemberPlay::Bait { .. } if all_bait => StrategyKind::RationalFollow,
            MemberPlay::Bait { .. } if baiters.contains(p) => StrategyKind::RationalBait {
                plan: plan.clone(),
                reveal_round: plan.round,
            },
            MemberPlay::Bait { .. } => StrategyKind::RationalDisagree { plan: plan.clone() },
        };
        c.roles[p.index()] = Role::rational(s);
    }
    if let Some(role) = ally_role(spec) {
        for p in &plan.allies {
            c.roles[p.index()] = role.clone();
        }
    }
    c
}

/// A fault pattern: role overrides plus a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultPattern {
    pub label: String,
    pub roles: Vec<(PlayerId, Role)>,
}

impl FaultPattern {
    pub fn none() -> Self {
        FaultPattern {
            label: "no faults".into(),
            roles: Vec::new(),
        }
    }

    pub fn apply<S: Scalar>(&self, base: &ScenarioConfig<S>) -> ScenarioConfig<S> {
        let mut c = base.clone();
        for (p, r) in &self.roles {
            c.roles[p.index()] = r.clone();
        }
        c
    }

    pub fn faulty(&self) -> BTreeSet<PlayerId> {
        self.roles
            .iter()
            .filter(|(_, r)| r.is_faulty())
            .map(|(p, _)| *p)
            .collect()
    }
}

/// The last `t` players as crash faults: silent from the start, or sending
/// their first statements only to the lower half of the others.
pub fn crash_patterns(n: usize, t: usize) -> Vec<FaultPattern> {
    let mut out = vec![FaultPattern::none()];
    if t == 0 || t >= n {
        return out;
    }
    let crashers: Vec<PlayerId> = players(n).skip(n - t).collect();
    let rest: BTreeSet<PlayerId> = players(n).take(n - t).collect();
    let (a, _) = balanced_split(&rest);
    out.push(FaultPattern {
        label: format!("{t} silent crashes"),
        roles: crashers
            .iter()
            .map(|p| (*p, Role::crash(StrategyKind::crash_silent())))
            .collect(),
    });
    out.push(FaultPattern {
        label: format!("{t} partial crashes"),
        roles: crashers
            .iter()
            .map(|p| {
                (
                    *p,
                    Role::crash(StrategyKind::CrashAt {
                        round: Some(0),
                        final_recipients: a.clone(),
                    }),
                )
            })
            .collect(),
    });
    out
}

/// Where Byzantine players sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    First,
    Last,
}

/// The six deviations for `s` Byzantine players at `placement`, avoiding
/// `reserved` players.
pub fn byzantine_patterns(
    n: usize,
    s: usize,
    placement: Placement,
    reserved: &BTreeSet<PlayerId>,
) -> Vec<FaultPattern> {
    let free: Vec<PlayerId> = players(n).filter(|p| !reserved.contains(p)).collect();
    if s == 0 || s > free.len() {
        return Vec::new();
    }
    let byz: BTreeSet<PlayerId> = match placement {
        Placement::First => free.iter().take(s).copied().collect(),
        Placement::Last => free.iter().rev().take(s).copied().collect(),
    };
    let rest: BTreeSet<PlayerId> = players(n).filter(|p| !byz.contains(p)).collect();
    let (a, b) = balanced_split(&rest);
    let plan = DisagreePlan {
        members: byz.clone(),
        allies: BTreeSet::new(),
        partition_a: a.clone(),
        partition_b: b,
        value_a: VALUE_A,
        value_b: VALUE_B,
        round: 0,
    };
    let kinds = vec![
        ByzantineKind::D1 { plan },
        ByzantineKind::D2,
        ByzantineKind::D3 { subset: a },
        ByzantineKind::D4,
        ByzantineKind::D5,
        ByzantineKind::D6,
    ];
    kinds
        .into_iter()
        .map(|kind| {
            let tag = serde_json::to_value(&kind).expect("serializable")["deviation"]
                .as_str()
                .unwrap_or("?")
                .to_uppercase();
            FaultPattern {
                label: format!("{s} byzantine {tag} ({placement:?})"),
                roles: byz
                    .iter()
                    .map(|p| (*p, Role::byzantine(StrategyKind::Byzantine(kind.clone()))))
                    .collect(),
            }
        })
        .collect()
}

/// Partition sides used by policies when no coalition plan fixes them:
/// a balanced split of the non-faulty players.
pub fn default_sides(n: usize, faulty: &BTreeSet<PlayerId>) -> (BTreeSet<PlayerId>, BTreeSet<PlayerId>) {
    let pool: BTreeSet<PlayerId> = players(n).filter(|p| !faulty.contains(p)).collect();
    balanced_split(&pool)
}

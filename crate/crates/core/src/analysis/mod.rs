//! Outcome classification, utilities and equilibrium falsification.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::model::{Digest, PlayerId, Role, RoleKind, UtilityParams, Value};
use crate::scalar::Scalar;
use crate::scheduler::validate_schedule;
use crate::sim::{simulate, RunOptions, SimError};
use crate::strategies::{punish_effect, DisagreePlan, Exposure};
use crate::trace::RunTrace;

pub mod bounds;
pub mod checks;
pub mod menus;
pub mod suites;

pub use bounds::{
    feasible_disagreement, map_crash_robust_to_immune, map_crash_robust_to_robust, map_immune_to_crash_robust,
    map_robust_to_crash_robust, min_baiters, BoundError,
};
pub use checks::{
    check_crash_robustness, check_effective_baiting, check_k_resilience, check_mixed_immunity, check_robustness,
    check_strong_baiting, check_t_crash_immunity,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("schedule violates the delivery bound or fairness window")]
    InvalidTrace,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    /// All deciding non-deviating players chose `value` and none is stuck.
    /// `None` only when no non-deviating player decided and none is live.
    Agreement {
        value: Option<Value>,
    },
    Disagreement {
        decisions: BTreeMap<PlayerId, Value>,
    },
    NonTermination {
        undecided: BTreeSet<PlayerId>,
    },
}

impl Outcome {
    pub fn is_agreement(&self) -> bool {
        matches!(self, Outcome::Agreement { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Agreement { .. } => "agreement",
            Outcome::Disagreement { .. } => "disagreement",
            Outcome::NonTermination { .. } => "non-termination",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Agreement { value: Some(v) } => write!(f, "agreement on {v}"),
            Outcome::Agreement { value: None } => write!(f, "agreement (vacuous)"),
            Outcome::Disagreement { decisions } => {
                let vals: BTreeSet<&Value> = decisions.values().collect();
                write!(f, "disagreement on {vals:?}")
            }
            Outcome::NonTermination { undecided } => {
                let ids: Vec<String> = undecided.iter().map(|p| p.to_string()).collect();
                write!(f, "non-termination ({})", ids.join(","))
            }
        }
    }
}

/// Classify a finished run from the non-deviating players' point of view.
pub fn classify(trace: &RunTrace) -> Result<Outcome, AnalysisError> {
    if !validate_schedule(trace, trace.header.delta, trace.header.fairness_window) {
        return Err(AnalysisError::InvalidTrace);
    }
    let end = &trace.end;
    let honest = || {
        (0..trace.header.n as u32)
            .map(PlayerId)
            .filter(|p| !end.deviating.contains(p))
    };
    let decisions: BTreeMap<PlayerId, Value> = honest()
        .filter_map(|p| end.decisions[p.index()].map(|v| (p, v)))
        .collect();
    let values: BTreeSet<Value> = decisions.values().copied().collect();
    if values.len() > 1 {
        return Ok(Outcome::Disagreement { decisions });
    }
    let undecided: BTreeSet<PlayerId> = honest()
        .filter(|p| !end.crashed.contains(p) && end.decisions[p.index()].is_none())
        .collect();
    if !undecided.is_empty() {
        return Ok(Outcome::NonTermination { undecided });
    }
    Ok(Outcome::Agreement {
        value: values.into_iter().next(),
    })
}

/// Utility per player. Faulty players have no entry.
pub type UtilityVector<S> = BTreeMap<PlayerId, S>;

/// Utilities of a run. Rational players are paid by outcome (coalition
/// members of `plan` gain `g` from a disagreement, other rationals suffer
/// `p_victim`), correct players get `u_correct`, and when `baiting` is on the
/// exposure adjustments are added.
pub fn assign_utilities<S: Scalar>(
    outcome: &Outcome,
    roles: &[Role],
    plan: Option<&DisagreePlan>,
    exposures: &[Exposure],
    params: &UtilityParams<S>,
    baiting: bool,
) -> UtilityVector<S> {
    let mut out = UtilityVector::new();
    for (i, role) in roles.iter().enumerate() {
        let p = PlayerId(i as u32);
        let u = match role.kind {
            RoleKind::Crash | RoleKind::Byzantine => continue,
            RoleKind::Correct => params.u_correct,
            RoleKind::Rational => match outcome {
                Outcome::Agreement { .. } => params.u_agree,
                Outcome::Disagreement { .. } if plan.is_some_and(|pl| pl.members.contains(&p)) => params.g,
                Outcome::Disagreement { .. } => params.p_victim,
                Outcome::NonTermination { .. } => params.p_nonterm,
            },
        };
        out.insert(p, u);
    }
    if baiting {
        for (p, adj) in punish_effect(exposures, params) {
            if let Some(u) = out.get_mut(&p) {
                *u = *u + adj;
            }
        }
    }
    out
}

/// What a non-faulty player gets from the protocol's guarantee alone:
/// `u_agree` for agreement, `p_victim` for a fork, `p_nonterm` otherwise.
pub fn protocol_utility<S: Scalar>(outcome: &Outcome, params: &UtilityParams<S>) -> S {
    match outcome {
        Outcome::Agreement { .. } => params.u_agree,
        Outcome::Disagreement { .. } => params.p_victim,
        Outcome::NonTermination { .. } => params.p_nonterm,
    }
}

/// One simulated and scored run.
#[derive(Debug, Clone)]
pub struct RunEval<S> {
    pub outcome: Outcome,
    pub utilities: UtilityVector<S>,
    pub trace: RunTrace,
}

pub fn evaluate<S: Scalar>(cfg: &ScenarioConfig<S>) -> Result<RunEval<S>, AnalysisError> {
    let out = simulate(cfg, RunOptions::default())?;
    let outcome = classify(&out.trace)?;
    let utilities = assign_utilities(
        &outcome,
        &cfg.roles,
        cfg.coalition_plan(),
        &out.trace.end.exposures,
        &cfg.utility,
        cfg.baiting,
    );
    Ok(RunEval {
        outcome,
        utilities,
        trace: out.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    KResilience,
    TCrashImmunity,
    KtCrashRobustness,
    KtRobustness,
    TtImmunity,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::KResilience => "k-resilience",
            Property::TCrashImmunity => "t-crash-immunity",
            Property::KtCrashRobustness => "kt-crash-robustness",
            Property::KtRobustness => "kt-robustness",
            Property::TtImmunity => "tt-immunity",
        })
    }
}

/// How coalition gains are quantified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerdictMode {
    /// Every coalition member strictly gains.
    #[default]
    Strong,
    /// Some coalition member strictly gains.
    Weak,
    /// Some non-faulty player loses utility.
    Immunity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct Witness<S> {
    pub plan: String,
    pub policy: String,
    pub seed: u64,
    pub scenario: ScenarioConfig<S>,
    pub outcome: Outcome,
    pub utilities: UtilityVector<S>,
    pub baseline: UtilityVector<S>,
    pub trace_digest: Digest,
}

impl<S> Witness<S> {
    pub fn id(&self) -> String {
        self.trace_digest.short()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case", bound(deserialize = "S: Scalar"))]
pub enum Verdict<S> {
    ViolationFound { witness: Box<Witness<S>> },
    NoViolationFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar"))]
pub struct EquilibriumReport<S> {
    pub property: Property,
    pub mode: VerdictMode,
    /// Description of the menu searched.
    pub menu: String,
    pub runs: usize,
    pub verdict: Verdict<S>,
}

impl<S> EquilibriumReport<S> {
    pub fn violation(&self) -> Option<&Witness<S>> {
        match &self.verdict {
            Verdict::ViolationFound { witness } => Some(witness),
            Verdict::NoViolationFound => None,
        }
    }

    pub fn is_violation(&self) -> bool {
        self.violation().is_some()
    }

    pub fn verdict_label(&self) -> &'static str {
        if self.is_violation() {
            "violation"
        } else {
            "no-violation"
        }
    }
}

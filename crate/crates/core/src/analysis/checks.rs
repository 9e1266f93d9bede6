//! Equilibrium falsifiers. Each check searches an explicit menu and reports
//! the first violating run it finds; "no violation" is relative to the menu.

use std::collections::BTreeSet;

use crate::config::ScenarioConfig;
use crate::model::{PlayerId, RoleKind};
use crate::scalar::Scalar;

use super::bounds::min_baiters;
use super::menus::{
    apply_policy, byzantine_patterns, coalition_plans, crash_patterns, default_sides, plan_scenario, AllyKind,
    FaultPattern, MemberPlay, Menu, Placement, PlanSpec,
};
use super::{
    evaluate, protocol_utility, AnalysisError, EquilibriumReport, Outcome, Property, RunEval, Verdict, VerdictMode,
    Witness,
};

fn witness<S: Scalar>(
    plan: &str,
    cfg: &ScenarioConfig<S>,
    eval: &RunEval<S>,
    baseline: super::UtilityVector<S>,
) -> Box<Witness<S>> {
    Box::new(Witness {
        plan: plan.to_string(),
        policy: cfg.policy.label(),
        seed: cfg.seed,
        scenario: cfg.clone(),
        outcome: eval.outcome.clone(),
        utilities: eval.utilities.clone(),
        baseline,
        trace_digest: eval.trace.digest(),
    })
}

fn report<S>(
    property: Property,
    mode: VerdictMode,
    menu: String,
    runs: usize,
    found: Option<Box<Witness<S>>>,
) -> EquilibriumReport<S> {
    EquilibriumReport {
        property,
        mode,
        menu,
        runs,
        verdict: match found {
            Some(witness) => Verdict::ViolationFound { witness },
            None => Verdict::NoViolationFound,
        },
    }
}

fn gains<S: Scalar>(members: &BTreeSet<PlayerId>, dev: &RunEval<S>, base: &RunEval<S>, mode: VerdictMode) -> bool {
    let gain = |p: &PlayerId| match (dev.utilities.get(p), base.utilities.get(p)) {
        (Some(d), Some(b)) => *d > *b,
        _ => false,
    };
    match mode {
        VerdictMode::Weak => members.iter().any(gain),
        _ => !members.is_empty() && members.iter().all(gain),
    }
}

/// Search coalition plans; `play` decides how members behave in the
/// deviating run.
fn coalition_search<S: Scalar>(
    base: &ScenarioConfig<S>,
    plans: &[PlanSpec],
    menu: &Menu,
    play: MemberPlay,
    mode: VerdictMode,
    runs: &mut usize,
) -> Result<Option<Box<Witness<S>>>, AnalysisError> {
    for spec in plans {
        let dev_cfg = plan_scenario(base, spec, play);
        let follow_cfg = plan_scenario(base, spec, MemberPlay::Follow);
        for &tpl in &menu.policies {
            for &seed in &menu.seeds {
                let a = &spec.plan.partition_a;
                let b = &spec.plan.partition_b;
                let dev = evaluate(&apply_policy(&dev_cfg, tpl, seed, a, b))?;
                let baseline = evaluate(&apply_policy(&follow_cfg, tpl, seed, a, b))?;
                *runs += 2;
                if gains(&spec.plan.members, &dev, &baseline, mode) {
                    let cfg = apply_policy(&dev_cfg, tpl, seed, a, b);
                    return Ok(Some(witness(&spec.label, &cfg, &dev, baseline.utilities)));
                }
            }
        }
    }
    Ok(None)
}

/// Search fault patterns for a run where some non-faulty player does worse
/// than under agreement.
fn immunity_search<S: Scalar>(
    base: &ScenarioConfig<S>,
    patterns: &[FaultPattern],
    menu: &Menu,
    runs: &mut usize,
) -> Result<Option<Box<Witness<S>>>, AnalysisError> {
    for pat in patterns {
        let cfg = pat.apply(base);
        let (a, b) = default_sides(cfg.n, &pat.faulty());
        for &tpl in &menu.policies {
            for &seed in &menu.seeds {
                let run_cfg = apply_policy(&cfg, tpl, seed, &a, &b);
                let eval = evaluate(&run_cfg)?;
                *runs += 1;
                let agreed = protocol_utility(&Outcome::Agreement { value: None }, &cfg.utility);
                let hurt = cfg
                    .roles
                    .iter()
                    .any(|r| !r.is_faulty() && protocol_utility(&eval.outcome, &cfg.utility) < agreed);
                if hurt {
                    let mut baseline = eval.utilities.clone();
                    for u in baseline.values_mut() {
                        *u = agreed;
                    }
                    return Ok(Some(witness(&pat.label, &run_cfg, &eval, baseline)));
                }
            }
        }
    }
    Ok(None)
}

/// Coalitions of up to `k` rationals (no faults) against all-follow.
pub fn check_k_resilience<S: Scalar>(
    base: &ScenarioConfig<S>,
    menu: &Menu,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    let plans: Vec<PlanSpec> = coalition_plans(base.n, base.k, 0, base.quorum_r, AllyKind::Crash);
    let mut runs = 0;
    let found = coalition_search(base, &plans, menu, MemberPlay::Disagree, VerdictMode::Strong, &mut runs)?;
    Ok(report(
        Property::KResilience,
        VerdictMode::Strong,
        menu.describe(),
        runs,
        found,
    ))
}

/// Up to `t` crash faults must leave every non-faulty player with agreement.
pub fn check_t_crash_immunity<S: Scalar>(
    base: &ScenarioConfig<S>,
    menu: &Menu,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    let mut runs = 0;
    let patterns = crash_patterns(base.n, base.t);
    let found = immunity_search(base, &patterns, menu, &mut runs)?;
    Ok(report(
        Property::TCrashImmunity,
        VerdictMode::Immunity,
        menu.describe(),
        runs,
        found,
    ))
}

/// `k` rationals, optionally joined by `t` crash allies, against the same
/// crash pattern with the rationals following, then every crash pattern of
/// up to `t` players with the rationals following. With `k = 0` only the
/// second part applies. When `base.baiting` is set the highest-indexed
/// `min_baiters` members bait instead of disagreeing.
pub fn check_crash_robustness<S: Scalar>(
    base: &ScenarioConfig<S>,
    coalition_menu: &Menu,
    immunity_menu: &Menu,
    mode: VerdictMode,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    if base.k == 0 {
        let mut r = check_t_crash_immunity(base, immunity_menu)?;
        r.property = Property::KtCrashRobustness;
        return Ok(r);
    }
    let plans = coalition_plans(base.n, base.k, base.t, base.quorum_r, AllyKind::Crash);
    let play = bait_play(base);
    let mut runs = 0;
    let menus = format!("{}; {}", coalition_menu.describe(), immunity_menu.describe());
    if let Some(w) = coalition_search(base, &plans, coalition_menu, play, mode, &mut runs)? {
        return Ok(report(Property::KtCrashRobustness, mode, menus, runs, Some(w)));
    }
    let patterns = crash_patterns(base.n, base.t);
    let found = immunity_search(&following(base), &patterns, immunity_menu, &mut runs)?;
    let mode = if found.is_some() { VerdictMode::Immunity } else { mode };
    Ok(report(Property::KtCrashRobustness, mode, menus, runs, found))
}

fn bait_play<S: Scalar>(base: &ScenarioConfig<S>) -> MemberPlay {
    if !base.baiting {
        return MemberPlay::Disagree;
    }
    match min_baiters(base.n, base.k, base.t) {
        Ok(m) => MemberPlay::Bait { m },
        Err(_) => MemberPlay::Bait { m: 1 },
    }
}

/// `k` rationals with `t` Byzantine allies, plus every single-type
/// Byzantine deviation by `t` players while rationals follow.
pub fn check_robustness<S: Scalar>(
    base: &ScenarioConfig<S>,
    coalition_menu: &Menu,
    immunity_menu: &Menu,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    let mut runs = 0;
    let menus = format!("{}; {}", coalition_menu.describe(), immunity_menu.describe());
    if base.k > 0 {
        let plans = coalition_plans(base.n, base.k, base.t, base.quorum_r, AllyKind::Byzantine);
        let play = bait_play(base);
        if let Some(w) = coalition_search(base, &plans, coalition_menu, play, VerdictMode::Strong, &mut runs)? {
            return Ok(report(
                Property::KtRobustness,
                VerdictMode::Strong,
                menus,
                runs,
                Some(w),
            ));
        }
    }
    let follow = following(base);
    let mut patterns = byzantine_patterns(base.n, base.t, Placement::Last, &rationals(base));
    patterns.extend(byzantine_patterns(base.n, base.t, Placement::First, &rationals(base)));
    let found = immunity_search(&follow, &patterns, immunity_menu, &mut runs)?;
    let mode = if found.is_some() {
        VerdictMode::Immunity
    } else {
        VerdictMode::Strong
    };
    Ok(report(Property::KtRobustness, mode, menus, runs, found))
}

/// `t_crash` crash faults together with `t_byz` Byzantine players.
pub fn check_mixed_immunity<S: Scalar>(
    base: &ScenarioConfig<S>,
    t_crash: usize,
    t_byz: usize,
    menu: &Menu,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    let n = base.n;
    let mut cfg = base.clone().with_budgets(base.k, t_crash + t_byz);
    cfg.mixed_faults = true;
    let mut runs = 0;
    let crash_sets = crash_patterns(n, t_crash);
    let reserved: BTreeSet<PlayerId> = crash_sets.iter().flat_map(|p| p.faulty()).collect();
    let byz_sets = if t_byz == 0 {
        vec![FaultPattern::none()]
    } else {
        byzantine_patterns(n, t_byz, Placement::First, &reserved)
    };
    let mut patterns = Vec::new();
    for c in &crash_sets {
        for b in &byz_sets {
            let mut roles = c.roles.clone();
            roles.extend(b.roles.iter().cloned());
            patterns.push(FaultPattern {
                label: format!("{} + {}", c.label, b.label),
                roles,
            });
        }
    }
    let found = immunity_search(&cfg, &patterns, menu, &mut runs)?;
    Ok(report(
        Property::TtImmunity,
        VerdictMode::Immunity,
        menu.describe(),
        runs,
        found,
    ))
}

fn rationals<S: Scalar>(base: &ScenarioConfig<S>) -> BTreeSet<PlayerId> {
    crate::model::players(base.n).take(base.k).collect()
}

/// `base` with the first `k` players as following rationals.
fn following<S: Scalar>(base: &ScenarioConfig<S>) -> ScenarioConfig<S> {
    let mut c = base.clone();
    for p in rationals(base) {
        c.roles[p.index()] = crate::model::Role::rational(crate::strategies::StrategyKind::RationalFollow);
    }
    c
}

/// True iff every run where the baiting profile is played ends in agreement.
/// Plans without baiters are vacuously fine.
pub fn check_effective_baiting<S: Scalar>(
    base: &ScenarioConfig<S>,
    plans: &[(PlanSpec, usize)],
    menu: &Menu,
) -> Result<bool, AnalysisError> {
    let mut cfg = base.clone();
    cfg.baiting = true;
    for (spec, m) in plans {
        if *m == 0 {
            continue;
        }
        let c = plan_scenario(&cfg, spec, MemberPlay::Bait { m: *m });
        for &tpl in &menu.policies {
            for &seed in &menu.seeds {
                let eval = evaluate(&apply_policy(
                    &c,
                    tpl,
                    seed,
                    &spec.plan.partition_a,
                    &spec.plan.partition_b,
                ))?;
                if !eval.outcome.is_agreement() {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// True iff, for every plan, the coalition's summed utility with the
/// baiting profile played is at most its sum under all-follow.
pub fn check_strong_baiting<S: Scalar>(
    base: &ScenarioConfig<S>,
    plans: &[(PlanSpec, usize)],
    menu: &Menu,
) -> Result<bool, AnalysisError> {
    let mut cfg = base.clone();
    cfg.baiting = true;
    for (spec, m) in plans {
        let all_rational = spec
            .plan
            .members
            .iter()
            .all(|p| cfg.roles[p.index()].kind != RoleKind::Crash)
            && spec.ally_kind.is_none();
        if !all_rational {
            continue;
        }
        let bait = plan_scenario(&cfg, spec, MemberPlay::Bait { m: *m });
        let follow = plan_scenario(&cfg, spec, MemberPlay::Follow);
        for &tpl in &menu.policies {
            for &seed in &menu.seeds {
                let (a, b) = (&spec.plan.partition_a, &spec.plan.partition_b);
                let dev = evaluate(&apply_policy(&bait, tpl, seed, a, b))?;
                let base_run = evaluate(&apply_policy(&follow, tpl, seed, a, b))?;
                let sum = |e: &RunEval<S>| {
                    spec.plan
                        .members
                        .iter()
                        .filter_map(|p| e.utilities.get(p))
                        .fold(S::zero(), |acc, u| acc + *u)
                };
                if sum(&dev) > sum(&base_run) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Plans from the crash-robustness menu paired with the baiter count used
/// for them.
pub fn baiting_plans(n: usize, k: usize, t: usize, quorum_r: usize) -> Vec<(PlanSpec, usize)> {
    let m = min_baiters(n, k, t).unwrap_or(1.min(k));
    coalition_plans(n, k, t, quorum_r, AllyKind::Crash)
        .into_iter()
        .map(|p| (p, m))
        .collect()
}

//! Named check suites, one per result being reproduced. Each suite runs a
//! grid of cells and records, per cell, the verdict it got and whether that
//! matches what the result predicts.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProtocolVariant, ScenarioConfig};
use crate::model::{PlayerId, RoleKind, UtilityParams};
use crate::protocol::immune_params;
use crate::scalar::Scalar;
use crate::sim::{simulate, RunOptions};

use super::bounds::{
    feasible_disagreement, map_crash_robust_to_immune, map_crash_robust_to_robust, map_immune_to_crash_robust,
    map_robust_to_crash_robust, min_baiters,
};
use super::checks::{
    baiting_plans, check_crash_robustness, check_effective_baiting, check_k_resilience, check_mixed_immunity,
    check_robustness,
};
use super::menus::{apply_policy, byzantine_patterns, default_sides, Menu, Placement};
use super::{classify, AnalysisError, EquilibriumReport, Outcome, VerdictMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremName {
    Thm1,
    Cor1,
    Lem2,
    Thm2,
    Thm3,
    Lem3,
    Thm4,
    Thm5,
    Thm6,
}

impl TheoremName {
    pub const ALL: [TheoremName; 9] = [
        TheoremName::Thm1,
        TheoremName::Cor1,
        TheoremName::Lem2,
        TheoremName::Thm2,
        TheoremName::Thm3,
        TheoremName::Lem3,
        TheoremName::Thm4,
        TheoremName::Thm5,
        TheoremName::Thm6,
    ];
}

impl fmt::Display for TheoremName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("serializable");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

impl FromStr for TheoremName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| format!("unknown theorem `{s}`"))
    }
}

/// Options shared by all suites.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions<S> {
    /// Largest `n` visited.
    pub cap: usize,
    /// Added to the quorum every cell would otherwise use. Nonzero values
    /// sabotage the protocol and should make suites fail.
    pub quorum_offset: i64,
    pub utility: UtilityParams<S>,
    pub seeds: Vec<u64>,
}

impl<S: Scalar> SuiteOptions<S> {
    pub fn new(cap: usize) -> Self {
        SuiteOptions {
            cap,
            quorum_offset: 0,
            utility: UtilityParams::defaults(),
            seeds: vec![1],
        }
    }
}

impl<S> SuiteOptions<S> {
    fn quorum(&self, r: usize, n: usize) -> usize {
        (r as i64 + self.quorum_offset).clamp(1, n as i64) as usize
    }
}

/// One row of a suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub r: usize,
    pub property: String,
    pub verdict: String,
    pub witness_id: String,
    pub expected: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub cells: Vec<CellResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| !c.pass)
    }
}

fn cell<S>(n: usize, k: usize, t: usize, r: usize, rep: &EquilibriumReport<S>, expect_violation: bool) -> CellResult {
    CellResult {
        n,
        k,
        t,
        r,
        property: rep.property.to_string(),
        verdict: rep.verdict_label().into(),
        witness_id: rep.violation().map(|w| w.id()).unwrap_or_default(),
        expected: if expect_violation { "violation" } else { "no-violation" }.into(),
        pass: rep.is_violation() == expect_violation,
    }
}

fn flag_cell(n: usize, k: usize, t: usize, r: usize, property: &str, ok: bool, expected: &str) -> CellResult {
    CellResult {
        n,
        k,
        t,
        r,
        property: property.into(),
        verdict: if ok { expected.into() } else { format!("not {expected}") },
        witness_id: String::new(),
        expected: expected.into(),
        pass: ok,
    }
}

/// Base scenario for a cell.
pub fn cell_scenario<S: Scalar>(
    n: usize,
    k: usize,
    t: usize,
    r: usize,
    variant: ProtocolVariant,
    utility: &UtilityParams<S>,
) -> ScenarioConfig<S> {
    let mut c = ScenarioConfig::new(n, r).with_budgets(k, t).with_protocol(variant);
    c.utility = *utility;
    c
}

fn worker_threads() -> usize {
    std::env::var("RCL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&v: &usize| v > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `f` over `items` on a pool capped by `RCL_THREADS`, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}

/// All `(n, k, t)` with `3 <= n <= cap` and `k + t < n`, in sweep order.
pub fn boundary_cells(lo: usize, cap: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for n in lo.max(1)..=cap {
        for k in 0..n {
            for t in 0..n - k {
                out.push((n, k, t));
            }
        }
    }
    out
}

/// Crash-robustness verdict for one boundary cell at quorum `n - t`.
pub fn boundary_cell<S: Scalar>(
    n: usize,
    k: usize,
    t: usize,
    opts: &SuiteOptions<S>,
    baiting: bool,
) -> Result<EquilibriumReport<S>, AnalysisError> {
    let r = opts.quorum(n - t, n);
    let mut base = cell_scenario(n, k, t, r, ProtocolVariant::Base, &opts.utility);
    base.baiting = baiting;
    let seeds = opts.seeds.clone();
    check_crash_robustness(
        &base,
        &Menu::coalition().with_seeds(seeds.clone()),
        &Menu::immunity().with_seeds(seeds),
        VerdictMode::Strong,
    )
}

fn thm1<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let cells = boundary_cells(3, opts.cap);
    let rows = par_map(&cells, |&(n, k, t)| -> Result<Vec<CellResult>, AnalysisError> {
        let r = opts.quorum(n - t, n);
        let rep = boundary_cell(n, k, t, opts, false)?;
        let mut out = vec![cell(n, k, t, r, &rep, feasible_disagreement(n, k, t))];
        if rep.is_violation() {
            if let Ok(m) = min_baiters(n, k, t) {
                let baited = boundary_cell(n, k, t, opts, true)?;
                // crashes alone still split quorums when 2t >= n
                let mut row = cell(n, k, t, r, &baited, feasible_disagreement(n, 0, t));
                row.property = "baiting-escape".into();
                out.push(row);
                let base = cell_scenario(n, k, t, r, ProtocolVariant::Base, &opts.utility);
                let plans: Vec<_> = baiting_plans(n, k, t, r).into_iter().map(|(p, _)| (p, m)).collect();
                let eff = check_effective_baiting(&base, &plans, &Menu::coalition().with_seeds(opts.seeds.clone()))?;
                out.push(flag_cell(n, k, t, r, "effective-baiting", eff, "effective"));
            }
        }
        Ok(out)
    });
    Ok(rows
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect())
}

fn cor1<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let menu = Menu::coalition().with_seeds(opts.seeds.clone());
    let r1 = opts.quorum(3, 5);
    let weak = cell_scenario(5, 1, 2, r1, ProtocolVariant::Base, &opts.utility);
    let rep = check_k_resilience(&weak, &menu)?;
    let mut c1 = cell(5, 1, 2, r1, &rep, true);
    if let Some(w) = rep.violation() {
        let paid = w.utilities.get(&PlayerId(0)).copied();
        c1.pass &= paid == Some(opts.utility.g) && opts.utility.g > opts.utility.u_agree;
        c1.pass &= matches!(w.outcome, Outcome::Disagreement { .. });
    }
    let r2 = opts.quorum(4, 5);
    let strict = cell_scenario(5, 1, 1, r2, ProtocolVariant::Base, &opts.utility);
    let rep2 = check_k_resilience(&strict, &menu)?;
    Ok(vec![c1, cell(5, 1, 1, r2, &rep2, false)])
}

/// Quorums `immune_params(n, s)` for `n <= cap`, as `(n, s, r)`.
fn immune_family(lo: usize, cap: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for n in lo..=cap {
        for s in 0..n {
            if let Ok(p) = immune_params(n, s) {
                out.push((n, s, p.quorum_r));
            }
        }
    }
    out
}

fn lem2<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let fam = immune_family(1, opts.cap);
    let rows = par_map(&fam, |&(n, s, r)| {
        let r = opts.quorum(r, n);
        let base = cell_scenario(n, s, s, r, ProtocolVariant::Base, &opts.utility);
        let rep = check_crash_robustness(
            &base,
            &Menu::coalition().with_seeds(opts.seeds.clone()),
            &Menu::immunity().with_seeds(opts.seeds.clone()),
            VerdictMode::Strong,
        )?;
        Ok(cell(n, s, s, r, &rep, false))
    });
    rows.into_iter().collect()
}

fn menus<S>(opts: &SuiteOptions<S>) -> (Menu, Menu) {
    (
        Menu::coalition().with_seeds(opts.seeds.clone()),
        Menu::immunity().with_seeds(opts.seeds.clone()),
    )
}

/// Grid for the carry-over suites: immune quorums with `n` in `4..=min(cap, 7)`.
fn carry_family<S>(opts: &SuiteOptions<S>) -> Vec<(usize, usize, usize)> {
    immune_family(4, opts.cap.min(7))
        .into_iter()
        .filter(|&(_, s, _)| s >= 1)
        .collect()
}

/// A cell of an implication suite: the antecedent verdict and, when it
/// holds, the consequent verdict.
fn implication(
    n: usize,
    k: usize,
    t: usize,
    r: usize,
    name: &str,
    antecedent: bool,
    consequent: impl FnOnce() -> Result<(bool, String), AnalysisError>,
) -> Result<CellResult, AnalysisError> {
    if !antecedent {
        return Ok(CellResult {
            n,
            k,
            t,
            r,
            property: name.into(),
            verdict: "premise-fails".into(),
            witness_id: String::new(),
            expected: "premise-fails or holds".into(),
            pass: true,
        });
    }
    let (holds, witness_id) = consequent()?;
    Ok(CellResult {
        n,
        k,
        t,
        r,
        property: name.into(),
        verdict: if holds { "holds" } else { "fails" }.into(),
        witness_id,
        expected: "holds".into(),
        pass: holds,
    })
}

fn passes<S>(rep: &EquilibriumReport<S>) -> (bool, String) {
    (!rep.is_violation(), rep.violation().map(|w| w.id()).unwrap_or_default())
}

fn thm2<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let (cm, im) = menus(opts);
    let mut grid = Vec::new();
    for (n, s, r) in carry_family(opts) {
        for k in 0..=s {
            for t in 0..=s {
                let (k2, t2) = map_robust_to_crash_robust(k, t);
                if k + t >= 1 && k + t < n && k2 + t2 < n {
                    grid.push((n, k, t, opts.quorum(r, n)));
                }
            }
        }
    }
    let rows = par_map(&grid, |&(n, k, t, r)| {
        let sigma = cell_scenario(n, k, t, r, ProtocolVariant::Extended, &opts.utility);
        let pre = check_robustness(&sigma, &cm, &im)?;
        implication(n, k, t, r, "robust=>crash-robust", !pre.is_violation(), || {
            let (k2, t2) = map_robust_to_crash_robust(k, t);
            let c = cell_scenario(n, k2, t2, r, ProtocolVariant::Extended, &opts.utility);
            Ok(passes(&check_crash_robustness(&c, &cm, &im, VerdictMode::Strong)?))
        })
    });
    rows.into_iter().collect()
}

fn thm3<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let (cm, im) = menus(opts);
    let mut grid = Vec::new();
    for (n, s, r) in carry_family(opts) {
        for tc in 0..=s {
            for tb in 0..=s {
                let (k2, t2) = map_immune_to_crash_robust(tc, tb);
                if tc + tb >= 1 && tc + tb < n && k2 + t2 < n {
                    grid.push((n, tc, tb, opts.quorum(r, n)));
                }
            }
        }
    }
    let rows = par_map(&grid, |&(n, tc, tb, r)| {
        let sigma = cell_scenario(n, 0, 0, r, ProtocolVariant::Extended, &opts.utility);
        let pre = check_mixed_immunity(&sigma, tc, tb, &im)?;
        // k column carries t', t column the Byzantine budget
        implication(n, tc, tb, r, "immune=>crash-robust", !pre.is_violation(), || {
            let (k2, t2) = map_immune_to_crash_robust(tc, tb);
            let c = cell_scenario(n, k2, t2, r, ProtocolVariant::Extended, &opts.utility);
            Ok(passes(&check_crash_robustness(&c, &cm, &im, VerdictMode::Strong)?))
        })
    });
    rows.into_iter().collect()
}

fn crash_grid<S>(opts: &SuiteOptions<S>, keep: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize, usize, usize)> {
    let mut grid = Vec::new();
    for (n, s, r) in carry_family(opts) {
        for k in 0..=s + 1 {
            for t in 0..=s + 1 {
                if k + t >= 1 && k + t < n && keep(k, t) {
                    grid.push((n, k, t, opts.quorum(r, n)));
                }
            }
        }
    }
    grid
}

fn thm4<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let (cm, im) = menus(opts);
    let grid = crash_grid(opts, |k, t| k >= t);
    let rows = par_map(&grid, |&(n, k, t, r)| {
        let sigma = cell_scenario(n, k, t, r, ProtocolVariant::Base, &opts.utility);
        let pre = check_crash_robustness(&sigma, &cm, &im, VerdictMode::Strong)?;
        implication(n, k, t, r, "crash-robust=>robust", !pre.is_violation(), || {
            let (k2, t2) = map_crash_robust_to_robust(k, t, false).expect("k >= t");
            let c = cell_scenario(n, k2, t2, r, ProtocolVariant::Extended, &opts.utility);
            Ok(passes(&check_robustness(&c, &cm, &im)?))
        })
    });
    rows.into_iter().collect()
}

fn thm5<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let (cm, im) = menus(opts);
    let grid = crash_grid(opts, |k, t| k >= t && k >= 1);
    let rows = par_map(&grid, |&(n, k, t, r)| {
        let mut sigma = cell_scenario(n, k, t, r, ProtocolVariant::Base, &opts.utility);
        sigma.baiting = true;
        let pre = check_crash_robustness(&sigma, &cm, &im, VerdictMode::Strong)?;
        let eff = check_effective_baiting(&sigma, &baiting_plans(n, k, t, r), &cm)?;
        let (k2, t2) = (k - t, t);
        let mut ext = cell_scenario(n, k2, t2, r, ProtocolVariant::Extended, &opts.utility);
        ext.baiting = true;
        let eff2 = check_effective_baiting(&ext, &baiting_plans(n, k2, t2, r), &cm)?;
        implication(
            n,
            k,
            t,
            r,
            "baiting-carry-over",
            !pre.is_violation() && eff && eff2,
            || Ok(passes(&check_robustness(&ext, &cm, &im)?)),
        )
    });
    rows.into_iter().collect()
}

fn thm6<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let (cm, im) = menus(opts);
    let grid = crash_grid(opts, |k, t| t >= k);
    let rows = par_map(&grid, |&(n, k, t, r)| {
        let sigma = cell_scenario(n, k, t, r, ProtocolVariant::Base, &opts.utility);
        let pre = check_crash_robustness(&sigma, &cm, &im, VerdictMode::Strong)?;
        implication(n, k, t, r, "crash-robust=>immune", !pre.is_violation(), || {
            let (tc, tb) = map_crash_robust_to_immune(k, t, false).expect("t >= k");
            let c = cell_scenario(n, 0, 0, r, ProtocolVariant::Extended, &opts.utility);
            Ok(passes(&check_mixed_immunity(&c, tc, tb, &im)?))
        })
    });
    rows.into_iter().collect()
}

/// Outcome of one deviation run under the extended protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRun {
    pub n: usize,
    pub s: usize,
    pub label: String,
    pub policy: String,
    pub outcome: Outcome,
    /// The blacklist matched the equivocators at every non-Byzantine player.
    pub blacklists_exact: bool,
    pub equivocators: std::collections::BTreeSet<PlayerId>,
    pub trace_digest: crate::model::Digest,
    pub scenario: ScenarioConfig<f64>,
}

/// Every deviation D1 to D6 by `s` players (first and last placement) plus
/// a fault-free run, under the extended protocol with `immune_params(n, s)`.
pub fn deviation_runs(n: usize, s: usize, seeds: &[u64]) -> Result<Vec<DeviationRun>, AnalysisError> {
    let r = immune_params(n, s).map(|p| p.quorum_r).unwrap_or(n);
    let base = cell_scenario::<f64>(n, 0, s, r, ProtocolVariant::Extended, &UtilityParams::defaults());
    let mut patterns = vec![super::menus::FaultPattern::none()];
    for placement in [Placement::First, Placement::Last] {
        patterns.extend(byzantine_patterns(n, s, placement, &Default::default()));
    }
    let menu = Menu::immunity().with_seeds(seeds.to_vec());
    let mut jobs = Vec::new();
    for pat in &patterns {
        for &tpl in &menu.policies {
            for &seed in &menu.seeds {
                jobs.push((pat.clone(), tpl, seed));
            }
        }
    }
    let runs = par_map(&jobs, |(pat, tpl, seed)| -> Result<DeviationRun, AnalysisError> {
        let cfg = pat.apply(&base);
        let (a, b) = default_sides(n, &pat.faulty());
        let cfg = apply_policy(&cfg, *tpl, *seed, &a, &b);
        let out = simulate(&cfg, RunOptions::default())?;
        let outcome = classify(&out.trace)?;
        let equivocators = &out.equivocators;
        let blacklists_exact = crate::model::players(n)
            .filter(|p| cfg.role(*p).kind != RoleKind::Byzantine)
            .all(|p| out.trace.end.blacklists.get(&p).cloned().unwrap_or_default() == *equivocators);
        Ok(DeviationRun {
            n,
            s,
            label: pat.label.clone(),
            policy: cfg.policy.label(),
            outcome,
            blacklists_exact,
            equivocators: out.equivocators.clone(),
            trace_digest: out.trace.digest(),
            scenario: cfg,
        })
    });
    runs.into_iter().collect()
}

fn lem3<S: Scalar>(opts: &SuiteOptions<S>) -> Result<Vec<CellResult>, AnalysisError> {
    let mut out = Vec::new();
    for (n, s) in [(4usize, 1usize), (7, 2)] {
        if n > opts.cap {
            continue;
        }
        let r = immune_params(n, s).map(|p| p.quorum_r).unwrap_or(n);
        let runs = deviation_runs(n, s, &opts.seeds)?;
        let mut exercised: std::collections::BTreeMap<&str, bool> = std::collections::BTreeMap::new();
        for run in &runs {
            if ["D1", "D5", "D6"].iter().any(|d| run.label.contains(d)) {
                *exercised.entry(run.label.as_str()).or_default() |= !run.equivocators.is_empty();
            }
        }
        for (label, ok) in exercised {
            out.push(flag_cell(
                n,
                0,
                s,
                r,
                &format!("{label} equivocates"),
                ok,
                "equivocation seen",
            ));
        }
        for run in runs {
            let ok = run.outcome.is_agreement() && run.blacklists_exact;
            out.push(CellResult {
                n,
                k: 0,
                t: s,
                r,
                property: format!("{} / {}", run.label, run.policy),
                verdict: format!(
                    "{}{}",
                    run.outcome.label(),
                    if run.blacklists_exact { "" } else { ", wrong blacklist" }
                ),
                witness_id: run.trace_digest.short(),
                expected: "agreement".into(),
                pass: ok,
            });
        }
    }
    Ok(out)
}

/// Run one named suite.
pub fn run_suite<S: Scalar>(name: TheoremName, opts: &SuiteOptions<S>) -> Result<SuiteReport, AnalysisError> {
    let cells = match name {
        TheoremName::Thm1 => thm1(opts)?,
        TheoremName::Cor1 => cor1(opts)?,
        TheoremName::Lem2 => lem2(opts)?,
        TheoremName::Thm2 => thm2(opts)?,
        TheoremName::Thm3 => thm3(opts)?,
        TheoremName::Lem3 => lem3(opts)?,
        TheoremName::Thm4 => thm4(opts)?,
        TheoremName::Thm5 => thm5(opts)?,
        TheoremName::Thm6 => thm6(opts)?,
    };
    Ok(SuiteReport {
        name: name.to_string(),
        cells,
    })
}

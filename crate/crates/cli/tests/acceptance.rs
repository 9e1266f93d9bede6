//! Acceptance checks: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rcl_core::analysis::bounds::{
    map_crash_robust_to_immune, map_crash_robust_to_robust, map_immune_to_crash_robust, map_robust_to_crash_robust,
    min_baiters,
};
use rcl_core::analysis::checks::{baiting_plans, check_crash_robustness, check_effective_baiting, check_k_resilience};
use rcl_core::analysis::menus::plan_scenario;
use rcl_core::analysis::menus::{apply_policy, coalition_plans, crash_patterns, AllyKind, MemberPlay, Menu};
use rcl_core::analysis::suites::{boundary_cell, boundary_cells, cell_scenario, deviation_runs, par_map, SuiteOptions};
use rcl_core::analysis::{evaluate, Outcome, VerdictMode};
use rcl_core::model::{players, Digest, PlayerId, Role, RoleKind, UtilityParams};
use rcl_core::protocol::immune_params;
use rcl_core::sim::{run_trace, simulate, RunOptions};
use rcl_core::strategies::StrategyKind;
use rcl_core::{ProtocolVariant, ScenarioConfig};

/// A run to replay in the determinism check.
struct Replayable {
    scenario: ScenarioConfig<f64>,
    digest: Digest,
}

struct Line {
    ok: bool,
    detail: String,
}

fn line(ok: bool, detail: impl Into<String>) -> Line {
    Line {
        ok,
        detail: detail.into(),
    }
}

fn within(d: Duration, secs: u64) -> bool {
    d <= Duration::from_secs(secs)
}

// Oracles.

fn fork_possible(n: usize, k: usize, t: usize) -> bool {
    // two quorums of n - t drawn from k coalition players on both sides,
    // t crashed players on one side each and the rest split
    k + 2 * t >= n
}

/// Fewest coalition defectors `d` so that the remaining `k - d` members,
/// counted on both sides, can no longer give both sides of some split of
/// the other `n - k` players a quorum `n - t`.
fn brute_defectors(n: usize, k: usize, t: usize) -> Option<usize> {
    if k == 0 || !fork_possible(n, k, t) {
        return None;
    }
    let others = n - k;
    let forkable = |stay: usize| {
        (0u64..1 << others).any(|side| {
            let a = side.count_ones() as usize;
            stay + a >= n - t && stay + (others - a) >= n - t
        })
    };
    (0u64..1 << k)
        .filter(|d| !forkable(k - d.count_ones() as usize))
        .map(|d| d.count_ones() as usize)
        .filter(|&d| d > 0)
        .min()
}

fn brute_quorum(n: usize, s: usize) -> Option<usize> {
    // two quorums overlap in more than s players, and a quorum survives s silent ones
    (1..=n).find(|&r| 2 * r > n + s && r + s <= n)
}

// Criteria 1 and 3 share their cells.

#[derive(Clone, PartialEq, Debug)]
struct BoundaryRow {
    n: usize,
    k: usize,
    t: usize,
    violation: bool,
    baited: Option<(bool, VerdictMode)>,
    effective: Option<bool>,
}

fn boundary(utility: &UtilityParams<f64>, witnesses: &mut Vec<Replayable>) -> Vec<BoundaryRow> {
    let mut opts = SuiteOptions::<f64>::new(8);
    opts.utility = *utility;
    let cells = boundary_cells(3, 8);
    let rows = par_map(&cells, |&(n, k, t)| {
        let rep = boundary_cell(n, k, t, &opts, false).expect("cell runs");
        let mut wit = Vec::new();
        if let Some(w) = rep.violation() {
            wit.push(Replayable {
                scenario: w.scenario.clone(),
                digest: w.trace_digest,
            });
        }
        let mut row = BoundaryRow {
            n,
            k,
            t,
            violation: rep.is_violation(),
            baited: None,
            effective: None,
        };
        if let (true, Ok(m)) = (rep.is_violation(), min_baiters(n, k, t)) {
            let baited = boundary_cell(n, k, t, &opts, true).expect("baited cell runs");
            if let Some(w) = baited.violation() {
                wit.push(Replayable {
                    scenario: w.scenario.clone(),
                    digest: w.trace_digest,
                });
            }
            row.baited = Some((baited.is_violation(), baited.mode));
            let base = cell_scenario(n, k, t, n - t, ProtocolVariant::Base, &opts.utility);
            let plans: Vec<_> = baiting_plans(n, k, t, n - t).into_iter().map(|(p, _)| (p, m)).collect();
            row.effective = Some(check_effective_baiting(&base, &plans, &Menu::coalition()).expect("baiting runs"));
        }
        (row, wit)
    });
    rows.into_iter()
        .map(|(row, w)| {
            witnesses.extend(w);
            row
        })
        .collect()
}

fn criterion1(rows: &[BoundaryRow], took: Duration) -> Line {
    let wrong: Vec<_> = rows
        .iter()
        .filter(|r| r.violation != fork_possible(r.n, r.k, r.t))
        .collect();
    let found = rows.iter().filter(|r| r.violation).count();
    line(
        wrong.is_empty() && rows.len() == (3..=8).map(|n| n * (n + 1) / 2).sum::<usize>() && within(took, 120),
        format!(
            "{} cells, {} witnesses, {} mismatches, {:.1?}",
            rows.len(),
            found,
            wrong.len(),
            took
        ),
    )
}

fn criterion3(rows: &[BoundaryRow], took: Duration) -> Line {
    let mut flipped = 0;
    let mut crash_forks = 0;
    let mut bad = Vec::new();
    for r in rows.iter().filter(|r| r.violation) {
        let Ok(m) = min_baiters(r.n, r.k, r.t) else { continue };
        if m > r.k {
            continue;
        }
        match r.baited {
            Some((false, _)) => flipped += 1,
            // crashes alone split the n - t quorums once 2t >= n
            Some((true, VerdictMode::Immunity)) if 2 * r.t >= r.n => crash_forks += 1,
            _ => bad.push((r.n, r.k, r.t)),
        }
        if r.effective != Some(true) {
            bad.push((r.n, r.k, r.t));
        }
    }
    let mut oracle_bad = Vec::new();
    for n in 1..=12 {
        for k in 0..=n {
            for t in 0..=n - k {
                if min_baiters(n, k, t).ok() != brute_defectors(n, k, t) {
                    oracle_bad.push((n, k, t));
                }
            }
        }
    }
    line(
        bad.is_empty() && oracle_bad.is_empty() && flipped > 0 && within(took, 120),
        format!(
            "{flipped} cells flipped, {crash_forks} left to crash-only forks, {} failures, min_baiters mismatches {}, {:.1?}",
            bad.len(),
            oracle_bad.len(),
            took
        ),
    )
}

fn criterion2(utility: &UtilityParams<f64>, witnesses: &mut Vec<Replayable>) -> (Line, Vec<bool>) {
    let t0 = Instant::now();
    let menu = Menu::coalition();
    let weak = cell_scenario(5, 1, 2, 3, ProtocolVariant::Base, utility);
    let rep = check_k_resilience(&weak, &menu).expect("k-resilience runs");
    let strict = cell_scenario(5, 1, 1, 4, ProtocolVariant::Base, utility);
    let rep2 = check_k_resilience(&strict, &menu).expect("k-resilience runs");
    let mut ok = !rep2.is_violation();
    match rep.violation() {
        Some(w) => {
            ok &= matches!(w.outcome, Outcome::Disagreement { .. });
            ok &= w.utilities.get(&PlayerId(0)) == Some(&utility.g) && utility.g > utility.u_agree;
            witnesses.push(Replayable {
                scenario: w.scenario.clone(),
                digest: w.trace_digest,
            });
        }
        None => ok = false,
    }
    let took = t0.elapsed();
    let l = line(
        ok && within(took, 1),
        format!(
            "r=3 {}, r=4 {}, {:.1?}",
            rep.verdict_label(),
            rep2.verdict_label(),
            took
        ),
    );
    (l, vec![rep.is_violation(), rep2.is_violation()])
}

fn criterion4(witnesses: &mut Vec<Replayable>) -> Line {
    let t0 = Instant::now();
    let mut table_bad = 0;
    for n in 1..=30 {
        for s in 0..=10 {
            let got = immune_params(n, s).ok().map(|p| p.quorum_r);
            if got != brute_quorum(n, s) || got.is_none() != (n <= 3 * s) {
                table_bad += 1;
            }
        }
    }

    let (n, s) = (7, 2);
    let r = immune_params(n, s).expect("immune quorum").quorum_r;
    let base = cell_scenario::<f64>(n, 2, 2, r, ProtocolVariant::Base, &UtilityParams::defaults());
    let spec = coalition_plans(n, 2, 2, r, AllyKind::Crash)
        .into_iter()
        .find(|p| p.plan.allies.len() == 2)
        .expect("plan with crash allies");
    let attack = plan_scenario(&base, &spec, MemberPlay::Disagree);
    let allies: Vec<PlayerId> = spec.plan.allies.iter().copied().collect();
    let choices = |p: PlayerId| -> Vec<Role> {
        let others: Vec<PlayerId> = players(n).filter(|q| *q != p).collect();
        let mut v = Vec::new();
        for round in 0..2 {
            for mask in 0u32..1 << others.len() {
                let to: BTreeSet<PlayerId> = others
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, q)| *q)
                    .collect();
                v.push(Role::crash(StrategyKind::CrashAt {
                    round: Some(round),
                    final_recipients: to,
                }));
            }
        }
        v
    };
    let (c0, c1) = (choices(allies[0]), choices(allies[1]));
    let menu = Menu::coalition();
    let mut jobs = Vec::new();
    for a in &c0 {
        for b in &c1 {
            jobs.push((a, b));
        }
    }
    let members = spec.plan.members.clone();
    let tallies = par_map(&jobs, |(a, b)| {
        let mut cfg = attack.clone();
        cfg.roles[allies[0].index()] = (*a).clone();
        cfg.roles[allies[1].index()] = (*b).clone();
        let (mut forks, mut stalls, mut unpaid) = (0usize, 0usize, 0usize);
        for &tpl in &menu.policies {
            let c = apply_policy(&cfg, tpl, 1, &spec.plan.partition_a, &spec.plan.partition_b);
            let ev = evaluate(&c).expect("attack runs");
            match ev.outcome {
                Outcome::Disagreement { .. } => forks += 1,
                Outcome::NonTermination { .. } => {
                    stalls += 1;
                    // stalling must leave every coalition member below agreement
                    if members
                        .iter()
                        .any(|p| ev.utilities.get(p).is_none_or(|u| *u >= c.utility.u_agree))
                    {
                        unpaid += 1;
                    }
                }
                Outcome::Agreement { .. } => {}
            }
        }
        (forks, stalls, unpaid)
    });
    let (forks, stalls, unpaid) = tallies
        .iter()
        .fold((0, 0, 0), |acc, t| (acc.0 + t.0, acc.1 + t.1, acc.2 + t.2));

    let rep =
        check_crash_robustness(&base, &Menu::coalition(), &Menu::immunity(), VerdictMode::Strong).expect("check runs");
    if let Some(w) = rep.violation() {
        witnesses.push(Replayable {
            scenario: w.scenario.clone(),
            digest: w.trace_digest,
        });
    }
    let took = t0.elapsed();
    line(
        table_bad == 0 && forks == 0 && unpaid == 0 && !rep.is_violation() && within(took, 60),
        format!(
            "quorum table mismatches {table_bad}, {} attack runs: {forks} forks, {stalls} stalls ({unpaid} profitable), check {}, {:.1?}",
            jobs.len() * menu.policies.len(),
            rep.verdict_label(),
            took
        ),
    )
}

fn criterion5(witnesses: &mut Vec<Replayable>) -> Line {
    let t0 = Instant::now();
    let mut runs = 0;
    let mut bad = Vec::new();
    let mut seen_equivocation = BTreeSet::new();
    for (n, s) in [(4usize, 1usize), (7, 2)] {
        for run in deviation_runs(n, s, &[1]).expect("deviation runs") {
            runs += 1;
            let out = simulate(&run.scenario, RunOptions::default()).expect("run");
            let byz: BTreeSet<PlayerId> = players(n)
                .filter(|p| run.scenario.role(*p).kind == RoleKind::Byzantine)
                .collect();
            let decided: BTreeSet<_> = players(n)
                .filter(|p| !byz.contains(p))
                .map(|p| out.trace.end.decisions[p.index()])
                .collect();
            let exact = players(n)
                .filter(|p| !byz.contains(p))
                .all(|p| out.trace.end.blacklists.get(&p).cloned().unwrap_or_default() == out.equivocators);
            let clean = byz.is_empty() && !out.trace.end.blacklists.is_empty();
            if !out.equivocators.is_subset(&byz) || decided.len() != 1 || decided.contains(&None) || !exact || clean {
                bad.push(format!("n={n} {} / {}", run.label, run.policy));
            }
            if !out.equivocators.is_empty() {
                seen_equivocation.insert(run.label.split(' ').nth(2).unwrap_or_default().to_string());
            }
            witnesses.push(Replayable {
                scenario: run.scenario.clone(),
                digest: run.trace_digest,
            });
        }
    }
    let mut clean_runs = 0;
    for n in [4usize, 7] {
        let s = (n - 1) / 3;
        let r = immune_params(n, s).expect("immune quorum").quorum_r;
        let base = cell_scenario::<f64>(n, 0, s, r, ProtocolVariant::Extended, &UtilityParams::defaults());
        for pat in crash_patterns(n, s) {
            for &tpl in &Menu::immunity().policies {
                for seed in 1..=3 {
                    let cfg = apply_policy(&pat.apply(&base), tpl, seed, &BTreeSet::new(), &BTreeSet::new());
                    clean_runs += 1;
                    let out = simulate(&cfg, RunOptions::default()).expect("run");
                    if !out.trace.end.blacklists.is_empty() {
                        bad.push(format!("n={n} {} accused someone", pat.label));
                    }
                }
            }
        }
    }
    let took = t0.elapsed();
    line(
        bad.is_empty() && within(took, 60),
        format!(
            "{runs} deviation runs, {clean_runs} fault-free runs, equivocation seen in {seen_equivocation:?}, failures {bad:?}, {took:.1?}"
        ),
    )
}

fn criterion6() -> Line {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    for a in 0..=10usize {
        for b in 0..=10usize {
            // a rational ally that may also crash counts once on each side
            if map_robust_to_crash_robust(a, b) != (a + b, b) {
                bad.push(("robust->crash-robust", a, b));
            }
            if map_immune_to_crash_robust(a, b) != (b, a + b) {
                bad.push(("immune->crash-robust", a, b));
            }
            let robust = a.checked_sub(b).map(|d| (d, b)).ok_or(());
            if map_crash_robust_to_robust(a, b, false).map_err(|_| ()) != robust
                || map_crash_robust_to_robust(a, b, true).is_ok()
            {
                bad.push(("crash-robust->robust", a, b));
            }
            let immune = b.checked_sub(a).map(|d| (d, a)).ok_or(());
            if map_crash_robust_to_immune(a, b, false).map_err(|_| ()) != immune
                || map_crash_robust_to_immune(a, b, true).is_ok()
            {
                bad.push(("crash-robust->immune", a, b));
            }
        }
    }
    let spot = [
        (map_robust_to_crash_robust(1, 1), (2, 1)),
        (map_immune_to_crash_robust(2, 1), (1, 3)),
        (map_crash_robust_to_robust(3, 1, false).unwrap_or((99, 99)), (2, 1)),
        (map_crash_robust_to_immune(1, 3, false).unwrap_or((99, 99)), (2, 1)),
    ];
    let spot_ok = spot.iter().all(|(got, want)| got == want)
        && map_crash_robust_to_robust(1, 2, false).is_err()
        && map_crash_robust_to_immune(2, 1, false).is_err();
    let took = t0.elapsed();
    line(
        bad.is_empty() && spot_ok && within(took, 1),
        format!(
            "{} table mismatches over 121 inputs, spot rows {}, {took:.1?}",
            bad.len(),
            if spot_ok { "ok" } else { "wrong" }
        ),
    )
}

fn criterion8(witnesses: &[Replayable]) -> Line {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let mut bad = Vec::new();
    for (i, w) in witnesses.iter().enumerate() {
        let plain = run_trace(&w.scenario, RunOptions::default()).expect("witness reruns");
        if plain.digest() != w.digest {
            bad.push(format!("#{i} digest"));
            continue;
        }
        let full = run_trace(&w.scenario, RunOptions { record_states: true }).expect("witness reruns");
        let path = dir.path().join(format!("w{i}.jsonl"));
        std::fs::write(&path, full.to_jsonl()).expect("trace written");
        let status = Command::new(env!("CARGO_BIN_EXE_rcl"))
            .arg("replay")
            .arg(&path)
            .output()
            .expect("rcl runs")
            .status;
        if !status.success() {
            bad.push(format!("#{i} replay exit {status}"));
        }
    }
    line(
        bad.is_empty() && !witnesses.is_empty(),
        format!(
            "{} runs replayed, failures {bad:?}, {:.1?}",
            witnesses.len(),
            t0.elapsed()
        ),
    )
}

fn main() -> ExitCode {
    let defaults = UtilityParams::<f64>::defaults();
    let alternate = UtilityParams::<f64>::alternate();
    let mut witnesses = Vec::new();
    let mut lines = Vec::new();

    let t0 = Instant::now();
    let rows = boundary(&defaults, &mut witnesses);
    let took = t0.elapsed();
    lines.push((1, criterion1(&rows, took)));
    let (c2, cor_default) = criterion2(&defaults, &mut witnesses);
    lines.push((2, c2));
    lines.push((3, criterion3(&rows, took)));
    lines.push((4, criterion4(&mut witnesses)));
    lines.push((5, criterion5(&mut witnesses)));
    lines.push((6, criterion6()));

    let mut scratch = Vec::new();
    let alt_rows = boundary(&alternate, &mut scratch);
    let (alt2, cor_alt) = criterion2(&alternate, &mut scratch);
    let same = alt_rows == rows && cor_alt == cor_default && alt2.ok;
    let diffs = alt_rows.iter().zip(&rows).filter(|(a, b)| a != b).count();
    lines.push((
        7,
        line(
            same,
            format!(
                "{} boundary rows, {diffs} differ; small-quorum verdicts {cor_alt:?}",
                alt_rows.len()
            ),
        ),
    ));

    lines.push((8, criterion8(&witnesses)));

    let mut all = true;
    for (i, l) in &lines {
        all &= l.ok;
        println!("criterion {i}: {} ({})", if l.ok { "PASS" } else { "FAIL" }, l.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

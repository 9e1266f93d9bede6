//! Library side of the `rcl` binary: scenario files, the four commands and
//! their exit codes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rcl_core::analysis::suites::{cell_scenario, par_map, run_suite, SuiteOptions, TheoremName};
use rcl_core::analysis::{
    check_crash_robustness, check_k_resilience, check_robustness, check_t_crash_immunity, classify, menus::Menu,
    AnalysisError, EquilibriumReport, Outcome, UtilityVector, VerdictMode,
};
use rcl_core::model::UtilityParams;
use rcl_core::sim::{simulate, RunOptions};
use rcl_core::trace::{first_divergence, RunTrace, TraceError};
use rcl_core::{validate_schedule, ProtocolVariant, ScenarioConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAP: usize = 8;

const SCHEDULE_BROKEN: &str = "the schedule broke the delivery or fairness bound";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("n = {requested} exceeds the cap {cap}; pass --force to run anyway")]
    CapExceeded { requested: usize, cap: usize },
    #[error("divergence at {}: {what}", step.map_or("end".to_string(), |s| format!("step {s}")))]
    Divergence { step: Option<u64>, what: String },
    #[error("{failed} of {total} cells failed")]
    CellsFailed { failed: usize, total: usize },
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::InvalidTrace(_) => 3,
            CliError::CapExceeded { .. } => 4,
            CliError::Divergence { .. } => 5,
            CliError::CellsFailed { .. } | CliError::Sim(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidTrace => CliError::InvalidTrace(SCHEDULE_BROKEN.into()),
            AnalysisError::Sim(s) => CliError::Sim(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MenuPreset {
    /// One scheduler seed per policy.
    #[default]
    Standard,
    /// Three seeds per policy.
    Wide,
}

impl MenuPreset {
    pub fn seeds(self) -> Vec<u64> {
        match self {
            MenuPreset::Standard => vec![1],
            MenuPreset::Wide => vec![1, 2, 3],
        }
    }

    pub fn menus(self) -> (Menu, Menu) {
        (
            Menu::coalition().with_seeds(self.seeds()),
            Menu::immunity().with_seeds(self.seeds()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Valuation {
    #[default]
    Default,
    Alternate,
}

impl Valuation {
    pub fn params(self) -> UtilityParams<f64> {
        match self {
            Valuation::Default => UtilityParams::defaults(),
            Valuation::Alternate => UtilityParams::alternate(),
        }
    }
}

/// First key of `raw` (other than explicit nulls) that did not survive a
/// parse and re-serialize round trip.
fn dropped_key(raw: &serde_json::Value, kept: &serde_json::Value, path: String) -> Option<String> {
    use serde_json::Value;
    match (raw, kept) {
        (Value::Object(r), Value::Object(k)) => r.iter().find_map(|(key, v)| {
            let here = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            match k.get(key) {
                Some(kv) => dropped_key(v, kv, here),
                None if v.is_null() => None,
                None => Some(here),
            }
        }),
        (Value::Array(r), Value::Array(k)) => r
            .iter()
            .zip(k)
            .enumerate()
            .find_map(|(i, (rv, kv))| dropped_key(rv, kv, format!("{path}[{i}]"))),
        _ => None,
    }
}

/// On-disk scenario: the configuration plus an optional checker menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioConfig<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub menu: Option<MenuPreset>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let schema = |e: serde_json::Error| CliError::Schema(e.to_string());
        let raw: serde_json::Value = serde_json::from_str(text).map_err(schema)?;
        let file: ScenarioFile = serde_json::from_value(raw.clone()).map_err(schema)?;
        let kept = serde_json::to_value(&file).expect("scenario serializes");
        if let Some(path) = dropped_key(&raw, &kept, String::new()) {
            return Err(CliError::Schema(format!("unknown field `{path}`")));
        }
        file.scenario.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub outcome: Outcome,
    pub utilities: UtilityVector<f64>,
    pub steps: u64,
    pub trace_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub property: String,
    pub verdict: String,
    pub runs: usize,
    pub witness_id: Option<String>,
}

impl<S> From<&EquilibriumReport<S>> for CheckSummary {
    fn from(r: &EquilibriumReport<S>) -> Self {
        CheckSummary {
            property: r.property.to_string(),
            verdict: r.verdict_label().into(),
            runs: r.runs,
            witness_id: r.violation().map(|w| w.id()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub valuation: Option<Valuation>,
}

/// Simulate a scenario file, optionally writing its trace.
pub fn run(file: &ScenarioFile, args: &RunArgs) -> Result<RunSummary, CliError> {
    let mut cfg = file.scenario.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.valuation {
        cfg.utility = v.params();
    }
    let out = simulate(&cfg, RunOptions { record_states: true }).map_err(|e| CliError::Sim(e.to_string()))?;
    if let Some(path) = &args.out {
        let mut w = BufWriter::new(File::create(path)?);
        out.trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    let outcome = classify(&out.trace)?;
    let plan = cfg.coalition_plan().cloned();
    let utilities = rcl_core::analysis::assign_utilities(
        &outcome,
        &cfg.roles,
        plan.as_ref(),
        &out.trace.end.exposures,
        &cfg.utility,
        cfg.baiting,
    );
    let check = match file.menu {
        Some(preset) => Some(check_scenario(&cfg, preset)?),
        None => None,
    };
    Ok(RunSummary {
        outcome,
        utilities,
        steps: out.trace.end.steps,
        trace_digest: out.trace.digest().to_hex(),
        check,
    })
}

/// The robustness check matching the scenario's protocol variant, with the
/// scenario's own budgets.
fn check_scenario(cfg: &ScenarioConfig<f64>, preset: MenuPreset) -> Result<CheckSummary, CliError> {
    let (cm, im) = preset.menus();
    let mut base = cfg.clone();
    base.roles = vec![rcl_core::model::Role::correct(); cfg.n];
    let report = match cfg.protocol {
        ProtocolVariant::Base => check_crash_robustness(&base, &cm, &im, VerdictMode::Strong)?,
        ProtocolVariant::Extended => check_robustness(&base, &cm, &im)?,
    };
    Ok(CheckSummary::from(&report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepProperty {
    KResilience,
    CrashImmunity,
    CrashRobustness,
    Robustness,
}

/// Inclusive range parsed from `a..b`, `a..=b` or a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub lo: usize,
    pub hi: usize,
}

impl Span {
    pub fn iter(self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }

    pub fn is_empty(self) -> bool {
        self.lo > self.hi
    }
}

impl std::str::FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad range `{s}`"));
        match s.split_once("..") {
            Some((a, b)) => Ok(Span {
                lo: num(a)?,
                hi: num(b.trim_start_matches('='))?,
            }),
            None => {
                let v = num(s)?;
                Ok(Span { lo: v, hi: v })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub n: Span,
    pub k: Span,
    pub t: Span,
    pub property: SweepProperty,
    pub menu: MenuPreset,
    pub cap: usize,
    pub force: bool,
    pub quorum_offset: i64,
    pub valuation: Valuation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub r: usize,
    pub property: String,
    pub verdict: String,
    pub witness_id: String,
}

pub fn check_cap(requested: usize, cap: usize, force: bool) -> Result<(), CliError> {
    if requested > cap && !force {
        return Err(CliError::CapExceeded { requested, cap });
    }
    Ok(())
}

/// One row per `(n, k, t)` with `k + t < n`, at quorum `n - t` plus the
/// offset, in `n, k, t` order.
pub fn sweep(args: &SweepArgs) -> Result<Vec<SweepRow>, CliError> {
    if !args.n.is_empty() {
        check_cap(args.n.hi, args.cap, args.force)?;
    }
    let mut cells = Vec::new();
    for n in args.n.iter().filter(|&n| n >= 1) {
        for k in args.k.iter() {
            for t in args.t.iter() {
                if k + t < n {
                    cells.push((n, k, t));
                }
            }
        }
    }
    let (cm, im) = args.menu.menus();
    let utility = args.valuation.params();
    let rows = par_map(&cells, |&(n, k, t)| -> Result<SweepRow, CliError> {
        let r = (n as i64 - t as i64 + args.quorum_offset).clamp(1, n as i64) as usize;
        let variant = match args.property {
            SweepProperty::Robustness => ProtocolVariant::Extended,
            _ => ProtocolVariant::Base,
        };
        let base = cell_scenario(n, k, t, r, variant, &utility);
        let rep = match args.property {
            SweepProperty::KResilience => check_k_resilience(&base, &cm)?,
            SweepProperty::CrashImmunity => check_t_crash_immunity(&base, &im)?,
            SweepProperty::CrashRobustness => check_crash_robustness(&base, &cm, &im, VerdictMode::Strong)?,
            SweepProperty::Robustness => check_robustness(&base, &cm, &im)?,
        };
        Ok(SweepRow {
            n,
            k,
            t,
            r,
            property: rep.property.to_string(),
            verdict: rep.verdict_label().into(),
            witness_id: rep.violation().map(|w| w.id()).unwrap_or_default(),
        })
    });
    rows.into_iter().collect()
}

/// CSV with a header row, even when `rows` is empty.
pub fn write_csv<T: Serialize>(rows: &[T], headers: &[&str], w: impl Write) -> Result<(), CliError> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let err = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    wr.write_record(headers).map_err(err)?;
    for row in rows {
        wr.serialize(row).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}

pub const SWEEP_HEADERS: [&str; 7] = ["n", "k", "t", "r", "property", "verdict", "witness-id"];
pub const CELL_HEADERS: [&str; 9] = [
    "n",
    "k",
    "t",
    "r",
    "property",
    "verdict",
    "witness-id",
    "expected",
    "pass",
];

#[derive(Debug, Clone)]
pub struct TheoremArgs {
    pub name: TheoremName,
    pub cap: usize,
    pub quorum_offset: i64,
    pub menu: MenuPreset,
    pub valuation: Valuation,
}

pub fn check_theorem(args: &TheoremArgs) -> Result<rcl_core::analysis::suites::SuiteReport, CliError> {
    let mut opts = SuiteOptions::new(args.cap);
    opts.quorum_offset = args.quorum_offset;
    opts.utility = args.valuation.params();
    opts.seeds = args.menu.seeds();
    Ok(run_suite(args.name, &opts)?)
}

/// Re-run the scenario embedded in a trace and compare.
pub fn replay(path: &Path) -> Result<RunTrace, CliError> {
    let expected = RunTrace::read_jsonl(BufReader::new(File::open(path)?)).map_err(|e| match e {
        TraceError::Parse { .. } => CliError::Schema(e.to_string()),
        TraceError::Io(io) => CliError::Io(io),
        other => CliError::InvalidTrace(other.to_string()),
    })?;
    replay_trace(&expected)
}

pub fn replay_trace(expected: &RunTrace) -> Result<RunTrace, CliError> {
    if !validate_schedule(expected, expected.header.delta, expected.header.fairness_window) {
        return Err(CliError::InvalidTrace(SCHEDULE_BROKEN.into()));
    }
    let mut cfg: ScenarioConfig<f64> =
        serde_json::from_value(expected.header.scenario.clone()).map_err(|e| CliError::Schema(e.to_string()))?;
    cfg.seed = expected.header.seed;
    let record_states = expected.events.iter().any(|e| e.state.is_some());
    let actual = simulate(&cfg, RunOptions { record_states })
        .map_err(|e| CliError::Sim(e.to_string()))?
        .trace;
    match first_divergence(expected, &actual) {
        None => Ok(actual),
        Some(d) => Err(CliError::Divergence {
            step: d.step,
            what: d.what,
        }),
    }
}

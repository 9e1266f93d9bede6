use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rcl_cli::{
    check_cap, check_theorem, replay, run, sweep, write_csv, CliError, MenuPreset, RunArgs, ScenarioFile, Span,
    SweepArgs, SweepProperty, TheoremArgs, Valuation, CELL_HEADERS, DEFAULT_CAP, SWEEP_HEADERS,
};
use rcl_core::analysis::suites::TheoremName;

#[derive(Parser)]
#[command(name = "rcl", version, about = "Rational and crash fault consensus laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario file and print its outcome and utilities.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON-lines trace here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        valuation: Option<Valuation>,
    },
    /// Check one property over a grid of (n, k, t) and print a CSV table.
    Sweep {
        /// Inclusive range such as `3..6`.
        #[arg(long)]
        n: Span,
        #[arg(long, default_value = "0..8")]
        k: Span,
        #[arg(long, default_value = "0..8")]
        t: Span,
        #[arg(long, value_enum, default_value = "crash-robustness")]
        property: SweepProperty,
        #[arg(long, value_enum, default_value = "standard")]
        menu: MenuPreset,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[arg(long)]
        force: bool,
        /// Added to the quorum n - t of every cell.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        quorum_offset: i64,
        #[arg(long, value_enum, default_value = "default")]
        valuation: Valuation,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named check suite; exits 1 if any cell fails.
    CheckTheorem {
        name: TheoremName,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        quorum_offset: i64,
        #[arg(long, value_enum, default_value = "standard")]
        menu: MenuPreset,
        #[arg(long, value_enum, default_value = "default")]
        valuation: Valuation,
        /// Write every cell as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a trace and compare it move by move.
    Replay { trace: PathBuf },
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            valuation,
        } => {
            let file = ScenarioFile::load(&scenario)?;
            let summary = run(&file, &RunArgs { seed, out, valuation })?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Sweep {
            n,
            k,
            t,
            property,
            menu,
            cap,
            force,
            quorum_offset,
            valuation,
            out,
        } => {
            let rows = sweep(&SweepArgs {
                n,
                k,
                t,
                property,
                menu,
                cap,
                force,
                quorum_offset,
                valuation,
            })?;
            write_csv(&rows, &SWEEP_HEADERS, output(&out)?)?;
        }
        Command::CheckTheorem {
            name,
            cap,
            force,
            quorum_offset,
            menu,
            valuation,
            out,
        } => {
            check_cap(cap, DEFAULT_CAP, force)?;
            let report = check_theorem(&TheoremArgs {
                name,
                cap,
                quorum_offset,
                menu,
                valuation,
            })?;
            if out.is_some() {
                write_csv(&report.cells, &CELL_HEADERS, output(&out)?)?;
            }
            let failed: Vec<_> = report.failures().collect();
            for c in &failed {
                eprintln!(
                    "FAIL n={} k={} t={} r={} {}: got {}, expected {} {}",
                    c.n, c.k, c.t, c.r, c.property, c.verdict, c.expected, c.witness_id
                );
            }
            let status = if failed.is_empty() { "PASS" } else { "FAIL" };
            println!(
                "{name}: {status} ({} cells, {} failed)",
                report.cells.len(),
                failed.len()
            );
            if !failed.is_empty() {
                return Err(CliError::CellsFailed {
                    failed: failed.len(),
                    total: report.cells.len(),
                });
            }
        }
        Command::Replay { trace } => {
            let t = replay(&trace)?;
            println!("OK {} moves, digest {}", t.events.len(), t.digest().to_hex());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use soundscape_core::console::{serve_simulation, TokenTable};
use soundscape_core::fixtures;
use soundscape_core::sim::check::ONSET_TOLERANCE_MS;
use soundscape_core::sim::{check, equivalence, run, Report, Resolved, Scenario, Trace};

#[derive(Parser)]
#[command(name = "simharness", version, about = "Run, check and serve simulated soundscape scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion.
    Run {
        scenario: PathBuf,
        /// Trace output path.
        #[arg(short, long)]
        trace: Option<PathBuf>,
        /// Evaluate the invariant battery on the finished trace.
        #[arg(long)]
        check: bool,
        /// Machine-readable report path.
        #[arg(long)]
        report_json: Option<PathBuf>,
    },
    /// Check an existing trace against the scenario that produced it.
    Check {
        scenario: PathBuf,
        trace: PathBuf,
        #[arg(long)]
        report_json: Option<PathBuf>,
    },
    /// Compare the audible outcome of two traces.
    Compare {
        reference: PathBuf,
        other: PathBuf,
        #[arg(long, default_value_t = ONSET_TOLERANCE_MS)]
        tolerance_ms: i64,
    },
    /// Serve the console API over a live, paced simulation.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Directory for the append-only override, consent and annotation stores.
        #[arg(long, default_value = "console-data")]
        data_dir: PathBuf,
        /// Author token table, one `token author` pair per line.
        #[arg(long)]
        tokens: PathBuf,
    },
    /// Bundled fixture utilities.
    Fixtures {
        #[command(subcommand)]
        command: FixtureCommand,
    },
}

#[derive(Subcommand)]
enum FixtureCommand {
    /// Write the synthetic sample library as WAV files.
    WriteAssets { dir: PathBuf },
    /// Print the catalog manifest with content digests filled in.
    Manifest,
}

fn resolve(path: &Path) -> Result<Resolved> {
    let scenario = Scenario::load(path)?;
    Ok(scenario.resolve(path.parent())?)
}

fn report_out(report: &Report, json: Option<&Path>) -> Result<ExitCode> {
    print!("{}", report.render_text());
    if let Some(p) = json {
        std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { scenario, trace, check: do_check, report_json } => {
            let resolved = resolve(&scenario)?;
            let began = Instant::now();
            let out = run(&resolved)?;
            eprintln!("ran {} in {:.1} s wall, {} records", out.header.name, began.elapsed().as_secs_f64(), out.records.len());
            if let Some(p) = &trace {
                std::fs::write(p, out.render()).with_context(|| format!("writing {}", p.display()))?;
            }
            if do_check {
                return report_out(&check(&out, &resolved), report_json.as_deref());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { scenario, trace, report_json } => {
            let resolved = resolve(&scenario)?;
            let text = std::fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let parsed = Trace::parse(&text)?;
            report_out(&check(&parsed, &resolved), report_json.as_deref())
        }
        Command::Compare { reference, other, tolerance_ms } => {
            let load = |p: &Path| -> Result<Trace> {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(Trace::parse(&text)?)
            };
            let r = equivalence(&load(&reference)?, &load(&other)?, tolerance_ms);
            println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            Ok(if r.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Serve { scenario, listen, data_dir, tokens } => {
            let resolved = resolve(&scenario)?;
            let table = std::fs::read_to_string(&tokens).with_context(|| format!("reading {}", tokens.display()))?;
            let tokens = TokenTable::parse(&table)?;
            tokio::runtime::Runtime::new()?.block_on(serve_simulation(resolved, &listen, &data_dir, tokens))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures { command } => {
            match command {
                FixtureCommand::WriteAssets { dir } => {
                    let n = fixtures::write_assets(&dir)?;
                    eprintln!("wrote {n} assets to {}", dir.display());
                }
                FixtureCommand::Manifest => print!("{}", fixtures::indexed_manifest()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

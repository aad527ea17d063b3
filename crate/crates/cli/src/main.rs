//! `cloudmarket` command line: validate a scenario, run replications, and
//! aggregate their summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use cloudmarket_core::report::{aggregate, report, summary_file_name, trace_file_name, SummaryReport};
use cloudmarket_core::scenario::{parse_scenario, Scenario, ScenarioError};
use cloudmarket_core::sim::{replication_seed, run_replication};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "cloudmarket", version, about = "Market-oriented cloud simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
    /// Run every replication of a scenario and write traces and summaries.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base seed; replication r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<u32>,
        /// Replications executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate the summaries found in a run directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Parse or validation problem: exit code 1.
struct Invalid(String);

fn load(path: &Path) -> Result<Scenario, Invalid> {
    let text = fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Validation(issues) => Invalid(
            issues
                .iter()
                .map(|i| format!("{}: {i}", path.display()))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        other => Invalid(format!("{}: {other}", path.display())),
    })
}

fn run(scenario: &Scenario, out: &Path, seed: u64, replications: u32, jobs: usize) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let one = |r: u32| -> anyhow::Result<SummaryReport> {
        let result = run_replication(scenario, r, replication_seed(seed, r)).with_context(|| format!("replication {r}"))?;
        let trace_path = out.join(trace_file_name(r));
        let file = fs::File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
        result
            .trace
            .write_csv(std::io::BufWriter::new(file))
            .with_context(|| format!("writing {}", trace_path.display()))?;
        let summary_path = out.join(summary_file_name(r));
        fs::write(&summary_path, result.summary.to_json()).with_context(|| format!("writing {}", summary_path.display()))?;
        Ok(result.summary)
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let summaries: Vec<SummaryReport> = pool.install(|| (0..replications).into_par_iter().map(one).collect::<anyhow::Result<_>>())?;
    let agg = aggregate(&summaries);
    fs::write(out.join("aggregate.json"), agg.to_json()).context("writing aggregate.json")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<(), (u8, String)> = match cli.command {
        Command::Validate { scenario } => load(&scenario).map(|_| println!("ok")).map_err(|Invalid(m)| (1, m)),
        Command::Run {
            scenario,
            out,
            seed,
            replications,
            jobs,
        } => match load(&scenario) {
            Err(Invalid(m)) => Err((1, m)),
            Ok(s) => {
                let seed = seed.unwrap_or(s.run.seed);
                let replications = replications.unwrap_or(s.run.replications);
                if replications == 0 {
                    Err((1, "replications must be at least 1".into()))
                } else {
                    run(&s, &out, seed, replications, jobs).map_err(|e| (2, format!("{e:#}")))
                }
            }
        },
        Command::Report { dir, format } => match report(&dir) {
            Ok(agg) => {
                match format {
                    Format::Json => println!("{}", agg.to_json()),
                    Format::Csv => print!("{}", agg.to_csv()),
                }
                Ok(())
            }
            Err(e) => Err((2, e.to_string())),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

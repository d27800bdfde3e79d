//! `gradepipe`: batch grading pipeline for introductory programming
//! submissions: generate synthetic corpora, grade through the unit-test
//! gate plus LLM strategies, and evaluate against human baselines.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{EXIT_FATAL, EXIT_OK};
use config::{Overrides, RunConfig};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gradepipe", version, about)]
struct Cli {
    /// JSON run configuration; flags override file fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Replay transcripts from this store (forces replay mode).
    #[arg(long, global = true, value_name = "DIR")]
    replay: Option<PathBuf>,

    /// Fail the run (exit 1) when any submission hits a replay miss.
    #[arg(long, global = true)]
    replay_strict: bool,

    /// Generation seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (offline error injection or live).
    Generate,
    /// Run the grading pipeline over a corpus.
    Grade,
    /// Compare grading results against a human baseline.
    Evaluate {
        /// Results file(s) or directories of .jsonl files.
        #[arg(long, value_name = "PATH")]
        results: Vec<PathBuf>,
        /// Baseline CSV path.
        #[arg(long, value_name = "PATH")]
        baseline: Option<PathBuf>,
    },
    /// Re-render report artifacts from a saved report.json.
    Report {
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let overrides = Overrides {
        replay: cli.replay,
        replay_strict: cli.replay_strict,
        seed: cli.seed,
        out: cli.out,
    };
    let config = RunConfig::load(cli.config.as_deref(), overrides)?;
    match &cli.command {
        Command::Generate => commands::cmd_generate(&config),
        Command::Grade => commands::cmd_grade(&config),
        Command::Evaluate { results, baseline } => {
            commands::cmd_evaluate(&config, results, baseline.as_deref())
        }
        Command::Report { report } => commands::cmd_report(&config, report.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(EXIT_OK as u8)),
        Err(error) => {
            eprintln!(
                "{}",
                json!({
                    "error": "fatal",
                    "detail": format!("{error:#}"),
                })
            );
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}

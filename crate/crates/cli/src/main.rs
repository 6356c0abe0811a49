//! `alertlab` command line: one subcommand per pipeline stage over a
//! file-based workspace.

mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use alertlab::learn::ModelKind;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{SynthArgs, TrainingSet};
use error::CliError;
use workspace::Workspace;

/// Automated labeling of static-analysis alerts from test-suite metadata,
/// and classifier training on the labeled alerts.
///
/// Each command reads artifacts from earlier stages of the workspace and
/// writes only its own stage directory, together with a
/// `<stage>/<command>.manifest.json` holding sha256 digests of its inputs
/// and outputs. Exit codes: 0 success, 1 invalid or missing input,
/// 2 internal or I/O error.
#[derive(Debug, Parser)]
#[command(name = "alertlab", version)]
struct Cli {
    /// Workspace root.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,

    /// Config file (TOML, or JSON by extension), relative to the workspace.
    /// Defaults to alertlab.toml or alertlab.json when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse SARIF and normalized-JSONL alert files into alerts/alerts.jsonl.
    Ingest,
    /// Read the flaw manifest and scan sources for GOOD/BAD function spans
    /// into suite/flaws.jsonl and suite/spans.jsonl.
    SuiteScan,
    /// Resolve known checker→CWE rules (and promoted review rows) into
    /// mappings/known.json.
    MapKnown,
    /// Derive speculative mappings for every threshold and direction of the
    /// grid into mappings/speculative.csv.
    MapSpeculate,
    /// Write the candidate list for manual verification into
    /// mappings/review.csv.
    MapReview,
    /// Merge mapped alerts per (cwe, file, line) into fused/fused.jsonl.
    Fuse,
    /// Assign True/False/Unknown verdicts into fused/labeled.jsonl.
    Label,
    /// Build feature vectors for labeled alerts into features/features.jsonl.
    Features,
    /// Draw the test set and training sets into splits/bundle.json.
    Split,
    /// Train a classifier into models/model.json.
    Train {
        /// gbt or lasso-logit; defaults to the config's train.kind.
        #[arg(long)]
        kind: Option<ModelKind>,
        /// `baseline` or DIRECTION:T, e.g. `forward:25`.
        #[arg(long, default_value = "baseline")]
        training_set: TrainingSet,
    },
    /// Score the test set into reports/overall.csv, per_cwe.csv,
    /// per_cert_rule.csv and importance.csv.
    Evaluate,
    /// Train once per grid configuration plus the baseline into
    /// reports/sweep.csv.
    Sweep {
        #[arg(long)]
        kind: Option<ModelKind>,
    },
    /// Generate a synthetic corpus with a ground-truth ledger under synth/,
    /// including a config template at synth/alertlab.toml.
    Synth {
        /// Number of testcases [default: 1000].
        #[arg(long)]
        testcases: Option<usize>,
        /// Planted feature strength in [0, 1].
        #[arg(long)]
        strength: Option<f64>,
        /// Generator profile as JSON, relative to the workspace.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Summarize labels, evaluation and sweep into reports/summary.md and
    /// flag stale stages.
    Report,
}

fn run(cli: Cli) -> Result<Vec<String>, CliError> {
    let ws = Workspace::open(cli.workspace, cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ws),
        Command::SuiteScan => commands::suite_scan(&ws),
        Command::MapKnown => commands::map_known(&ws),
        Command::MapSpeculate => commands::map_speculate(&ws),
        Command::MapReview => commands::map_review(&ws),
        Command::Fuse => commands::fuse(&ws),
        Command::Label => commands::label(&ws),
        Command::Features => commands::features(&ws),
        Command::Split => commands::split(&ws),
        Command::Train { kind, training_set } => commands::train_model(&ws, kind, training_set),
        Command::Evaluate => commands::evaluate_model(&ws),
        Command::Sweep { kind } => commands::sweep_grid(&ws, kind),
        Command::Synth {
            testcases,
            strength,
            profile,
        } => commands::synth(
            &ws,
            &SynthArgs {
                testcases,
                strength,
                profile,
            },
        ),
        Command::Report => commands::report(&ws),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(written)) => {
            for path in written {
                println!("{path}");
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}

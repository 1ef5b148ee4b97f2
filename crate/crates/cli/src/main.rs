//! `medplan`: ingest, split, index, export, generate, evaluate and serve.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use medplan_core::Stage;

/// MedPlan clinical planning pipeline.
#[derive(Debug, Parser)]
#[command(name = "medplan", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML file with [pipeline], [split] and [service] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Allow existing output files to be replaced.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Assessment,
    Plan,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Assessment => Stage::Assessment,
            StageArg::Plan => Stage::Plan,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a corpus into a patient store file.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Assign patients to knowledge-base, train and test populations.
    Split {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and save the assessment and plan indexes.
    Index {
        corpus: PathBuf,
        /// Index only the knowledge-base patients of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write instruction-tuning pairs for the train patients.
    ExportTuning {
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Saved knowledge base; built from the split when omitted.
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline on one visit.
    Generate(GenerateArgs),
    /// Run the ablation matrix over the held-out visits.
    Eval {
        corpus: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        /// TOML file with `[[configs]]` rows; the full 8-row matrix by default.
        #[arg(long)]
        ablation: Option<PathBuf>,
        /// Mark rows as produced by an instruction-tuned generator.
        #[arg(long)]
        tuned: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        patients: usize,
        /// Fraction of patients with only two visits.
        #[arg(long, default_value_t = 0.0)]
        short_rate: f64,
    },
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub mrn: String,
    #[arg(long)]
    pub subjective: String,
    #[arg(long)]
    pub objective: String,
    /// Saved knowledge base directory.
    #[arg(long, conflicts_with = "kb_corpus")]
    pub kb: Option<PathBuf>,
    /// Corpus file indexed on the fly as the knowledge base.
    #[arg(long)]
    pub kb_corpus: Option<PathBuf>,
    /// Patient store or corpus holding the patient's earlier visits.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, conflicts_with = "single_pass")]
    pub two_stage: bool,
    #[arg(long)]
    pub single_pass: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let logs_to_stdout = matches!(cli.command, Command::Serve { .. });
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(if logs_to_stdout { "info" } else { "warn" }));
    let builder = tracing_subscriber::fmt().with_env_filter(filter);
    if logs_to_stdout {
        builder.init();
    } else {
        builder.with_writer(std::io::stderr).init();
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

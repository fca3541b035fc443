//! `protomm`: data preparation, pre-training, probing, interpretation and
//! the acceptance self-test behind one binary.

mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "protomm", version, about = "Multimodal prototype learning for PPG and accelerometry")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags every command understands.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON). Absent keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides data.synthetic.seed, training.seed and interpret.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DatasetArg {
    Wesad,
    Dalia,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Window a public dataset into a manifest.
    Ingest {
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
        /// Dataset root; defaults to data.root, then $PROTOMM_DATA_ROOT.
        #[arg(long)]
        root: Option<PathBuf>,
        /// stress2, stress4, activity2, activity9 or hr_regression.
        #[arg(long)]
        task: Option<String>,
    },
    /// Generate the synthetic benchmark described by data.synthetic.
    Synth,
    /// Pre-train encoders into a run directory.
    Pretrain {
        /// Manifest to train on; a subject-wise share is held out for validation.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit subject-wise cross-validated linear probes on frozen embeddings.
    Probe {
        /// Checkpoint directory, or a run directory (its best checkpoint is used).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// P, A or P+A.
        #[arg(long)]
        composition: Option<String>,
    },
    /// Cluster prototypes, retrieve nearest segments and project to 2-D.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        topk: Option<usize>,
    },
    /// Run the acceptance suite and print one line per criterion.
    Selftest {
        /// Leave out the synthetic training study (about 20 minutes).
        #[arg(long)]
        skip_study: bool,
        /// Dataset root for the ingestion checks; defaults to $PROTOMM_DATA_ROOT.
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command, &cli.common) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

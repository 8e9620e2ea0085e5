//! `auscult`: batch entry points for dataset inspection, training,
//! fine-tuning, evaluation and ablations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure. Errors are reported as one `error[<kind>]: <message>` line on
//! stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "auscult",
    version,
    about = "Respiratory sound classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the recordings come from. Overrides the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct DataArgs {
    /// Directory of `.wav`/`.txt` recording pairs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Line-delimited manifest file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Master seed for splits, initialization and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for preprocessing and evaluation; 1 is the reference
    /// mode.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Class-by-device cycle counts and length histogram.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        json: bool,
    },
    /// Patient-wise train/test split file.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explicit training patient list; every other patient is test.
        #[arg(long)]
        train_list: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a synthetic recording fixture.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fixture description as JSON; otherwise `--patients` and
        /// `--cycles` build a balanced one.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        patients: usize,
        #[arg(long, default_value_t = 10)]
        cycles: usize,
    },
    /// Dumps the model-ready mel grid of every cycle.
    Preprocess {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write an 8-bit PGM image per grid.
        #[arg(long)]
        pgm: bool,
    },
    /// Stage-1 training into a run directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Input length in seconds.
        #[arg(long)]
        target_len: Option<f64>,
    },
    /// Stage-2 per-device fine-tuning of a trained run.
    Finetune {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Scores the test split and writes the run report.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// 4class or 2class; the run's task when omitted.
        #[arg(long)]
        task: Option<String>,
        /// Ignore stage-2 checkpoints.
        #[arg(long)]
        stage1_only: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Input-length ablation with stage-1 training per length.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated lengths in seconds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9")]
        lengths: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Prints the tables of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message.replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.kind.name());
            ExitCode::from(e.kind.code())
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Reference-based super-resolution: training, evaluation and audits.
#[derive(Parser, Debug)]
#[command(name = "hitsr", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run file with `key = value` lines (see README).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "hitsr-out")]
    pub out_dir: PathBuf,
    /// Worker threads for evaluation. 1 gives schedule-free runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub device_threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Where the model weights come from.
#[derive(Args, Debug, Clone)]
pub struct ModelSource {
    /// Load weights from a checkpoint instead of initialising from the seed.
    #[arg(long, conflicts_with = "zero_weights")]
    pub checkpoint: Option<PathBuf>,
    /// Zero every trainable tensor; the output is then plain bicubic.
    #[arg(long)]
    pub zero_weights: bool,
    /// Dataset root with `hr/` and `ref/` folders.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train and write losses, gates, evals and checkpoints to --out-dir.
    Train {
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Training data root; overrides the `data` key.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Luma PSNR/SSIM of the model and of bicubic upscaling.
    Eval {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Evaluation under scaled and rotated references.
    Robustness {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Finite-difference checks of every primitive and of a tiny model.
    Gradcheck {
        /// Parameter elements probed in the end-to-end check.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Print the metadata and tensor directory of a checkpoint.
    InspectCheckpoint { path: PathBuf },
    /// Dump gate values and attention row sums.
    ExportAttn {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Train the full model and each single-component-off variant.
    Ablate {
        /// Overrides `max_steps` for every variant.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Exit status for a library error: 2 for numeric failures, 1 otherwise.
pub fn exit_code(err: &hitsr_core::Error) -> u8 {
    if err.is_numeric() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn ensure_dir(dir: &Path) -> hitsr_core::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| hitsr_core::Error::Contract(format!("cannot create {}: {e}", dir.display())))
}

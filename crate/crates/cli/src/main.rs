//! `spac` command line: encode, decode, train, eval, sample, bd, info.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spac_core::fs::GroupSpec;
use spac_core::Error as CoreError;

#[derive(Debug, Parser)]
#[command(name = "spac", version, about = "Progressive point cloud attribute codec")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// RNG seed; SPAC_SEED overrides it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Progress on standard error; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Group size Omega.
    #[arg(long, default_value_t = 1024)]
    omega: usize,
    /// Spectrum retention percentage q.
    #[arg(long, default_value_t = 60.0)]
    q: f64,
    /// Selection threshold tau relative to the largest residual.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
}

impl SplitArgs {
    fn spec(&self) -> GroupSpec {
        GroupSpec {
            omega: self.omega,
            q_percent: self.q,
            tau: self.tau,
            ..GroupSpec::default()
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// PLY to stream.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        lambda_index: u8,
        /// Must match the model when given.
        #[arg(long)]
        layers: Option<usize>,
        #[command(flatten)]
        split: SplitArgs,
        /// Also write the per-layer RD points of this encoding as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Stream plus geometry PLY to a colored PLY.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1)]
        upto_layer: usize,
    },
    /// Trains on every PLY in a directory and writes checkpoints.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        lambda_index: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Narrow network that trains in minutes.
        #[arg(long)]
        toy: bool,
        /// Continue from `<output>/state.json`.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 100)]
        checkpoint_every: usize,
    },
    /// YUV PSNR of a test PLY against a reference PLY.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// JSON output path; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Writes each layer set of a PLY and the split statistics.
    Sample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Bjontegaard deltas of each test curve against the first reference curve.
    Bd {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        pchip: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dumps a stream header and its chunk table.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Internal(_) => 3,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) => 1,
                CoreError::IndexOutOfRange { .. }
                | CoreError::ShapeMismatch(_)
                | CoreError::ZeroFrequency
                | CoreError::ZeroProbability
                | CoreError::NonFiniteLoss { .. } => 3,
                _ => 2,
            },
        }
    }
}

fn seed(cli_seed: u64) -> Result<u64, CliError> {
    match std::env::var("SPAC_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("SPAC_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(cli_seed),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = seed(cli.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let ctx = commands::Context {
        seed,
        verbose: cli.verbose,
    };
    pool.install(|| commands::dispatch(cli.command, &ctx))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spac: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

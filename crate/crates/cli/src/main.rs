mod bundle;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use circlstm::{FxpFormat, ShiftPolicy};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use report::OutputFormat;

/// Block-circulant LSTM compression, inference and accelerator planning.
#[derive(Debug, Parser)]
#[command(name = "circlstm", version, about)]
pub struct Cli {
    /// Seed for random weights and frames.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,

    /// Fixed-point format for data and weights, e.g. q3.12.
    #[arg(long, global = true, value_parser = parse_fxp)]
    pub fxp: Option<FxpFormat>,

    /// Where the 1/k transform scaling is applied: all-at-idft-end,
    /// distributed-in-idft or distributed-in-dft.
    #[arg(long, global = true, value_parser = parse_policy)]
    pub shift_policy: Option<ShiftPolicy>,

    /// Platform preset (ku060, 7v3, unlimited) or a JSON profile.
    #[arg(long, global = true, default_value = "ku060")]
    pub platform: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Architecture preset (google, small) or a JSON spec file.
    #[arg(long, default_value = "google")]
    pub arch: String,

    /// Circulant block size; a power of two. Defaults to 8, or the value in
    /// a JSON spec.
    #[arg(long, short = 'k', value_parser = parse_block)]
    pub block_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model bundle directory. Overrides --arch and --block-size.
    #[arg(long)]
    pub bundle: Option<PathBuf>,

    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Per-operator cost profile (JSON). Defaults to the synthetic profile.
    #[arg(long)]
    pub costs: Option<PathBuf>,

    /// Resource budget used while scheduling.
    #[arg(long, value_enum, default_value_t = Budget::Platform)]
    pub budget: Budget,

    /// Largest per-stage replication factor tried.
    #[arg(long, default_value_t = circlstm::graph::DEFAULT_REPLICATION_CAP, value_parser = clap::value_parser!(u64).range(1..))]
    pub replication_cap: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Budget {
    Platform,
    Unlimited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Float,
    Fxp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a block-circulant model bundle from random weights or a bundle.
    Compress {
        #[command(flatten)]
        arch: ArchArgs,

        /// Source bundle to project onto the new block size.
        #[arg(long)]
        from: Option<PathBuf>,

        /// Output directory.
        #[arg(long, required_unless_present = "sweep")]
        out: Option<PathBuf>,

        /// Skip the precomputed weight spectra.
        #[arg(long)]
        no_spectra: bool,

        /// Report parameter counts for these block sizes instead of writing.
        #[arg(long, value_delimiter = ',', value_parser = parse_block)]
        sweep: Option<Vec<usize>>,
    },
    /// Run a bundle over a sequence of frames.
    Infer {
        #[arg(long)]
        bundle: PathBuf,

        /// JSON file holding an array of frames.
        #[arg(long, required_unless_present = "random_frames", conflicts_with = "random_frames")]
        input: Option<PathBuf>,

        /// Generate this many uniform random frames in [-1, 1).
        #[arg(long)]
        random_frames: Option<usize>,

        #[arg(long, value_enum, default_value_t = ModeArg::Float)]
        mode: ModeArg,

        /// Compare the float path against the dense reference.
        #[arg(long)]
        verify: bool,
    },
    /// Check bundle integrity and oracle agreement.
    Verify {
        #[arg(long)]
        bundle: PathBuf,

        /// Random frames used for the oracle check.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        frames: u64,
    },
    /// Partition the operator graph into pipeline stages.
    Schedule {
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Evaluate the throughput and resource model for a stage assignment.
    Estimate {
        #[command(flatten)]
        plan: PlanArgs,

        /// Stage assignment JSON, as emitted by `schedule`. Scheduled afresh
        /// when absent.
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Time the spectral path against the dense path on this host.
    Bench {
        #[command(flatten)]
        model: ModelArgs,

        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        frames: u64,

        #[arg(long, default_value_t = 3)]
        repetitions: u64,
    },
    /// Parameter counts and op ratios over a range of block sizes.
    Sweep {
        #[command(flatten)]
        arch: ArchArgs,

        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16", value_parser = parse_block)]
        sizes: Vec<usize>,
    },
}

/// Failures with their own exit status.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

fn parse_fxp(s: &str) -> Result<FxpFormat, String> {
    s.parse().map_err(|e: circlstm::Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<ShiftPolicy, String> {
    s.parse().map_err(|e: circlstm::Error| e.to_string())
}

fn parse_block(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|_| format!("`{s}` is not a block size"))?;
    if k == 0 || !k.is_power_of_two() || k > 1 << 16 {
        return Err(format!("block size {k} is not a power of two in 1..=65536"));
    }
    Ok(k)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Failure>() {
                Some(Failure::Usage(_)) => EXIT_USAGE,
                Some(Failure::Verification(_)) => EXIT_VERIFY,
                None => EXIT_RUNTIME,
            };
            ExitCode::from(code)
        }
    }
}

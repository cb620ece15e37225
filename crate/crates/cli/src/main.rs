mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const OUTPUT_HELP: &str = "\
Output files (written to --out-dir):
  embed               features.csv, base.json, embed.metrics.json
  train-skl           model.json, trace.csv, train-skl.metrics.json
  train-mkl           model.json, train-mkl.metrics.json
  predict             predictions.csv, predict.metrics.json
  bench-scaling       bench.csv, bench.json
  verify-equivalence  verify.json

CSV columns:
  features.csv     phi_1,...,phi_d (one row per sample)
  trace.csv        iteration,objective,gradient_norm
  predictions.csv  index,prediction,target
  bench.csv        method,n,d,r,seconds,peak_memory_bytes,mse,iterations,error

Metrics JSON keys are sorted; every field except wall_time_seconds is
reproducible for a fixed config and seed.

Environment:
  FOURIERKL_THREADS   worker thread count (default: all cores)

Exit status: 0 on success, 2 when an input path does not exist, 1 otherwise.";

/// Kernel learning with random Fourier features.
#[derive(Debug, Parser)]
#[command(name = "fourierkl", version, after_help = OUTPUT_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON); defaults apply when absent
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: config paths.output_dir, else the current directory)
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a dataset with the first configured kernel
    #[command(after_help = "Writes features.csv (columns phi_1,...,phi_d), base.json and embed.metrics.json.")]
    Embed {
        /// Dataset to embed (default: config paths.train)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Reuse a stored frequency/phase sample instead of drawing one
        #[arg(long, value_name = "PATH")]
        base: Option<PathBuf>,
    },
    /// Learn the hyperparameters of the first configured kernel
    #[command(
        after_help = "Writes model.json, trace.csv (columns iteration,objective,gradient_norm) \
                            and train-skl.metrics.json."
    )]
    TrainSkl(TrainArgs),
    /// Train a multiple-kernel model as a group Lasso over all configured kernels
    #[command(after_help = "Writes model.json and train-mkl.metrics.json with the kernel weight d_t of every kernel.")]
    TrainMkl {
        #[command(flatten)]
        data: TrainArgs,
        /// Penalty as a fraction of lambda_max (overrides mkl_lambda)
        #[arg(long)]
        lambda_fraction: Option<f64>,
    },
    /// Predict with a stored model
    #[command(after_help = "Writes predictions.csv (columns index,prediction,target) and predict.metrics.json.")]
    Predict {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Time training against N on synthetic data
    #[command(
        after_help = "Writes bench.csv (columns method,n,d,r,seconds,peak_memory_bytes,mse,iterations,error) \
                            and bench.json with the fitted log-log slopes."
    )]
    BenchScaling {
        /// Comma-separated sample sizes for the random-feature methods
        #[arg(long, value_delimiter = ',', value_name = "N,...")]
        n_grid: Option<Vec<usize>>,
        /// Penalty as a fraction of lambda_max
        #[arg(long)]
        lambda_fraction: Option<f64>,
    },
    /// Run the invariant suite, optionally checking a stored model
    #[command(after_help = "Writes verify.json. Exits 1 and lists the failures if any check fails.")]
    VerifyEquivalence {
        /// Model artifact to check (default: config paths.model)
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Data for the model's optimality check (default: config paths.train)
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Replaces every agreement tolerance
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (default: config paths.train)
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// Validation data; split from the training data when absent
    #[arg(long, value_name = "PATH")]
    pub validation: Option<PathBuf>,
    /// Held-out data reported in the metrics
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FOURIERKL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("FOURIERKL_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("FOURIERKL_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| commands::run(cli)) {
        Ok(code) => code,
        Err(e) => {
            let kind = commands::error_kind(&e);
            eprintln!("error ({}): {e:#}", kind.name());
            ExitCode::from(kind.exit_code())
        }
    }
}

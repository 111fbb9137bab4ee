mod bench;
mod eval;
mod exit;
mod interpolate;
mod levels;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exit::{CliError, CliResult};
use levels::PyramidArgs;

/// Video frame interpolation with a pyramid recurrent network.
///
/// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure,
/// 5 I/O failure. Logs go to standard error.
#[derive(Parser, Debug)]
#[command(name = "vfi", version)]
struct Cli {
    /// Worker threads for the library operators (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Interpolate(InterpolateArgs),
    Eval(EvalArgs),
    Train(TrainArgs),
    Selftest(SelftestArgs),
    Bench(BenchArgs),
}

/// Synthesize intermediate frames between two PNG frames.
///
/// Flows are estimated once and shared by every requested time. Outputs are
/// network predictions at every t, including t = 0 and t = 1, so they are
/// not exact copies of the inputs.
#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub frame0: PathBuf,
    #[arg(long)]
    pub frame1: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Comma-separated times in [0, 1]; fractions like 1/8 are accepted.
    #[arg(long, value_delimiter = ',', conflicts_with = "multi")]
    pub times: Vec<String>,
    /// Frame-rate multiplier k: times 1/k, ..., (k-1)/k.
    #[arg(long)]
    pub multi: Option<u32>,
    /// Output path; `{t}` becomes the time and `{i}` its index.
    #[arg(long, default_value = "frame_{t}.png")]
    pub out: String,
    /// Write 16-bit PNGs.
    #[arg(long)]
    pub sixteen_bit: bool,
    #[command(flatten)]
    pub pyramid: PyramidArgs,
}

/// Mean and per-sample PSNR/SSIM on a triplet folder, as CSV.
///
/// Columns: sample_path,psnr_db,ssim, one row per index line in order,
/// then a final `mean` row.
#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset root; sample paths in the index are relative to it.
    #[arg(long)]
    pub data: PathBuf,
    /// Index file (default: index.txt under the dataset root).
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub weights: PathBuf,
    /// CSV destination (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pyramid: PyramidArgs,
}

/// Train on synthetic scenes or a triplet folder and write a checkpoint.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `synthetic` or a dataset directory of im1/im2/im3.png triplets.
    #[arg(long, default_value = "synthetic")]
    pub data: String,
    /// Index file for a dataset directory (default: index.txt inside it).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Checkpoint destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint; its settings apply unless overridden.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Model variant: base, large or xlarge.
    #[arg(long, conflicts_with = "channel_scale")]
    pub variant: Option<String>,
    /// Channel multiplier relative to the base model.
    #[arg(long)]
    pub channel_scale: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Largest per-layer displacement of synthetic scenes, in pixels.
    #[arg(long)]
    pub motion_max: Option<f64>,
    /// Side of generated synthetic scenes (default: the crop size).
    #[arg(long)]
    pub scene_size: Option<usize>,
    /// Loss curve CSV: step,lr,charbonnier,census,total.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Also write the checkpoint every this many steps.
    #[arg(long)]
    pub save_every: Option<u64>,
    /// Log a loss line every this many steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
}

/// Gradient checks, operator oracles and closed-form identities.
#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Median and p95 wall time of one operator.
#[derive(Args, Debug)]
pub struct BenchArgs {
    /// splat, corr, conv or e2e.
    #[arg(long)]
    pub op: String,
    /// WIDTHxHEIGHT of the input (default 640x480).
    #[arg(long, default_value = "640x480")]
    pub size: String,
    /// Feature channels for conv and corr.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Weights for e2e (default: a freshly initialised base model).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub pyramid: PyramidArgs,
}

fn selftest(args: &SelftestArgs) -> CliResult {
    let checks = vfi_core::verify::run_all(args.seed)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "{} checks, {} passed, {} failed",
        checks.len(),
        checks.len() - failed,
        failed
    );
    if failed > 0 {
        return Err(CliError::numeric(format!(
            "{failed} self-test checks failed"
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let threads = cli.threads;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
    }
    match &cli.command {
        // The benchmark manages its own pools.
        Command::Bench(args) => bench::run(args, threads),
        command => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
            }
            match command {
                Command::Interpolate(args) => interpolate::run(args),
                Command::Eval(args) => eval::run(args),
                Command::Train(args) => train::run(args),
                Command::Selftest(args) => selftest(args),
                Command::Bench(_) => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("VFI_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

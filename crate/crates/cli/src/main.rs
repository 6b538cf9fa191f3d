//! `twophoton` command-line front end.
//!
//! Every subcommand reads its inputs from files and writes its outputs into
//! `--out`, so stages compose through the filesystem only.

mod commands;
mod failure;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twophoton::movement::MovementKind;
use twophoton::Center;

#[derive(Debug, Parser)]
#[command(
    name = "twophoton",
    version,
    about = "Two-photon calcium imaging analysis pipeline"
)]
struct Cli {
    /// Worker threads for data-parallel stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register every frame to a reference frame with a rigid transform.
    Align(AlignArgs),
    /// Rescale each frame of one channel to the mean of all frame means.
    Equalize(EqualizeArgs),
    /// Per-pixel temporal mean and variance maps of one channel.
    Stats(StatsArgs),
    /// Log mean against log variance, one row per pixel.
    Scatter(ScatterArgs),
    /// Difference of the temporal mean images of two stacks (A minus B).
    Diffmap(DiffmapArgs),
    /// Brain-movement time series of one stack.
    Movement(MovementArgs),
    /// Levene's test for equal variances of two series.
    Levene(LeveneArgs),
    /// Generate a synthetic stack with ground truth.
    Synth(SynthArgs),
    /// Run the full resting-versus-stimulated analysis.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct AlignArgs {
    /// Stack header (.json) to align.
    #[arg(long)]
    stack: PathBuf,
    /// Channel the transforms are estimated on.
    #[arg(long, default_value_t = 0)]
    ref_channel: usize,
    /// Reference frame index, or "mid" for the middle frame.
    #[arg(long, default_value = "mid")]
    ref_time: String,
    /// Largest shift searched, pixels.
    #[arg(long, default_value_t = 10.0)]
    max_shift: f64,
    /// Largest rotation searched, radians.
    #[arg(long, default_value_t = 0.1)]
    max_theta: f64,
    /// Simplex convergence tolerance for shifts, pixels.
    #[arg(long, default_value_t = 1e-3)]
    tol_px: f64,
    /// Simplex convergence tolerance for rotation, radians.
    #[arg(long, default_value_t = 1e-4)]
    tol_rad: f64,
    /// Iteration budget of the simplex refinement.
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EqualizeArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 1)]
    channel: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// Restrict statistics to pixels valid in every aligned frame.
    #[arg(long)]
    valid_only: bool,
    /// Alignment CSV defining the valid region [default: transforms.csv next to --stack].
    #[arg(long, requires = "valid_only")]
    transforms: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 1)]
    channel: usize,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScatterArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value_t = 1)]
    channel: usize,
    /// Offset added before taking logs.
    #[arg(long, default_value_t = 1e-12)]
    epsilon: f64,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiffmapArgs {
    /// Stimulated-condition stack.
    #[arg(long)]
    stack_a: PathBuf,
    /// Resting-condition stack.
    #[arg(long)]
    stack_b: PathBuf,
    #[arg(long, default_value_t = 1)]
    channel: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MovementArgs {
    #[arg(long)]
    stack: PathBuf,
    /// Alignment CSV; required for shiftmag, and warps the stack first for framediff.
    #[arg(long)]
    aligned: Option<PathBuf>,
    #[arg(long, default_value = "framediff", value_parser = parse_kind)]
    kind: MovementKind,
    /// Channel used for framediff.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Trial-start CSV; shock times are exported alongside the series.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LeveneArgs {
    /// First group, a CSV whose last column holds the values.
    #[arg(long)]
    group_a: PathBuf,
    #[arg(long)]
    group_b: PathBuf,
    #[arg(long, default_value = "mean", value_parser = parse_center)]
    center: Center,
    /// Only use samples within this many seconds after each trial start (needs --schedule).
    #[arg(long, requires = "schedule")]
    window: Option<f64>,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator configuration (JSON); omitted fields take defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline configuration (JSON); relative paths resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<MovementKind, String> {
    s.parse().map_err(|e: twophoton::Error| e.to_string())
}

fn parse_center(s: &str) -> Result<Center, String> {
    s.parse().map_err(|e: twophoton::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        twophoton::exec::configure_threads(cli.threads);
    }
    let outcome = match cli.command {
        Command::Align(a) => commands::align(a),
        Command::Equalize(a) => commands::equalize(a),
        Command::Stats(a) => commands::stats(a),
        Command::Scatter(a) => commands::scatter(a),
        Command::Diffmap(a) => commands::diffmap(a),
        Command::Movement(a) => commands::movement(a),
        Command::Levene(a) => commands::levene(a),
        Command::Synth(a) => commands::synth(a),
        Command::Pipeline(a) => pipeline::run(&a.config, &a.out),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

//! `outadapt`: dataset generation, training, evaluation, gradient checks and
//! reports for output-space adversarial domain adaptation.

mod commands;
mod failure;
mod manifest;
mod report;
mod settings;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use outadapt::trainer::AdaptMode;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "outadapt", version, about = "Output-space adversarial domain adaptation for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic source/target dataset pair
    GenData(GenDataArgs),
    /// Train a segmentation network, optionally with adversarial adaptation
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Plot training logs and tabulate runs side by side
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// key = value file supplying any flag; command-line flags win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Image height and width; must be divisible by 8
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    n_source: usize,
    #[arg(long, default_value_t = 200)]
    n_target: usize,
    #[arg(long, default_value_t = 50)]
    n_test: usize,
    #[arg(long)]
    source_texture: Option<f32>,
    #[arg(long)]
    target_texture: Option<f32>,
    #[arg(long)]
    source_noise: Option<f32>,
    #[arg(long)]
    target_noise: Option<f32>,
    #[arg(long)]
    source_gamma: Option<f32>,
    #[arg(long)]
    target_gamma: Option<f32>,
    #[arg(long)]
    source_brightness: Option<f32>,
    #[arg(long)]
    target_brightness: Option<f32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root written by gen-data
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the log, checkpoints and manifest
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "single_level")]
    mode: AdaptMode,
    /// vanilla or least_squares
    #[arg(long, default_value = "vanilla", value_parser = parse_gan)]
    gan: outadapt::losses::GanObjective,
    /// λ_adv per level; a single value is scaled across levels
    #[arg(long, value_delimiter = ',')]
    lambda_adv: Option<Vec<f32>>,
    /// λ_seg per level
    #[arg(long, value_delimiter = ',')]
    lambda_seg: Option<Vec<f32>>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    g_lr: Option<f64>,
    #[arg(long)]
    d_lr: Option<f64>,
    /// Save a checkpoint every N steps (0 = final only)
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Trunk block widths B1..B5
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Discriminator channel progression
    #[arg(long, value_delimiter = ',')]
    disc_channels: Option<Vec<usize>>,
    /// Omit wall-clock timings so logs are byte-identical across reruns
    #[arg(long)]
    deterministic: bool,
    /// Continue from a checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Load a checkpoint whose config hash does not match
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = outadapt::synth::TARGET_TEST)]
    split: String,
    /// Write the report here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report CSV of an oracle model; appends the mIoU gap
    #[arg(long)]
    oracle_report: Option<PathBuf>,
    /// Report CSV of the source-only baseline for the gap line
    #[arg(long, requires = "oracle_report")]
    baseline_report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to check, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seed: Vec<u64>,
    /// Restrict to these cases or case families, comma-separated
    #[arg(long, value_delimiter = ',')]
    ops: Option<Vec<String>>,
    /// CASE[:SCALE]: multiply one case's analytic gradient (harness self-test)
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training logs (train_log.csv) to plot and compare
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Leave generation timestamps out of the SVGs
    #[arg(long)]
    deterministic: bool,
}

fn parse_gan(s: &str) -> Result<outadapt::losses::GanObjective, String> {
    outadapt::trainer::parse_gan(s).map_err(|e| e.to_string())
}

fn run(args: Vec<OsString>) -> Result<(), Failure> {
    let args = settings::merge(args, &Cli::command())?;
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

//! `evnoise`: command-line pipelines over the noise-event toolkit.
//!
//! Subcommands compose through files only (graymaps, event files, flat
//! key-value configs); every run echoes its fully resolved settings next
//! to its outputs and is byte-reproducible for a fixed seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evnoise_core::Error;

#[derive(Parser)]
#[command(name = "evnoise", version, about = "Event-camera photon-noise synthesis, calibration, and static-scene reconstruction")]
struct Cli {
    /// Flat key-value configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic noise-event counts (and optionally a stream) for a static scene.
    Simulate(commands::SimulateArgs),
    /// Fit camera parameters (and optionally the dispersion table) from a rate curve.
    Calibrate(commands::CalibrateArgs),
    /// Invert two-polarity counts into a gray image plus ambiguity mask.
    Reconstruct(commands::ReconstructArgs),
    /// Split an event stream into signal and noise with the background-activity filter.
    Split(commands::SplitArgs),
    /// Threshold signal events into a binary motion mask.
    Mask(commands::MaskArgs),
    /// Composite dynamic and static reconstructions under a motion mask.
    Stitch(commands::StitchArgs),
    /// PSNR/SSIM between two graymaps.
    Eval(commands::EvalArgs),
    /// Tabulate the theoretical noise-rate curve of a parameter file.
    Curve(commands::CurveArgs),
    /// Generate (or replay) a synthetic dataset with a manifest.
    Dataset(commands::DatasetArgs),
    /// Fit a monotone gray-level to photon-count map from light-meter data.
    Graymap(commands::GraymapArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::error!("could not configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let file_cfg = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };

    let result = match cli.command {
        Command::Simulate(args) => commands::run_simulate(args, &file_cfg),
        Command::Calibrate(args) => commands::run_calibrate(args, &file_cfg),
        Command::Reconstruct(args) => commands::run_reconstruct(args, &file_cfg),
        Command::Split(args) => commands::run_split(args, &file_cfg),
        Command::Mask(args) => commands::run_mask(args, &file_cfg),
        Command::Stitch(args) => commands::run_stitch(args, &file_cfg),
        Command::Eval(args) => commands::run_eval(args, &file_cfg),
        Command::Curve(args) => commands::run_curve(args, &file_cfg),
        Command::Dataset(args) => commands::run_dataset(args, &file_cfg),
        Command::Graymap(args) => commands::run_graymap(args, &file_cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    log::error!("{e}");
    let code = match e {
        Error::Parse { .. } | Error::Validation(_) | Error::Domain(_) => 2,
        Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    };
    ExitCode::from(code)
}

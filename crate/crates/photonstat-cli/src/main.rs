//! photonstat: simulate, correlate, correct, and fit photon statistics from
//! the command line.
//!
//! Every subcommand accepts a flat declarative config file via --config and
//! lets explicit flags override individual keys. Results come back as stable
//! key=value lines on stdout; data products are CSV (or binary timestamp)
//! files placed in the output directory, which is resolved as --out-dir,
//! then the PHOTONSTAT_OUT_DIR environment variable, then the working
//! directory. Exit codes distinguish the caller's mistakes from the data's:
//! 2 for usage and config errors, 1 for failures in the computation itself.

mod commands;
mod pipeline;
mod util;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use util::CliError;

#[derive(Parser)]
#[command(name = "photonstat", version, about = "Photon statistics toolkit")]
struct Cli {
    /// Directory output files are written into.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a continuously pumped emitter behind a 50/50 splitter.
    SimCw(commands::SimCwArgs),
    /// Simulate a pulsed emitter behind a 50/50 splitter.
    SimPulsed(commands::SimPulsedArgs),
    /// Histogram pair lags between two detection channels.
    Correlate(commands::CorrelateArgs),
    /// Histogram pair lags onto the laser period grid.
    Rebin(commands::RebinArgs),
    /// Remove uncorrelated background from a correlation measurement.
    G2Correct(commands::G2CorrectArgs),
    /// Fit an antibunching model to a normalized correlation curve.
    G2Fit(commands::G2FitArgs),
    /// Propagate intensity-calibration uncertainties to the corrected value.
    PropagateError(commands::PropagateErrorArgs),
    /// Divide a coupled transmission trace by its reference.
    NormalizeTrace(commands::NormalizeTraceArgs),
    /// Find resonance dips and fit their quality factors.
    QFit(commands::QFitArgs),
    /// Geometric free spectral range of a circular resonator.
    Fsr(commands::FsrArgs),
    /// Map periodic mode structure across a broadband spectrum.
    ModesFft(commands::ModesFftArgs),
    /// Run a declarative multi-stage analysis and write its manifest.
    Pipeline(pipeline::PipelineArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage problems exit 2; --help and --version exit 0.
        Err(err) => err.exit(),
    };
    let out_dir = util::resolve_out_dir(cli.out_dir);
    let result = match cli.command {
        Command::SimCw(args) => commands::sim_cw(args, &out_dir),
        Command::SimPulsed(args) => commands::sim_pulsed(args, &out_dir),
        Command::Correlate(args) => commands::correlate(args, &out_dir),
        Command::Rebin(args) => commands::rebin(args, &out_dir),
        Command::G2Correct(args) => commands::g2_correct(args, &out_dir),
        Command::G2Fit(args) => commands::g2_fit(args, &out_dir),
        Command::PropagateError(args) => commands::propagate_error_cmd(args, &out_dir),
        Command::NormalizeTrace(args) => commands::normalize_trace(args, &out_dir),
        Command::QFit(args) => commands::q_fit(args, &out_dir),
        Command::Fsr(args) => commands::fsr(args, &out_dir),
        Command::ModesFft(args) => commands::modes_fft(args, &out_dir),
        Command::Pipeline(args) => pipeline::pipeline(args, &out_dir),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            std::process::exit(2);
        }
        Err(CliError::Run(message)) => {
            eprintln!("error: {message}");
            std::process::exit(1);
        }
    }
}

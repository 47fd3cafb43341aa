//! One handler per subcommand. Each follows the same pattern: load the
//! optional declarative config, resolve every parameter as flag over config
//! over default, run the library call, write any output files into the
//! output directory, and print a stable key=value summary to stdout.
//!
//! Rates cross this interface in events per second and are converted to the
//! per-picosecond rates the library uses; timestamps and durations stay in
//! picoseconds, wavelengths in nanometers.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use photonstat::correlator::{
    autocorrelate, cross_correlate, cross_correlate_par, normalize, rebin_to_periods,
    rebin_to_periods_par, start_stop_correction, CorrelationHistogram, PairMode,
};
use photonstat::g2::{
    cw_correct, fit_antibunching, fit_antibunching_bootstrap, propagate_error_mc, pulsed_correct,
    AntibunchingFit, AntibunchingModel,
};
use photonstat::io;
use photonstat::synth::{
    simulate_cw_with, simulate_pulsed_with, BackgroundMix, EmitterModel, PhotonStream, PulseTrain,
    SimOptions,
};
use photonstat::wgm::{find_dips, fit_dip, fsr_geometric, ResonatorGeometry};
use serde::Deserialize;

use crate::util::{
    kv, kvf, load_config, load_stream_pair, out_path, per_ps_to_per_s, per_s_to_per_ps, pick,
    require, usage, CliResult,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    /// One CSV file holding both detector channels.
    Csv,
    /// One binary stream file per detector channel.
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PairModeArg {
    /// Histogram every pair within the lag window.
    AllPairs,
    /// Histogram only the lag from each start to the next stop.
    StartStop,
}

impl PairModeArg {
    fn to_mode(self) -> PairMode {
        match self {
            PairModeArg::AllPairs => PairMode::AllPairs,
            PairModeArg::StartStop => PairMode::StartStop,
        }
    }
}

fn parse_mode_key(value: &str) -> CliResult<PairModeArg> {
    match value {
        "all-pairs" => Ok(PairModeArg::AllPairs),
        "start-stop" => Ok(PairModeArg::StartStop),
        other => Err(usage(format!(
            "mode must be all-pairs or start-stop, got {other}"
        ))),
    }
}

fn out_name(flag: Option<String>, config: Option<String>, default: &str) -> PathBuf {
    PathBuf::from(pick(flag, config, default.to_string()))
}

/// Builds the intensity mix shared by the correction commands.
fn resolve_mix(
    a: Option<f64>,
    b: Option<f64>,
    da: Option<f64>,
    db: Option<f64>,
    dr: Option<f64>,
    cfg: &MixKeys,
) -> CliResult<BackgroundMix> {
    let a = require("a", a, cfg.a)?;
    let b = require("b", b, cfg.b)?;
    let da = pick(da, cfg.da, 0.0);
    let db = pick(db, cfg.db, 0.0);
    let dr = pick(dr, cfg.dr, 0.0);
    Ok(BackgroundMix::with_uncertainties(a, b, da, db, dr)?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixKeys {
    a: Option<f64>,
    b: Option<f64>,
    da: Option<f64>,
    db: Option<f64>,
    dr: Option<f64>,
}

// ---------------------------------------------------------------- sim-cw --

#[derive(Args)]
pub struct SimCwArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Acquisition span, ps.
    #[arg(long)]
    duration_ps: Option<u64>,
    /// Excited-state lifetime, ps.
    #[arg(long)]
    lifetime_ps: Option<f64>,
    /// Continuous pump rate, 1/s.
    #[arg(long)]
    pump_rate_per_s: Option<f64>,
    /// Shelving and recovery rate, 1/s (0 disables the shelf).
    #[arg(long)]
    shelving_rate_per_s: Option<f64>,
    /// Probability that an emitted photon is recorded.
    #[arg(long)]
    detected_fraction: Option<f64>,
    /// Uncorrelated background rate before the splitter, 1/s.
    #[arg(long)]
    background_rate_per_s: Option<f64>,
    /// Detector dead time, ps.
    #[arg(long)]
    dead_time_ps: Option<u64>,
    /// Probability that a detection spawns one afterpulse.
    #[arg(long)]
    afterpulse_probability: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Output name stem, extended with .csv or _a.phst/_b.phst.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimCwConfig {
    seed: Option<u64>,
    duration_ps: Option<u64>,
    lifetime_ps: Option<f64>,
    pump_rate_per_s: Option<f64>,
    shelving_rate_per_s: Option<f64>,
    detected_fraction: Option<f64>,
    background_rate_per_s: Option<f64>,
    dead_time_ps: Option<u64>,
    afterpulse_probability: Option<f64>,
    format: Option<String>,
    out: Option<String>,
}

fn resolve_format(flag: Option<FormatArg>, config: Option<String>) -> CliResult<FormatArg> {
    if let Some(flag) = flag {
        return Ok(flag);
    }
    match config.as_deref() {
        None | Some("csv") => Ok(FormatArg::Csv),
        Some("binary") => Ok(FormatArg::Binary),
        Some(other) => Err(usage(format!("format must be csv or binary, got {other}"))),
    }
}

fn write_stream_pair(
    a: &PhotonStream,
    b: &PhotonStream,
    format: FormatArg,
    stem: &str,
    out_dir: &Path,
) -> CliResult<()> {
    match format {
        FormatArg::Csv => {
            let path = out_path(out_dir, Path::new(&format!("{stem}.csv")))?;
            io::write_streams_csv(&path, &[a, b])?;
            kv("output", path.display());
        }
        FormatArg::Binary => {
            let path_a = out_path(out_dir, Path::new(&format!("{stem}_a.phst")))?;
            let path_b = out_path(out_dir, Path::new(&format!("{stem}_b.phst")))?;
            io::write_stream_binary(&path_a, a)?;
            io::write_stream_binary(&path_b, b)?;
            kv("output_a", path_a.display());
            kv("output_b", path_b.display());
        }
    }
    Ok(())
}

fn sim_options(dead_time_ps: Option<u64>, afterpulse_probability: f64) -> SimOptions {
    SimOptions {
        dead_time_ps,
        afterpulse_probability,
        ..SimOptions::default()
    }
}

pub fn sim_cw(args: SimCwArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: SimCwConfig = load_config(args.config.as_deref())?;
    let seed = pick(args.seed, cfg.seed, 1);
    let duration_ps = require("duration-ps", args.duration_ps, cfg.duration_ps)?;
    let lifetime_ps = require("lifetime-ps", args.lifetime_ps, cfg.lifetime_ps)?;
    let pump_per_s = require("pump-rate-per-s", args.pump_rate_per_s, cfg.pump_rate_per_s)?;
    let shelving_per_s = pick(args.shelving_rate_per_s, cfg.shelving_rate_per_s, 0.0);
    let background_per_s = pick(args.background_rate_per_s, cfg.background_rate_per_s, 0.0);

    let mut emitter = EmitterModel::cw(lifetime_ps, per_s_to_per_ps(pump_per_s))
        .with_detected_fraction(pick(args.detected_fraction, cfg.detected_fraction, 1.0));
    if shelving_per_s > 0.0 {
        emitter = emitter.with_shelving(per_s_to_per_ps(shelving_per_s));
    }
    let options = sim_options(
        args.dead_time_ps.or(cfg.dead_time_ps),
        pick(args.afterpulse_probability, cfg.afterpulse_probability, 0.0),
    );
    let (a, b) = simulate_cw_with(
        &emitter,
        per_s_to_per_ps(background_per_s),
        duration_ps,
        seed,
        &options,
    )?;

    kv("seed", seed);
    kv("duration_ps", duration_ps);
    kv("events_a", a.len());
    kv("events_b", b.len());
    kvf("rate_a_per_s", per_ps_to_per_s(a.rate_per_ps()), 3);
    kvf("rate_b_per_s", per_ps_to_per_s(b.rate_per_ps()), 3);
    let format = resolve_format(args.format, cfg.format)?;
    let stem = pick(args.out, cfg.out, "sim_cw".to_string());
    write_stream_pair(&a, &b, format, &stem, out_dir)
}

// ------------------------------------------------------------ sim-pulsed --

#[derive(Args)]
pub struct SimPulsedArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Laser repetition period, ps.
    #[arg(long)]
    period_ps: Option<u64>,
    /// Number of excitation pulses.
    #[arg(long)]
    pulses: Option<u64>,
    /// Excited-state lifetime, ps.
    #[arg(long)]
    lifetime_ps: Option<f64>,
    /// Probability a pulse leaves the emitter excited.
    #[arg(long)]
    excitation_probability: Option<f64>,
    /// Shelving and recovery rate, 1/s (0 disables the shelf).
    #[arg(long)]
    shelving_rate_per_s: Option<f64>,
    /// Probability that an emitted photon is recorded.
    #[arg(long)]
    detected_fraction: Option<f64>,
    /// Mean uncorrelated background events per pulse period.
    #[arg(long)]
    background_per_pulse: Option<f64>,
    /// Detector dead time, ps.
    #[arg(long)]
    dead_time_ps: Option<u64>,
    /// Probability that a detection spawns one afterpulse.
    #[arg(long)]
    afterpulse_probability: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Output name stem, extended with .csv or _a.phst/_b.phst.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimPulsedConfig {
    seed: Option<u64>,
    period_ps: Option<u64>,
    pulses: Option<u64>,
    lifetime_ps: Option<f64>,
    excitation_probability: Option<f64>,
    shelving_rate_per_s: Option<f64>,
    detected_fraction: Option<f64>,
    background_per_pulse: Option<f64>,
    dead_time_ps: Option<u64>,
    afterpulse_probability: Option<f64>,
    format: Option<String>,
    out: Option<String>,
}

pub fn sim_pulsed(args: SimPulsedArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: SimPulsedConfig = load_config(args.config.as_deref())?;
    let seed = pick(args.seed, cfg.seed, 1);
    let period_ps = require("period-ps", args.period_ps, cfg.period_ps)?;
    let pulses = require("pulses", args.pulses, cfg.pulses)?;
    let lifetime_ps = require("lifetime-ps", args.lifetime_ps, cfg.lifetime_ps)?;
    let excitation = require(
        "excitation-probability",
        args.excitation_probability,
        cfg.excitation_probability,
    )?;
    let shelving_per_s = pick(args.shelving_rate_per_s, cfg.shelving_rate_per_s, 0.0);
    let background_per_pulse = pick(args.background_per_pulse, cfg.background_per_pulse, 0.0);

    let mut emitter = EmitterModel::pulsed(lifetime_ps, excitation)
        .with_detected_fraction(pick(args.detected_fraction, cfg.detected_fraction, 1.0));
    if shelving_per_s > 0.0 {
        emitter = emitter.with_shelving(per_s_to_per_ps(shelving_per_s));
    }
    let train = PulseTrain::new(period_ps, pulses)?;
    let options = sim_options(
        args.dead_time_ps.or(cfg.dead_time_ps),
        pick(args.afterpulse_probability, cfg.afterpulse_probability, 0.0),
    );
    let (a, b) = simulate_pulsed_with(&emitter, &train, background_per_pulse, seed, &options)?;

    kv("seed", seed);
    kv("pulses", pulses);
    kv("duration_ps", a.duration_ps());
    kv("events_a", a.len());
    kv("events_b", b.len());
    let format = resolve_format(args.format, cfg.format)?;
    let stem = pick(args.out, cfg.out, "sim_pulsed".to_string());
    write_stream_pair(&a, &b, format, &stem, out_dir)
}

// ------------------------------------------------- correlate and rebin --

#[derive(Args)]
pub struct CorrelateArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Timestamp file holding both detector channels.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Timestamp file for the start channel.
    #[arg(long, value_name = "FILE")]
    a: Option<PathBuf>,
    /// Timestamp file for the stop channel.
    #[arg(long, value_name = "FILE")]
    b: Option<PathBuf>,
    /// Lag bin width, ps.
    #[arg(long)]
    bin_width_ps: Option<u64>,
    /// Half-width of the lag window, ps.
    #[arg(long)]
    window_ps: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<PairModeArg>,
    /// Correlate the start channel with itself (ignores --b / second channel).
    #[arg(long)]
    auto: bool,
    /// Append the start-stop survival correction as a corrected column.
    #[arg(long)]
    pileup_correction: bool,
    /// Use the multi-threaded pair counter.
    #[arg(long)]
    parallel: bool,
    /// Normalization tail start, ps; with --tail-span-ps also writes a curve.
    #[arg(long)]
    tail_start_ps: Option<u64>,
    /// Normalization tail span, ps.
    #[arg(long)]
    tail_span_ps: Option<u64>,
    /// Histogram output name.
    #[arg(long)]
    out: Option<String>,
    /// Normalized curve output name.
    #[arg(long)]
    out_curve: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrelateConfig {
    input: Option<String>,
    a: Option<String>,
    b: Option<String>,
    bin_width_ps: Option<u64>,
    window_ps: Option<u64>,
    mode: Option<String>,
    auto: Option<bool>,
    pileup_correction: Option<bool>,
    parallel: Option<bool>,
    tail_start_ps: Option<u64>,
    tail_span_ps: Option<u64>,
    out: Option<String>,
    out_curve: Option<String>,
}

/// Writes the histogram, optionally a tail-normalized curve, and the shared
/// summary lines. Used by both lag-grid and period-grid commands.
fn finish_histogram(
    histogram: &CorrelationHistogram,
    tail: Option<(u64, u64)>,
    out: PathBuf,
    out_curve: PathBuf,
    out_dir: &Path,
) -> CliResult<()> {
    kv("mode", io::mode_name(histogram.mode()));
    kv("bins", histogram.bin_count());
    kv("pairs", histogram.total_counts());
    let path = out_path(out_dir, &out)?;
    io::write_histogram_csv(&path, histogram)?;
    kv("output", path.display());
    if let Some((tail_start_ps, tail_span_ps)) = tail {
        let curve = normalize(histogram, tail_start_ps, tail_span_ps)?;
        let zero = curve.nearest_bin(0.0);
        kv("normalization", curve.normalization);
        kvf("g2_zero", curve.g2[zero], 6);
        kvf("sigma_zero", curve.sigma[zero], 6);
        let path = out_path(out_dir, &out_curve)?;
        io::write_curve_csv(&path, &curve)?;
        kv("output_curve", path.display());
    }
    Ok(())
}

fn resolve_tail(
    flag_start: Option<u64>,
    flag_span: Option<u64>,
    cfg_start: Option<u64>,
    cfg_span: Option<u64>,
) -> CliResult<Option<(u64, u64)>> {
    match (flag_start.or(cfg_start), flag_span.or(cfg_span)) {
        (Some(start), Some(span)) => Ok(Some((start, span))),
        (None, None) => Ok(None),
        _ => Err(usage(
            "tail normalization needs both --tail-start-ps and --tail-span-ps",
        )),
    }
}

fn path_from(flag: Option<PathBuf>, config: Option<String>) -> Option<PathBuf> {
    flag.or(config.map(PathBuf::from))
}

pub fn correlate(args: CorrelateArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: CorrelateConfig = load_config(args.config.as_deref())?;
    let bin_width_ps = require("bin-width-ps", args.bin_width_ps, cfg.bin_width_ps)?;
    let window_ps = require("window-ps", args.window_ps, cfg.window_ps)?;
    let mode = match args.mode {
        Some(mode) => mode,
        None => match cfg.mode.as_deref() {
            Some(key) => parse_mode_key(key)?,
            None => PairModeArg::AllPairs,
        },
    }
    .to_mode();
    let input = path_from(args.input, cfg.input);
    let path_a = path_from(args.a, cfg.a);
    let path_b = path_from(args.b, cfg.b);

    let histogram = if args.auto || cfg.auto.unwrap_or(false) {
        let path = input
            .or(path_a)
            .ok_or_else(|| usage("autocorrelation needs --input or --a"))?;
        let stream = crate::util::load_single_stream(&path)?;
        autocorrelate(&stream, bin_width_ps, window_ps, mode)?
    } else {
        let (a, b) = load_stream_pair(input.as_deref(), path_a.as_deref(), path_b.as_deref())?;
        if args.parallel || cfg.parallel.unwrap_or(false) {
            cross_correlate_par(&a, &b, bin_width_ps, window_ps, mode)?
        } else {
            cross_correlate(&a, &b, bin_width_ps, window_ps, mode)?
        }
    };
    let histogram = if args.pileup_correction || cfg.pileup_correction.unwrap_or(false) {
        start_stop_correction(&histogram)
    } else {
        histogram
    };
    let tail = resolve_tail(
        args.tail_start_ps,
        args.tail_span_ps,
        cfg.tail_start_ps,
        cfg.tail_span_ps,
    )?;
    finish_histogram(
        &histogram,
        tail,
        out_name(args.out, cfg.out, "histogram.csv"),
        out_name(args.out_curve, cfg.out_curve, "curve.csv"),
        out_dir,
    )
}

#[derive(Args)]
pub struct RebinArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Timestamp file holding both detector channels.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Timestamp file for the start channel.
    #[arg(long, value_name = "FILE")]
    a: Option<PathBuf>,
    /// Timestamp file for the stop channel.
    #[arg(long, value_name = "FILE")]
    b: Option<PathBuf>,
    /// Laser repetition period, ps; each bin spans one period.
    #[arg(long)]
    delta_t_ps: Option<u64>,
    /// Number of periods on each side of zero.
    #[arg(long)]
    periods: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<PairModeArg>,
    /// Use the multi-threaded pair counter.
    #[arg(long)]
    parallel: bool,
    /// Normalization tail start, ps; with --tail-span-ps also writes a curve.
    #[arg(long)]
    tail_start_ps: Option<u64>,
    /// Normalization tail span, ps.
    #[arg(long)]
    tail_span_ps: Option<u64>,
    /// Histogram output name.
    #[arg(long)]
    out: Option<String>,
    /// Normalized curve output name.
    #[arg(long)]
    out_curve: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RebinConfig {
    input: Option<String>,
    a: Option<String>,
    b: Option<String>,
    delta_t_ps: Option<u64>,
    periods: Option<u32>,
    mode: Option<String>,
    parallel: Option<bool>,
    tail_start_ps: Option<u64>,
    tail_span_ps: Option<u64>,
    out: Option<String>,
    out_curve: Option<String>,
}

pub fn rebin(args: RebinArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: RebinConfig = load_config(args.config.as_deref())?;
    let delta_t_ps = require("delta-t-ps", args.delta_t_ps, cfg.delta_t_ps)?;
    let periods = require("periods", args.periods, cfg.periods)?;
    let mode = match args.mode {
        Some(mode) => mode,
        None => match cfg.mode.as_deref() {
            Some(key) => parse_mode_key(key)?,
            None => PairModeArg::AllPairs,
        },
    }
    .to_mode();
    let (a, b) = load_stream_pair(
        path_from(args.input, cfg.input).as_deref(),
        path_from(args.a, cfg.a).as_deref(),
        path_from(args.b, cfg.b).as_deref(),
    )?;
    let histogram = if args.parallel || cfg.parallel.unwrap_or(false) {
        rebin_to_periods_par(&a, &b, delta_t_ps, periods, mode)?
    } else {
        rebin_to_periods(&a, &b, delta_t_ps, periods, mode)?
    };
    let tail = resolve_tail(
        args.tail_start_ps,
        args.tail_span_ps,
        cfg.tail_start_ps,
        cfg.tail_span_ps,
    )?;
    finish_histogram(
        &histogram,
        tail,
        out_name(args.out, cfg.out, "period_histogram.csv"),
        out_name(args.out_curve, cfg.out_curve, "period_curve.csv"),
        out_dir,
    )
}

// ------------------------------------------------------------ g2-correct --

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorrectModeArg {
    /// Scalar zero-lag correction of a continuous-wave measurement.
    Cw,
    /// Per-bin correction of a pulsed curve against a background curve.
    Pulsed,
}

#[derive(Args)]
pub struct G2CorrectArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<CorrectModeArg>,
    /// Measured joint zero-lag correlation (cw mode).
    #[arg(long)]
    g2ab: Option<f64>,
    /// Emitter share of the detected intensity.
    #[arg(long)]
    a: Option<f64>,
    /// Background share of the detected intensity.
    #[arg(long)]
    b: Option<f64>,
    /// Uncertainty of the emitter share.
    #[arg(long)]
    da: Option<f64>,
    /// Uncertainty of the background share.
    #[arg(long)]
    db: Option<f64>,
    /// Uncertainty of the background-to-emitter ratio.
    #[arg(long)]
    dr: Option<f64>,
    /// Joint correlation curve (pulsed mode).
    #[arg(long, value_name = "FILE")]
    joint: Option<PathBuf>,
    /// Background-only correlation curve (pulsed mode).
    #[arg(long, value_name = "FILE")]
    background: Option<PathBuf>,
    /// Corrected curve output name (pulsed mode).
    #[arg(long)]
    out: Option<String>,
    /// Key=value report output name (pulsed mode).
    #[arg(long)]
    out_report: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct G2CorrectConfig {
    mode: Option<String>,
    g2ab: Option<f64>,
    #[serde(flatten)]
    mix: MixKeys,
    joint: Option<String>,
    background: Option<String>,
    out: Option<String>,
    out_report: Option<String>,
}

pub fn g2_correct(args: G2CorrectArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: G2CorrectConfig = load_config(args.config.as_deref())?;
    let mode = match args.mode {
        Some(mode) => mode,
        None => match cfg.mode.as_deref() {
            Some("cw") => CorrectModeArg::Cw,
            Some("pulsed") => CorrectModeArg::Pulsed,
            Some(other) => return Err(usage(format!("mode must be cw or pulsed, got {other}"))),
            None => return Err(usage("missing required parameter --mode (cw or pulsed)")),
        },
    };
    let mix = resolve_mix(args.a, args.b, args.da, args.db, args.dr, &cfg.mix)?;
    match mode {
        CorrectModeArg::Cw => {
            let g2ab = require("g2ab", args.g2ab, cfg.g2ab)?;
            let result = cw_correct(g2ab, &mix)?;
            kvf("g2ab", g2ab, 6);
            kvf("g2a", result.zero_g2_a(), 6);
            kvf("delta_g2a", result.zero_delta(), 6);
            kvf("delta_from_ratio", result.zero_budget.from_ratio, 6);
            kvf("delta_from_a", result.zero_budget.from_a, 6);
            kvf("delta_from_b", result.zero_budget.from_b, 6);
            Ok(())
        }
        CorrectModeArg::Pulsed => {
            let joint_path = path_from(args.joint, cfg.joint)
                .ok_or_else(|| usage("pulsed correction needs --joint CURVE"))?;
            let background_path = path_from(args.background, cfg.background)
                .ok_or_else(|| usage("pulsed correction needs --background CURVE"))?;
            let joint = io::read_curve_csv(&joint_path)?;
            let background = io::read_curve_csv(&background_path)?;
            let result = pulsed_correct(&joint, &background, &mix)?;
            for line in result.report().lines() {
                println!("{line}");
            }
            let out = out_path(out_dir, &out_name(args.out, cfg.out, "corrected_curve.csv"))?;
            io::write_correction_csv(&out, &result)?;
            kv("output", out.display());
            let report = out_path(
                out_dir,
                &out_name(args.out_report, cfg.out_report, "correction_report.txt"),
            )?;
            io::write_correction_report(&report, &result)?;
            kv("output_report", report.display());
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- g2-fit --

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    /// Single antibunching recovery time.
    TwoLevel,
    /// Antibunching recovery plus a shelving bunching shoulder.
    ThreeLevel,
}

#[derive(Args)]
pub struct G2FitArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Normalized correlation curve to fit.
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Starting zero-lag value; needs --tau1-ps.
    #[arg(long)]
    g0: Option<f64>,
    /// Starting antibunching time, ps; needs --g0.
    #[arg(long)]
    tau1_ps: Option<f64>,
    /// Starting shoulder amplitude (three-level).
    #[arg(long)]
    beta: Option<f64>,
    /// Starting shoulder decay time, ps (three-level).
    #[arg(long)]
    tau2_ps: Option<f64>,
    /// Replace covariance errors with this many bootstrap resamples.
    #[arg(long)]
    bootstrap: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct G2FitConfig {
    curve: Option<String>,
    model: Option<String>,
    g0: Option<f64>,
    tau1_ps: Option<f64>,
    beta: Option<f64>,
    tau2_ps: Option<f64>,
    bootstrap: Option<u32>,
    seed: Option<u64>,
}

fn print_fit(fit: &AntibunchingFit, bins: usize) {
    let model = match fit.model {
        AntibunchingModel::TwoLevel => "two-level",
        AntibunchingModel::ThreeLevel => "three-level",
    };
    kv("model", model);
    kv("bins", bins);
    kvf("g0", fit.g0, 6);
    kvf("g0_err", fit.g0_err, 6);
    kvf("tau1_ps", fit.tau1_ps, 3);
    kvf("tau1_err_ps", fit.tau1_err_ps, 3);
    if fit.model == AntibunchingModel::ThreeLevel {
        kvf("beta", fit.beta, 6);
        kvf("beta_err", fit.beta_err, 6);
        kvf("tau2_ps", fit.tau2_ps.unwrap_or(f64::NAN), 3);
        kvf("tau2_err_ps", fit.tau2_err_ps.unwrap_or(f64::NAN), 3);
    }
    kvf("chi2_red", fit.chi2_red, 6);
    kv("iterations", fit.iterations);
}

pub fn g2_fit(args: G2FitArgs, _out_dir: &Path) -> CliResult<()> {
    let cfg: G2FitConfig = load_config(args.config.as_deref())?;
    let curve_path = path_from(args.curve, cfg.curve)
        .ok_or_else(|| usage("missing required parameter --curve"))?;
    let model = match (args.model, cfg.model.as_deref()) {
        (Some(ModelArg::TwoLevel), _) => AntibunchingModel::TwoLevel,
        (Some(ModelArg::ThreeLevel), _) => AntibunchingModel::ThreeLevel,
        (None, None) | (None, Some("two-level")) => AntibunchingModel::TwoLevel,
        (None, Some("three-level")) => AntibunchingModel::ThreeLevel,
        (None, Some(other)) => {
            return Err(usage(format!(
                "model must be two-level or three-level, got {other}"
            )))
        }
    };
    let curve = io::read_curve_csv(&curve_path)?;

    let g0 = args.g0.or(cfg.g0);
    let tau1 = args.tau1_ps.or(cfg.tau1_ps);
    let init = match (g0, tau1) {
        (Some(g0), Some(tau1_ps)) => {
            let mut params = vec![g0, tau1_ps];
            if model == AntibunchingModel::ThreeLevel {
                params.push(pick(args.beta, cfg.beta, 0.1));
                params.push(pick(args.tau2_ps, cfg.tau2_ps, 5.0 * tau1_ps));
            }
            Some(params)
        }
        (None, None) => None,
        _ => return Err(usage("a manual start needs both --g0 and --tau1-ps")),
    };

    let fit = match args.bootstrap.or(cfg.bootstrap) {
        Some(resamples) => fit_antibunching_bootstrap(
            &curve,
            model,
            init.as_deref(),
            resamples,
            pick(args.seed, cfg.seed, 1),
        )?,
        None => fit_antibunching(&curve, model, init.as_deref())?,
    };
    print_fit(&fit, curve.len());
    Ok(())
}

// ------------------------------------------------------- propagate-error --

#[derive(Args)]
pub struct PropagateErrorArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Measured joint zero-lag correlation.
    #[arg(long)]
    g2ab: Option<f64>,
    /// Emitter share of the detected intensity.
    #[arg(long)]
    a: Option<f64>,
    /// Background share of the detected intensity.
    #[arg(long)]
    b: Option<f64>,
    /// Uncertainty of the emitter share.
    #[arg(long)]
    da: Option<f64>,
    /// Uncertainty of the background share.
    #[arg(long)]
    db: Option<f64>,
    /// Uncertainty of the background-to-emitter ratio.
    #[arg(long)]
    dr: Option<f64>,
    /// Cross-check the linear budget with this many Monte Carlo draws.
    #[arg(long)]
    mc_samples: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropagateErrorConfig {
    g2ab: Option<f64>,
    #[serde(flatten)]
    mix: MixKeys,
    mc_samples: Option<u32>,
    seed: Option<u64>,
}

pub fn propagate_error_cmd(args: PropagateErrorArgs, _out_dir: &Path) -> CliResult<()> {
    let cfg: PropagateErrorConfig = load_config(args.config.as_deref())?;
    let g2ab = require("g2ab", args.g2ab, cfg.g2ab)?;
    let mix = resolve_mix(args.a, args.b, args.da, args.db, args.dr, &cfg.mix)?;
    let result = cw_correct(g2ab, &mix)?;
    kvf("g2ab", g2ab, 6);
    kvf("ratio", mix.ratio(), 6);
    kvf("g2a", result.zero_g2_a(), 6);
    kvf("delta_g2a", result.zero_delta(), 6);
    kvf("delta_from_ratio", result.zero_budget.from_ratio, 6);
    kvf("delta_from_a", result.zero_budget.from_a, 6);
    kvf("delta_from_b", result.zero_budget.from_b, 6);
    if let Some(samples) = args.mc_samples.or(cfg.mc_samples) {
        let seed = pick(args.seed, cfg.seed, 1);
        let mc = propagate_error_mc(g2ab, &mix, samples, seed);
        kvf("delta_g2a_mc", mc, 6);
        kv("mc_samples", samples);
        kv("seed", seed);
    }
    Ok(())
}

// ------------------------------------------------------- normalize-trace --

#[derive(Args)]
pub struct NormalizeTraceArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Trace file carrying its reference as a third column.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Coupled transmission trace.
    #[arg(long, value_name = "FILE")]
    coupled: Option<PathBuf>,
    /// Reference trace taken away from any resonance.
    #[arg(long, value_name = "FILE")]
    reference: Option<PathBuf>,
    /// Output trace name.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizeTraceConfig {
    input: Option<String>,
    coupled: Option<String>,
    reference: Option<String>,
    out: Option<String>,
}

pub fn normalize_trace(args: NormalizeTraceArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: NormalizeTraceConfig = load_config(args.config.as_deref())?;
    let input = path_from(args.input, cfg.input);
    let coupled = path_from(args.coupled, cfg.coupled);
    let reference = path_from(args.reference, cfg.reference);
    let normalized = match (input, coupled, reference) {
        (Some(path), None, None) => {
            let trace = io::read_trace_csv(&path)?;
            photonstat::wgm::normalize_embedded(&trace)?
        }
        (None, Some(coupled), Some(reference)) => {
            let coupled = io::read_trace_csv(&coupled)?;
            let reference = io::read_trace_csv(&reference)?;
            photonstat::wgm::normalize_transmission(&coupled, &reference)?
        }
        _ => {
            return Err(usage(
                "pass either --input FILE (embedded reference) or --coupled FILE and --reference FILE",
            ))
        }
    };
    kv("samples", normalized.wavelength_nm.len());
    let out = out_path(out_dir, &out_name(args.out, cfg.out, "normalized_trace.csv"))?;
    io::write_trace_csv(&out, &normalized)?;
    kv("output", out.display());
    Ok(())
}

// ----------------------------------------------------------------- q-fit --

#[derive(Args)]
pub struct QFitArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Normalized transmission trace.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Fit window lower edge, nm; needs --window-hi-nm.
    #[arg(long)]
    window_lo_nm: Option<f64>,
    /// Fit window upper edge, nm.
    #[arg(long)]
    window_hi_nm: Option<f64>,
    /// Detection threshold as a fractional dip depth.
    #[arg(long)]
    prominence: Option<f64>,
    /// Fit every detected dip instead of only the deepest.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QFitConfig {
    trace: Option<String>,
    window_lo_nm: Option<f64>,
    window_hi_nm: Option<f64>,
    prominence: Option<f64>,
    all: Option<bool>,
}

fn print_resonance(prefix: &str, fit: &photonstat::wgm::ResonanceFit) {
    kvf(&format!("{prefix}center_nm"), fit.center_nm, 6);
    kvf(&format!("{prefix}center_err_nm"), fit.center_err_nm, 6);
    kvf(&format!("{prefix}fwhm_nm"), fit.fwhm_nm, 6);
    kvf(&format!("{prefix}fwhm_err_nm"), fit.fwhm_err_nm, 6);
    kvf(&format!("{prefix}depth"), fit.depth, 6);
    kvf(&format!("{prefix}q"), fit.q, 1);
    kvf(&format!("{prefix}q_err"), fit.q_err, 1);
    kv(&format!("{prefix}low_confidence"), fit.low_confidence);
    kvf(&format!("{prefix}chi2_red"), fit.chi2_red, 6);
}

pub fn q_fit(args: QFitArgs, _out_dir: &Path) -> CliResult<()> {
    let cfg: QFitConfig = load_config(args.config.as_deref())?;
    let trace_path = path_from(args.trace, cfg.trace)
        .ok_or_else(|| usage("missing required parameter --trace"))?;
    let trace = io::read_trace_csv(&trace_path)?;
    let window = match (
        args.window_lo_nm.or(cfg.window_lo_nm),
        args.window_hi_nm.or(cfg.window_hi_nm),
    ) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => {
            return Err(usage(
                "an explicit window needs both --window-lo-nm and --window-hi-nm",
            ))
        }
    };

    if let Some(window) = window {
        let fit = fit_dip(&trace, window, None)?;
        print_resonance("", &fit);
        return Ok(());
    }

    let prominence = pick(args.prominence, cfg.prominence, 0.1);
    let dips = find_dips(&trace, prominence);
    kv("dips_found", dips.len());
    if dips.is_empty() {
        return Err(crate::util::CliError::Run(format!(
            "no dips deeper than {prominence} found; lower --prominence or pass an explicit window"
        )));
    }
    if args.all || cfg.all.unwrap_or(false) {
        for (index, dip) in dips.iter().enumerate() {
            let fit = fit_dip(&trace, dip.window_nm, None)?;
            print_resonance(&format!("dip{index}_"), &fit);
        }
        return Ok(());
    }
    let deepest = dips
        .iter()
        .max_by(|x, y| x.depth.total_cmp(&y.depth))
        .expect("non-empty dip list");
    kv("merged", deepest.merged);
    let fit = fit_dip(&trace, deepest.window_nm, None)?;
    print_resonance("", &fit);
    Ok(())
}

// ------------------------------------------------------------------- fsr --

#[derive(Args)]
pub struct FsrArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Resonator diameter, micrometers.
    #[arg(long)]
    diameter_um: Option<f64>,
    /// Effective refractive index of the circulating mode.
    #[arg(long)]
    n: Option<f64>,
    /// Wavelength the spacing is evaluated at, nm.
    #[arg(long)]
    wavelength_nm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FsrConfig {
    diameter_um: Option<f64>,
    n: Option<f64>,
    wavelength_nm: Option<f64>,
}

pub fn fsr(args: FsrArgs, _out_dir: &Path) -> CliResult<()> {
    let cfg: FsrConfig = load_config(args.config.as_deref())?;
    let diameter_um = require("diameter-um", args.diameter_um, cfg.diameter_um)?;
    let n = require("n", args.n, cfg.n)?;
    let wavelength_nm = require("wavelength-nm", args.wavelength_nm, cfg.wavelength_nm)?;
    let geometry = ResonatorGeometry::new(diameter_um, n)?;
    kv("diameter_um", diameter_um);
    kv("effective_index", n);
    kv("wavelength_nm", wavelength_nm);
    kvf("fsr_nm", fsr_geometric(&geometry, wavelength_nm), 4);
    Ok(())
}

// ------------------------------------------------------------- modes-fft --

#[derive(Args)]
pub struct ModesFftArgs {
    /// Declarative config file; explicit flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Broadband spectrum to analyze.
    #[arg(long, value_name = "FILE")]
    spectrum: Option<PathBuf>,
    /// Analysis segment width, nm.
    #[arg(long)]
    segment_nm: Option<f64>,
    /// Fractional overlap between neighboring segments.
    #[arg(long)]
    overlap: Option<f64>,
    /// Mode map output name.
    #[arg(long)]
    out_map: Option<String>,
    /// Band track output name.
    #[arg(long)]
    out_tracks: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModesFftConfig {
    spectrum: Option<String>,
    segment_nm: Option<f64>,
    overlap: Option<f64>,
    out_map: Option<String>,
    out_tracks: Option<String>,
}

pub fn modes_fft(args: ModesFftArgs, out_dir: &Path) -> CliResult<()> {
    let cfg: ModesFftConfig = load_config(args.config.as_deref())?;
    let spectrum_path = path_from(args.spectrum, cfg.spectrum)
        .ok_or_else(|| usage("missing required parameter --spectrum"))?;
    let spectrum = io::read_spectrum_csv(&spectrum_path)?;
    let segment_nm = pick(args.segment_nm, cfg.segment_nm, 25.0);
    let overlap = pick(args.overlap, cfg.overlap, 0.5);
    let map = photonstat::wgm::segmented_fourier(&spectrum, segment_nm, overlap)?;

    kv("segments", map.segment_center_nm.len());
    kv("frequency_bins", map.frequency_inv_nm.len());
    kvf("frequency_step_inv_nm", map.frequency_step_inv_nm(), 6);
    kv("tracks", map.tracks.len());
    for track in &map.tracks {
        kv(
            &format!("track{}_points", track.order),
            track.segment_center_nm.len(),
        );
        kvf(
            &format!("track{}_coefficient_nm", track.order),
            track.coefficient_nm,
            3,
        );
    }
    if let Some(base) = map.base_track() {
        let mid_nm = (spectrum.wavelength_nm[0]
            + spectrum.wavelength_nm[spectrum.wavelength_nm.len() - 1])
            / 2.0;
        let frequency = base.frequency_at(mid_nm);
        if frequency > 0.0 {
            kvf("base_fsr_nm", 1.0 / frequency, 4);
        }
    }
    let map_path = out_path(out_dir, &out_name(args.out_map, cfg.out_map, "mode_map.csv"))?;
    io::write_mode_map_csv(&map_path, &map)?;
    kv("output_map", map_path.display());
    let tracks_path = out_path(
        out_dir,
        &out_name(args.out_tracks, cfg.out_tracks, "band_tracks.csv"),
    )?;
    io::write_band_tracks_csv(&tracks_path, &map)?;
    kv("output_tracks", tracks_path.display());
    Ok(())
}

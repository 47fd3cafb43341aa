//! Whole analyses described by one declarative file and run end to end.
//!
//! Two pipeline kinds exist. `zero-bin-correction` corrects a measured
//! zero-lag correlation value for uncorrelated background and reports the
//! full uncertainty budget. `pulsed-simulation` generates a pulsed detection
//! run with background, rebins it onto the laser period grid, normalizes
//! against the long-lag tail, and corrects the zero-period bin, which
//! exercises every stage a real measurement goes through.
//!
//! Every run writes a manifest of flat key=value lines carrying the tool
//! version, the pipeline kind, all resolved parameters, and all seeds and
//! output names: enough to reproduce the outputs bit for bit.

use std::path::{Path, PathBuf};

use photonstat::correlator::{normalize, rebin_to_periods, CorrelationCurve, PairMode};
use photonstat::g2::{pulsed_correct, CorrectionResult};
use photonstat::io;
use photonstat::synth::{simulate_pulsed, BackgroundMix, EmitterModel, PulseTrain};
use serde::Deserialize;

use crate::util::{kv, kvf, out_path, per_s_to_per_ps, usage, CliResult};

#[derive(clap::Args)]
pub struct PipelineArgs {
    /// Declarative pipeline description.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output file prefix; defaults to the config name or file stem.
    #[arg(long)]
    name: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineConfig {
    kind: String,
    name: Option<String>,
    seed: Option<u64>,
    mix: MixSection,
    correction: Option<CorrectionSection>,
    pulse: Option<PulseSection>,
    emitter: Option<EmitterSection>,
    background: Option<BackgroundSection>,
    rebin: Option<RebinSection>,
    normalize: Option<NormalizeSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixSection {
    a: f64,
    b: f64,
    #[serde(alias = "da")]
    delta_a: Option<f64>,
    #[serde(alias = "db")]
    delta_b: Option<f64>,
    #[serde(alias = "dr")]
    delta_ratio: Option<f64>,
}

impl MixSection {
    fn build(&self) -> CliResult<BackgroundMix> {
        Ok(BackgroundMix::with_uncertainties(
            self.a,
            self.b,
            self.delta_a.unwrap_or(0.0),
            self.delta_b.unwrap_or(0.0),
            self.delta_ratio.unwrap_or(0.0),
        )?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionSection {
    /// Measured joint correlation at zero lag.
    g2_ab_zero: f64,
    /// Background correlation at zero lag; Poissonian light when omitted.
    g2_b_zero: Option<f64>,
    /// Counting error of the joint value.
    sigma_g2_ab: Option<f64>,
    /// Counting error of the background value.
    sigma_g2_b: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PulseSection {
    period_ps: u64,
    count: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmitterSection {
    lifetime_ps: f64,
    excitation_probability: f64,
    detected_fraction: Option<f64>,
    shelving_rate_per_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundSection {
    per_pulse: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RebinSection {
    delta_t_ps: u64,
    periods: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizeSection {
    tail_start_ps: u64,
    tail_span_ps: u64,
}

/// Collects manifest lines and writes them as one flat key=value file.
struct Manifest {
    lines: Vec<String>,
}

impl Manifest {
    fn new(kind: &str, name: &str, config_path: &Path) -> Self {
        let mut manifest = Manifest { lines: Vec::new() };
        manifest.push("tool", "photonstat");
        manifest.push("version", env!("CARGO_PKG_VERSION"));
        manifest.push("command", "pipeline");
        manifest.push("kind", kind);
        manifest.push("name", name);
        manifest.push("config", config_path.display());
        manifest
    }

    fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key}={value}"));
    }

    fn push_mix(&mut self, mix: &BackgroundMix) {
        self.push("mix.a", mix.a());
        self.push("mix.b", mix.b());
        self.push("mix.delta_a", mix.delta_a());
        self.push("mix.delta_b", mix.delta_b());
        self.push("mix.delta_ratio", mix.delta_ratio());
    }

    fn write(&self, name: &str, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_path(out_dir, Path::new(&format!("{name}_manifest.txt")))?;
        std::fs::write(&path, self.lines.join("\n") + "\n")?;
        Ok(path)
    }
}

fn require_section<'a, T>(section: &'a Option<T>, name: &str, kind: &str) -> CliResult<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| usage(format!("pipeline kind {kind} needs a [{name}] section")))
}

pub fn pipeline(args: PipelineArgs, out_dir: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|err| usage(format!("cannot read config {}: {err}", args.config.display())))?;
    let config: PipelineConfig = toml::from_str(&text)
        .map_err(|err| usage(format!("config {}: {err}", args.config.display())))?;
    let name = args
        .name
        .or_else(|| config.name.clone())
        .or_else(|| {
            args.config
                .file_stem()
                .map(|stem| stem.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "pipeline".to_string());

    kv("kind", &config.kind);
    kv("name", &name);
    match config.kind.as_str() {
        "zero-bin-correction" => zero_bin_correction(&args.config, &config, &name, out_dir),
        "pulsed-simulation" => pulsed_simulation(&args.config, &config, &name, args.seed, out_dir),
        other => Err(usage(format!(
            "unknown pipeline kind {other}; expected zero-bin-correction or pulsed-simulation"
        ))),
    }
}

/// One-bin curve carrying a scalar zero-lag value and its counting error.
fn scalar_curve(value: f64, sigma: f64) -> CorrelationCurve {
    CorrelationCurve {
        lag_ps: vec![0.0],
        g2: vec![value],
        sigma: vec![sigma],
        normalization: 1.0,
    }
}

fn print_zero_summary(result: &CorrectionResult) {
    kvf("a", result.mix.a(), 6);
    kvf("b", result.mix.b(), 6);
    kvf("ratio", result.mix.ratio(), 6);
    kvf("g2ab_zero", result.g2_ab[result.zero_bin], 6);
    kvf("g2b_zero", result.g2_b[result.zero_bin], 6);
    kvf("g2a_zero", result.zero_g2_a(), 6);
    kvf("dg2a", result.zero_delta(), 6);
    kvf("delta_from_ratio", result.zero_budget.from_ratio, 6);
    kvf("delta_from_a", result.zero_budget.from_a, 6);
    kvf("delta_from_b", result.zero_budget.from_b, 6);
    kvf("delta_statistical", result.zero_delta_statistical, 6);
}

fn zero_bin_correction(
    config_path: &Path,
    config: &PipelineConfig,
    name: &str,
    out_dir: &Path,
) -> CliResult<()> {
    let correction = require_section(&config.correction, "correction", &config.kind)?;
    let mix = config.mix.build()?;
    let joint = scalar_curve(
        correction.g2_ab_zero,
        correction.sigma_g2_ab.unwrap_or(0.0),
    );
    let background = scalar_curve(
        correction.g2_b_zero.unwrap_or(1.0),
        correction.sigma_g2_b.unwrap_or(0.0),
    );
    let result = pulsed_correct(&joint, &background, &mix)?;
    print_zero_summary(&result);

    let report_path = out_path(out_dir, Path::new(&format!("{name}_report.txt")))?;
    io::write_correction_report(&report_path, &result)?;
    kv("output_report", report_path.display());

    let mut manifest = Manifest::new(&config.kind, name, config_path);
    manifest.push_mix(&mix);
    manifest.push("correction.g2_ab_zero", correction.g2_ab_zero);
    manifest.push("correction.g2_b_zero", correction.g2_b_zero.unwrap_or(1.0));
    manifest.push(
        "correction.sigma_g2_ab",
        correction.sigma_g2_ab.unwrap_or(0.0),
    );
    manifest.push(
        "correction.sigma_g2_b",
        correction.sigma_g2_b.unwrap_or(0.0),
    );
    manifest.push("output.report", report_path.display());
    let manifest_path = manifest.write(name, out_dir)?;
    kv("manifest", manifest_path.display());
    Ok(())
}

fn pulsed_simulation(
    config_path: &Path,
    config: &PipelineConfig,
    name: &str,
    seed_flag: Option<u64>,
    out_dir: &Path,
) -> CliResult<()> {
    let kind = &config.kind;
    let pulse = require_section(&config.pulse, "pulse", kind)?;
    let emitter_cfg = require_section(&config.emitter, "emitter", kind)?;
    let rebin_cfg = require_section(&config.rebin, "rebin", kind)?;
    let normalize_cfg = require_section(&config.normalize, "normalize", kind)?;
    let background_per_pulse = config.background.as_ref().map_or(0.0, |s| s.per_pulse);
    let mix = config.mix.build()?;
    let seed = seed_flag.or(config.seed).unwrap_or(1);
    let background_seed = seed.wrapping_add(1);

    let mut emitter = EmitterModel::pulsed(
        emitter_cfg.lifetime_ps,
        emitter_cfg.excitation_probability,
    )
    .with_detected_fraction(emitter_cfg.detected_fraction.unwrap_or(1.0));
    if let Some(rate) = emitter_cfg.shelving_rate_per_s {
        if rate > 0.0 {
            emitter = emitter.with_shelving(per_s_to_per_ps(rate));
        }
    }
    let train = PulseTrain::new(pulse.period_ps, pulse.count)?;

    // The joint run sees emitter plus background; the background-only run
    // keeps the same pulse train but never excites the emitter, standing in
    // for the background calibration taken with the emitter out of focus.
    let (joint_a, joint_b) = simulate_pulsed(&emitter, &train, background_per_pulse, seed)?;
    let background_emitter = EmitterModel::pulsed(emitter_cfg.lifetime_ps, 0.0);
    let (bg_a, bg_b) = simulate_pulsed(
        &background_emitter,
        &train,
        background_per_pulse,
        background_seed,
    )?;
    kv("seed", seed);
    kv("background_seed", background_seed);
    kv("events_joint_a", joint_a.len());
    kv("events_joint_b", joint_b.len());
    kv("events_background_a", bg_a.len());
    kv("events_background_b", bg_b.len());

    let joint_hist = rebin_to_periods(
        &joint_a,
        &joint_b,
        rebin_cfg.delta_t_ps,
        rebin_cfg.periods,
        PairMode::AllPairs,
    )?;
    let bg_hist = rebin_to_periods(
        &bg_a,
        &bg_b,
        rebin_cfg.delta_t_ps,
        rebin_cfg.periods,
        PairMode::AllPairs,
    )?;
    kv("pairs_joint", joint_hist.total_counts());
    kv("pairs_background", bg_hist.total_counts());

    let joint_curve = normalize(
        &joint_hist,
        normalize_cfg.tail_start_ps,
        normalize_cfg.tail_span_ps,
    )?;
    let bg_curve = normalize(
        &bg_hist,
        normalize_cfg.tail_start_ps,
        normalize_cfg.tail_span_ps,
    )?;
    let result = pulsed_correct(&joint_curve, &bg_curve, &mix)?;
    print_zero_summary(&result);

    let joint_path = out_path(out_dir, Path::new(&format!("{name}_joint_curve.csv")))?;
    io::write_curve_csv(&joint_path, &joint_curve)?;
    kv("output_joint_curve", joint_path.display());
    let bg_path = out_path(out_dir, Path::new(&format!("{name}_background_curve.csv")))?;
    io::write_curve_csv(&bg_path, &bg_curve)?;
    kv("output_background_curve", bg_path.display());
    let corrected_path = out_path(out_dir, Path::new(&format!("{name}_corrected.csv")))?;
    io::write_correction_csv(&corrected_path, &result)?;
    kv("output_corrected", corrected_path.display());
    let report_path = out_path(out_dir, Path::new(&format!("{name}_report.txt")))?;
    io::write_correction_report(&report_path, &result)?;
    kv("output_report", report_path.display());

    let mut manifest = Manifest::new(kind, name, config_path);
    manifest.push("seed.joint", seed);
    manifest.push("seed.background", background_seed);
    manifest.push("pulse.period_ps", pulse.period_ps);
    manifest.push("pulse.count", pulse.count);
    manifest.push("emitter.lifetime_ps", emitter_cfg.lifetime_ps);
    manifest.push(
        "emitter.excitation_probability",
        emitter_cfg.excitation_probability,
    );
    manifest.push(
        "emitter.detected_fraction",
        emitter_cfg.detected_fraction.unwrap_or(1.0),
    );
    manifest.push(
        "emitter.shelving_rate_per_s",
        emitter_cfg.shelving_rate_per_s.unwrap_or(0.0),
    );
    manifest.push("background.per_pulse", background_per_pulse);
    manifest.push_mix(&mix);
    manifest.push("correlator.mode", "all-pairs");
    manifest.push("rebin.delta_t_ps", rebin_cfg.delta_t_ps);
    manifest.push("rebin.periods", rebin_cfg.periods);
    manifest.push("normalize.tail_start_ps", normalize_cfg.tail_start_ps);
    manifest.push("normalize.tail_span_ps", normalize_cfg.tail_span_ps);
    manifest.push("output.joint_curve", joint_path.display());
    manifest.push("output.background_curve", bg_path.display());
    manifest.push("output.corrected", corrected_path.display());
    manifest.push("output.report", report_path.display());
    let manifest_path = manifest.write(name, out_dir)?;
    kv("manifest", manifest_path.display());
    Ok(())
}

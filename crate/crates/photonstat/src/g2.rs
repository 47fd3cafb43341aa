//! Background correction and model fitting for second-order correlations.
//!
//! A single emitter measured on top of uncorrelated background light shows
//! a washed-out correlation. For emitter intensity `a` and background
//! intensity `b`, the joint correlation of the summed field is
//!
//! ```text
//! g2_ab = (a^2 g2_a + b^2 g2_b + 2 a b g2_x) / (a + b)^2
//! ```
//!
//! with `g2_x` the emitter-background cross correlation, equal to one for
//! independent sources. This module inverts that mixture for `g2_a`, both
//! for continuous-wave curves (where the background is Poissonian,
//! `g2_b = 1`) and for pulsed per-period curves (where a separately
//! measured background curve supplies `g2_b` per period bin). The full
//! uncertainty budget follows by first-order Gaussian propagation through
//! the inversion, and antibunching parameters are extracted with a damped
//! least-squares fit.
//!
//! Corrected values are reported exactly as the algebra gives them;
//! statistically consistent but unphysical values such as small negative
//! zero-lag correlations are not clamped.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::correlator::CorrelationCurve;
use crate::error::{Error, Result};
use crate::fitting::{fit, FitModel, FitSettings};
use crate::rand_util::standard_normal;
use crate::synth::BackgroundMix;

/// Forward mixture: the joint correlation measured when an emitter with
/// correlation `g2_a` rides on background with correlation `g2_b`, at the
/// mix's intensity split and unit cross correlation.
pub fn forward_mix(g2_a: f64, g2_b: f64, mix: &BackgroundMix) -> f64 {
    let (a, b) = (mix.a(), mix.b());
    let s = a + b;
    (a * a * g2_a + b * b * g2_b + 2.0 * a * b) / (s * s)
}

/// Exact algebraic inversion of the mixture for one bin.
fn invert(g2_ab: f64, g2_b: f64, a: f64, b: f64) -> f64 {
    let s = a + b;
    (g2_ab * s * s - b * b * g2_b - 2.0 * a * b) / (a * a)
}

/// Inversion in the ratio parametrization `r = b / a`, which is what the
/// ratio uncertainty acts on.
fn invert_ratio(g2_ab: f64, g2_b: f64, r: f64) -> f64 {
    g2_ab * (1.0 + r) * (1.0 + r) - r * r * g2_b - 2.0 * r
}

/// Individual first-order contributions to the uncertainty of a corrected
/// value, and their quadrature sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBudget {
    /// From the intensity-ratio uncertainty `delta_ratio`.
    pub from_ratio: f64,
    /// From the emitter-intensity uncertainty `delta_a`.
    pub from_a: f64,
    /// From the background-intensity uncertainty `delta_b`.
    pub from_b: f64,
    pub total: f64,
}

fn budget_at(g2_ab: f64, g2_b: f64, mix: &BackgroundMix) -> ErrorBudget {
    let (a, b, r) = (mix.a(), mix.b(), mix.ratio());
    let s = a + b;
    // d(g2_a)/dr in the ratio form.
    let dg_dr = 2.0 * (1.0 + r) * g2_ab - 2.0 * r * g2_b - 2.0;
    // Partials in the intensity form.
    let n = g2_ab * s * s - b * b * g2_b - 2.0 * a * b;
    let dg_da = (2.0 * g2_ab * s - 2.0 * b) / (a * a) - 2.0 * n / (a * a * a);
    let dg_db = (2.0 * g2_ab * s - 2.0 * b * g2_b - 2.0 * a) / (a * a);
    let from_ratio = dg_dr.abs() * mix.delta_ratio();
    let from_a = dg_da.abs() * mix.delta_a();
    let from_b = dg_db.abs() * mix.delta_b();
    let total = (from_ratio * from_ratio + from_a * from_a + from_b * from_b).sqrt();
    ErrorBudget {
        from_ratio,
        from_a,
        from_b,
        total,
    }
}

/// Standard uncertainty of the corrected `g2_a` from the mix-parameter
/// uncertainties alone, for a Poissonian background (`g2_b = 1`).
///
/// The ratio term `|d g2_a / d r| delta_ratio` and the two intensity terms
/// `|d g2_a / d a| delta_a`, `|d g2_a / d b| delta_b` are summed in
/// quadrature. With `delta_a = delta_b = 0` this reduces exactly to the
/// ratio term. Counting uncertainty of the measured correlation values is
/// not included here; the correction functions add it per bin.
pub fn propagate_error(g2_ab: f64, mix: &BackgroundMix) -> f64 {
    budget_at(g2_ab, 1.0, mix).total
}

/// Full per-source budget behind [`propagate_error`].
pub fn error_budget(g2_ab: f64, mix: &BackgroundMix) -> ErrorBudget {
    budget_at(g2_ab, 1.0, mix)
}

/// Monte Carlo check of the propagated uncertainty: resamples the mix
/// parameters from independent Gaussians, pushes each sample through the
/// inversion, and returns the standard deviation of the corrected value.
/// To first order this agrees with [`propagate_error`]; the residual
/// difference measures the curvature of the inversion.
pub fn propagate_error_mc(g2_ab: f64, mix: &BackgroundMix, samples: u32, seed: u64) -> f64 {
    let (a, b, r) = (mix.a(), mix.b(), mix.ratio());
    let center_ratio = invert_ratio(g2_ab, 1.0, r);
    let center_ab = invert(g2_ab, 1.0, a, b);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let rs = r + mix.delta_ratio() * standard_normal(&mut rng);
        let as_ = a + mix.delta_a() * standard_normal(&mut rng);
        let bs = b + mix.delta_b() * standard_normal(&mut rng);
        let value = (invert_ratio(g2_ab, 1.0, rs) - center_ratio)
            + (invert(g2_ab, 1.0, as_, bs) - center_ab);
        sum += value;
        sum_sq += value * value;
    }
    let n = samples as f64;
    let mean = sum / n;
    ((sum_sq / n - mean * mean).max(0.0)).sqrt()
}

/// Result of unmixing emitter and background correlations.
///
/// All vectors run over the corrected bins; a single-value correction
/// produces length-one vectors. `zero_bin` indexes the zero-lag entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    pub mix: BackgroundMix,
    /// Lag bin centers, ps (a single zero for scalar corrections).
    pub lag_ps: Vec<f64>,
    /// Measured joint correlation per bin.
    pub g2_ab: Vec<f64>,
    /// Background correlation used per bin.
    pub g2_b: Vec<f64>,
    /// Corrected emitter correlation per bin.
    pub g2_a: Vec<f64>,
    /// Total standard uncertainty per bin: mix-parameter budget plus the
    /// counting errors of the measured curves, in quadrature.
    pub delta_g2_a: Vec<f64>,
    pub zero_bin: usize,
    /// Mix-parameter budget at the zero bin.
    pub zero_budget: ErrorBudget,
    /// Counting-error contribution at the zero bin.
    pub zero_delta_statistical: f64,
}

impl CorrectionResult {
    /// Corrected zero-lag value.
    pub fn zero_g2_a(&self) -> f64 {
        self.g2_a[self.zero_bin]
    }

    /// Total uncertainty of the zero-lag value.
    pub fn zero_delta(&self) -> f64 {
        self.delta_g2_a[self.zero_bin]
    }

    /// Flat key=value report of inputs, outputs, and the uncertainty
    /// budget, one entry per line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: f64| {
            out.push_str(&format!("{key}={value:.6}\n"));
        };
        push("a", self.mix.a());
        push("b", self.mix.b());
        push("ratio", self.mix.ratio());
        push("delta_a", self.mix.delta_a());
        push("delta_b", self.mix.delta_b());
        push("delta_ratio", self.mix.delta_ratio());
        push("bins", self.lag_ps.len() as f64);
        push("g2_ab_zero", self.g2_ab[self.zero_bin]);
        push("g2_b_zero", self.g2_b[self.zero_bin]);
        push("g2_a_zero", self.zero_g2_a());
        push("delta_g2_a_zero", self.zero_delta());
        push("delta_from_ratio", self.zero_budget.from_ratio);
        push("delta_from_a", self.zero_budget.from_a);
        push("delta_from_b", self.zero_budget.from_b);
        push("delta_statistical", self.zero_delta_statistical);
        out
    }
}

fn require_emitter_intensity(mix: &BackgroundMix) -> Result<()> {
    if mix.a() <= 0.0 {
        return Err(Error::invalid(
            "emitter intensity a must be positive to invert the mixture",
        ));
    }
    Ok(())
}

/// Corrects a single continuous-wave correlation value for Poissonian
/// background (`g2_b = 1`).
pub fn cw_correct(g2_ab: f64, mix: &BackgroundMix) -> Result<CorrectionResult> {
    require_emitter_intensity(mix)?;
    let g2_a = invert(g2_ab, 1.0, mix.a(), mix.b());
    let budget = budget_at(g2_ab, 1.0, mix);
    Ok(CorrectionResult {
        mix: *mix,
        lag_ps: vec![0.0],
        g2_ab: vec![g2_ab],
        g2_b: vec![1.0],
        g2_a: vec![g2_a],
        delta_g2_a: vec![budget.total],
        zero_bin: 0,
        zero_budget: budget,
        zero_delta_statistical: 0.0,
    })
}

/// Element-wise continuous-wave correction of a whole curve. Per-bin
/// uncertainties combine the mix budget with the curve's counting error
/// scaled through the inversion.
pub fn cw_correct_curve(curve: &CorrelationCurve, mix: &BackgroundMix) -> Result<CorrectionResult> {
    require_emitter_intensity(mix)?;
    let flat = vec![1.0; curve.len()];
    let sigma_b = vec![0.0; curve.len()];
    correct_bins(
        &curve.lag_ps,
        &curve.g2,
        &curve.sigma,
        &flat,
        &sigma_b,
        mix,
    )
}

/// Unmixes pulsed per-period curves: the joint curve measured on the
/// emitter and the background curve measured without it, both rebinned to
/// the same period grid and tail-normalized. The cross correlation is one
/// for every period bin, since emitter and background are independent and
/// each bin integrates a whole repetition period.
pub fn pulsed_correct(
    joint: &CorrelationCurve,
    background: &CorrelationCurve,
    mix: &BackgroundMix,
) -> Result<CorrectionResult> {
    require_emitter_intensity(mix)?;
    if joint.len() != background.len() {
        return Err(Error::GridMismatch(format!(
            "joint curve has {} bins, background {}",
            joint.len(),
            background.len()
        )));
    }
    for (i, (&lj, &lb)) in joint.lag_ps.iter().zip(&background.lag_ps).enumerate() {
        if (lj - lb).abs() > 1e-6 {
            return Err(Error::GridMismatch(format!(
                "bin {i} centers differ: {lj} ps vs {lb} ps"
            )));
        }
    }
    correct_bins(
        &joint.lag_ps,
        &joint.g2,
        &joint.sigma,
        &background.g2,
        &background.sigma,
        mix,
    )
}

fn correct_bins(
    lag_ps: &[f64],
    g2_ab: &[f64],
    sigma_ab: &[f64],
    g2_b: &[f64],
    sigma_b: &[f64],
    mix: &BackgroundMix,
) -> Result<CorrectionResult> {
    if lag_ps.is_empty() {
        return Err(Error::invalid("cannot correct an empty curve"));
    }
    let (a, b) = (mix.a(), mix.b());
    let s = a + b;
    // Sensitivities of the inversion to the measured curve values.
    let d_dab = (s * s) / (a * a);
    let d_db = (b * b) / (a * a);
    let mut g2_a = Vec::with_capacity(lag_ps.len());
    let mut delta = Vec::with_capacity(lag_ps.len());
    let mut zero_bin = 0;
    for (i, &lag) in lag_ps.iter().enumerate() {
        if lag.abs() < lag_ps[zero_bin].abs() {
            zero_bin = i;
        }
        g2_a.push(invert(g2_ab[i], g2_b[i], a, b));
        let budget = budget_at(g2_ab[i], g2_b[i], mix);
        let stat_ab = d_dab * sigma_ab[i];
        let stat_b = d_db * sigma_b[i];
        delta.push(
            (budget.total * budget.total + stat_ab * stat_ab + stat_b * stat_b).sqrt(),
        );
    }
    let zero_budget = budget_at(g2_ab[zero_bin], g2_b[zero_bin], mix);
    let stat_ab = d_dab * sigma_ab[zero_bin];
    let stat_b = d_db * sigma_b[zero_bin];
    let zero_delta_statistical = (stat_ab * stat_ab + stat_b * stat_b).sqrt();
    Ok(CorrectionResult {
        mix: *mix,
        lag_ps: lag_ps.to_vec(),
        g2_ab: g2_ab.to_vec(),
        g2_b: g2_b.to_vec(),
        g2_a,
        delta_g2_a: delta,
        zero_bin,
        zero_budget,
        zero_delta_statistical,
    })
}

/// Which level scheme the antibunching fit assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntibunchingModel {
    /// Pure antibunching recovery, one exponential.
    TwoLevel,
    /// Antibunching plus a bunching shoulder from a shelving state.
    ThreeLevel,
}

/// Fitted antibunching parameters.
///
/// The model is
///
/// ```text
/// g2(tau) = 1 - (1 - g0) * [(1 + beta) exp(-|tau|/tau1) - beta exp(-|tau|/tau2)]
/// ```
///
/// whose value at zero lag is `g0` for any bunching amplitude; with
/// `beta = 0` (two-level) it reduces to the plain exponential recovery
/// `1 - (1 - g0) exp(-|tau|/tau1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AntibunchingFit {
    pub model: AntibunchingModel,
    /// Zero-lag correlation, the model value at tau = 0.
    pub g0: f64,
    pub g0_err: f64,
    /// Antibunching recovery time, ps.
    pub tau1_ps: f64,
    pub tau1_err_ps: f64,
    /// Bunching amplitude; zero for the two-level model.
    pub beta: f64,
    pub beta_err: f64,
    /// Bunching decay time, ps; None for the two-level model.
    pub tau2_ps: Option<f64>,
    pub tau2_err_ps: Option<f64>,
    /// Parameter covariance, flattened, in the order g0, tau1[, beta, tau2].
    pub covariance: Vec<f64>,
    pub chi2_red: f64,
    pub iterations: usize,
}

impl AntibunchingFit {
    /// Model value at a given lag.
    pub fn value_at(&self, lag_ps: f64) -> f64 {
        let t = lag_ps.abs();
        let bunching = match self.tau2_ps {
            Some(tau2) => self.beta * libm::exp(-t / tau2),
            None => 0.0,
        };
        1.0 - (1.0 - self.g0) * ((1.0 + self.beta) * libm::exp(-t / self.tau1_ps) - bunching)
    }
}

struct AntibunchingShape {
    three_level: bool,
}

impl FitModel for AntibunchingShape {
    fn dim(&self) -> usize {
        if self.three_level {
            4
        } else {
            2
        }
    }

    fn value(&self, p: &[f64], x: f64) -> f64 {
        let t = x.abs();
        let e1 = libm::exp(-t / p[1]);
        let shape = if self.three_level {
            (1.0 + p[2]) * e1 - p[2] * libm::exp(-t / p[3])
        } else {
            e1
        };
        1.0 - (1.0 - p[0]) * shape
    }

    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
        let t = x.abs();
        let e1 = libm::exp(-t / p[1]);
        if self.three_level {
            let e2 = libm::exp(-t / p[3]);
            let shape = (1.0 + p[2]) * e1 - p[2] * e2;
            out[0] = shape;
            out[1] = -(1.0 - p[0]) * (1.0 + p[2]) * e1 * t / (p[1] * p[1]);
            out[2] = -(1.0 - p[0]) * (e1 - e2);
            out[3] = (1.0 - p[0]) * p[2] * e2 * t / (p[3] * p[3]);
        } else {
            out[0] = e1;
            out[1] = -(1.0 - p[0]) * e1 * t / (p[1] * p[1]);
        }
    }

    fn in_domain(&self, p: &[f64]) -> bool {
        p[1] > 0.0 && (!self.three_level || (p[2] >= 0.0 && p[3] > 0.0))
    }
}

fn initial_guess(curve: &CorrelationCurve, three_level: bool) -> Vec<f64> {
    let zero = curve.nearest_bin(0.0);
    let g0 = curve.g2[zero].min(0.95);
    // Recovery time from the lag where the curve first climbs halfway from
    // the dip back to the plateau.
    let half = 0.5 * (g0 + 1.0);
    let max_lag = curve
        .lag_ps
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut tau1 = max_lag / 10.0;
    let mut best = f64::INFINITY;
    for (i, &lag) in curve.lag_ps.iter().enumerate() {
        if curve.g2[i] >= half && lag.abs() > 0.0 && lag.abs() < best {
            best = lag.abs();
            tau1 = lag.abs();
        }
    }
    if !(tau1 > 0.0) {
        tau1 = 1.0;
    }
    if three_level {
        vec![g0, tau1, 0.1, 5.0 * tau1]
    } else {
        vec![g0, tau1]
    }
}

/// Fits the antibunching model to a normalized correlation curve by
/// weighted least squares, using the curve's per-bin counting errors
/// (zero-count bins get the error of a single count). `init`, when given,
/// holds starting parameters in the order `g0, tau1_ps[, beta, tau2_ps]`;
/// otherwise the start is estimated from the curve itself.
pub fn fit_antibunching(
    curve: &CorrelationCurve,
    model: AntibunchingModel,
    init: Option<&[f64]>,
) -> Result<AntibunchingFit> {
    let three_level = model == AntibunchingModel::ThreeLevel;
    let shape = AntibunchingShape { three_level };
    if curve.len() < 10 {
        return Err(Error::invalid(
            "antibunching fit needs at least 10 bins",
        ));
    }
    let start = match init {
        Some(p) => p.to_vec(),
        None => initial_guess(curve, three_level),
    };
    if start.len() != shape.dim() {
        return Err(Error::invalid(format!(
            "initial guess has {} parameters, model needs {}",
            start.len(),
            shape.dim()
        )));
    }
    let reach = 3.0 * start[1];
    let max_lag = curve.lag_ps.iter().fold(0.0f64, |m, &l| m.max(l));
    let min_lag = curve.lag_ps.iter().fold(0.0f64, |m, &l| m.min(l));
    if max_lag < reach || min_lag > -reach {
        return Err(Error::invalid(format!(
            "curve must span at least 3 recovery times ({:.0} ps) on both sides",
            reach
        )));
    }

    // Floor the weights so empty bins do not get infinite weight.
    let floor = if curve.normalization > 0.0 {
        1.0 / curve.normalization
    } else {
        1.0
    };
    let sigma: Vec<f64> = curve
        .sigma
        .iter()
        .map(|&s| if s > 0.0 { s } else { floor })
        .collect();

    let outcome = fit(
        &shape,
        &curve.lag_ps,
        &curve.g2,
        Some(&sigma),
        &start,
        &FitSettings::default(),
    )?;
    let p = &outcome.params;
    let e = &outcome.std_errors;
    Ok(AntibunchingFit {
        model,
        g0: p[0],
        g0_err: e[0],
        tau1_ps: p[1],
        tau1_err_ps: e[1],
        beta: if three_level { p[2] } else { 0.0 },
        beta_err: if three_level { e[2] } else { 0.0 },
        tau2_ps: if three_level { Some(p[3]) } else { None },
        tau2_err_ps: if three_level { Some(e[3]) } else { None },
        covariance: outcome.covariance.clone(),
        chi2_red: outcome.chi2_red(),
        iterations: outcome.iterations,
    })
}

/// Refits resampled copies of the curve (Gaussian noise at each bin's own
/// error) and replaces the parameter errors with the scatter of the
/// resampled parameters. Slower but free of the local-covariance
/// approximation.
pub fn fit_antibunching_bootstrap(
    curve: &CorrelationCurve,
    model: AntibunchingModel,
    init: Option<&[f64]>,
    resamples: u32,
    seed: u64,
) -> Result<AntibunchingFit> {
    if resamples < 2 {
        return Err(Error::invalid("need at least 2 resamples"));
    }
    let mut base = fit_antibunching(curve, model, init)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let start: Vec<f64> = match model {
        AntibunchingModel::TwoLevel => vec![base.g0, base.tau1_ps],
        AntibunchingModel::ThreeLevel => {
            vec![base.g0, base.tau1_ps, base.beta, base.tau2_ps.unwrap()]
        }
    };
    let dim = start.len();
    let mut sums = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut used = 0u32;
    for _ in 0..resamples {
        let mut noisy = curve.clone();
        for (g, s) in noisy.g2.iter_mut().zip(&curve.sigma) {
            *g += s * standard_normal(&mut rng);
        }
        // Occasional resamples land on pathological data; skip them.
        let Ok(refit) = fit_antibunching(&noisy, model, Some(&start)) else {
            continue;
        };
        let params = [
            refit.g0,
            refit.tau1_ps,
            refit.beta,
            refit.tau2_ps.unwrap_or(0.0),
        ];
        for d in 0..dim {
            sums[d] += params[d];
            sq[d] += params[d] * params[d];
        }
        used += 1;
    }
    if used < 2 {
        return Err(Error::FitDegenerate(
            "bootstrap resamples failed to converge".into(),
        ));
    }
    let n = used as f64;
    let std = |d: usize| ((sq[d] / n - (sums[d] / n) * (sums[d] / n)).max(0.0)).sqrt();
    base.g0_err = std(0);
    base.tau1_err_ps = std(1);
    if model == AntibunchingModel::ThreeLevel {
        base.beta_err = std(2);
        base.tau2_err_ps = Some(std(3));
    }
    Ok(base)
}

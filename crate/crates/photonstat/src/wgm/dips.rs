//! Lorentzian dip location and fitting on normalized transmission scans.
//!
//! Each resonance appears as a dip `c0 + c1 (l - l0) - depth * L(l)` with
//! `L` a unit-height Lorentzian of full width `FWHM`; the linear term
//! absorbs whatever local envelope slope the normalization left behind.
//! The loaded quality factor follows as `Q = l0 / FWHM`.

use crate::error::{Error, Result};
use crate::fitting::{fit, FitModel, FitSettings};
use crate::spectrum::TransmissionTrace;

/// Fitted Lorentzian dip parameters with their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFit {
    /// Dip center, nm.
    pub center_nm: f64,
    pub center_err_nm: f64,
    /// Full width at half maximum, nm.
    pub fwhm_nm: f64,
    pub fwhm_err_nm: f64,
    /// Dip depth relative to the local baseline.
    pub depth: f64,
    pub depth_err: f64,
    /// Baseline transmission at the dip center.
    pub baseline_offset: f64,
    pub baseline_offset_err: f64,
    /// Baseline slope, per nm.
    pub baseline_slope_per_nm: f64,
    pub baseline_slope_err_per_nm: f64,
    /// Loaded quality factor, `center / FWHM`.
    pub q: f64,
    pub q_err: f64,
    /// Set when the fitted width resolves fewer than 3 grid steps, where
    /// the width (and so Q) is dominated by the sampling, not the mode.
    pub low_confidence: bool,
    pub chi2_red: f64,
    pub iterations: usize,
}

impl ResonanceFit {
    /// Fitted model value at a wavelength.
    pub fn value_at(&self, wavelength_nm: f64) -> f64 {
        let u = wavelength_nm - self.center_nm;
        let h = self.fwhm_nm / 2.0;
        self.baseline_offset + self.baseline_slope_per_nm * u
            - self.depth * h * h / (u * u + h * h)
    }
}

/// Dip model in window-centered coordinates: parameters are
/// `[center, fwhm, depth, offset, slope]`.
struct DipShape {
    lo: f64,
    hi: f64,
}

impl FitModel for DipShape {
    fn dim(&self) -> usize {
        5
    }

    fn value(&self, p: &[f64], x: f64) -> f64 {
        let u = x - p[0];
        let h = p[1] / 2.0;
        p[3] + p[4] * u - p[2] * h * h / (u * u + h * h)
    }

    fn gradient(&self, p: &[f64], x: f64, out: &mut [f64]) {
        let u = x - p[0];
        let h = p[1] / 2.0;
        let denom = u * u + h * h;
        let lorentz = h * h / denom;
        out[0] = -p[4] - p[2] * 2.0 * u * h * h / (denom * denom);
        out[1] = -p[2] * h * u * u / (denom * denom);
        out[2] = -lorentz;
        out[3] = 1.0;
        out[4] = u;
    }

    fn in_domain(&self, p: &[f64]) -> bool {
        p[1] > 0.0 && p[2] > 0.0 && p[0] >= self.lo && p[0] <= self.hi
    }
}

fn window_indices(grid: &[f64], window: (f64, f64)) -> (usize, usize) {
    let lo = grid.partition_point(|&l| l < window.0);
    let hi = grid.partition_point(|&l| l <= window.1);
    (lo, hi)
}

fn initial_dip_guess(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let edge = (n / 10).max(1);
    let left: f64 = y[..edge].iter().sum::<f64>() / edge as f64;
    let right: f64 = y[n - edge..].iter().sum::<f64>() / edge as f64;
    let x_left = x[..edge].iter().sum::<f64>() / edge as f64;
    let x_right = x[n - edge..].iter().sum::<f64>() / edge as f64;
    let slope = if x_right > x_left {
        (right - left) / (x_right - x_left)
    } else {
        0.0
    };
    let (min_idx, &min_val) = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let center = x[min_idx];
    let baseline_at_min = left + slope * (center - x_left);
    let depth = (baseline_at_min - min_val).max(1e-3);
    // Width from the half-depth crossings around the minimum.
    let half = baseline_at_min - depth / 2.0;
    let mut l = min_idx;
    while l > 0 && y[l] < half {
        l -= 1;
    }
    let mut r = min_idx;
    while r + 1 < n && y[r] < half {
        r += 1;
    }
    let mut fwhm = x[r] - x[l];
    if !(fwhm > 0.0) {
        fwhm = (x[n - 1] - x[0]) / 10.0;
    }
    vec![center, fwhm, depth, baseline_at_min, slope]
}

/// Fits one Lorentzian dip with a linear baseline inside a wavelength
/// window. `init`, when given, supplies starting parameters as
/// `[center_nm, fwhm_nm, depth, offset, slope_per_nm]`; otherwise they are
/// estimated from the windowed data. The window must hold at least 15
/// samples and one dominant dip.
pub fn fit_dip(
    trace: &TransmissionTrace,
    window: (f64, f64),
    init: Option<&[f64]>,
) -> Result<ResonanceFit> {
    if !(window.0 < window.1) {
        return Err(Error::invalid("fit window must have positive width"));
    }
    let (lo, hi) = window_indices(&trace.wavelength_nm, window);
    if hi - lo < 15 {
        return Err(Error::invalid(format!(
            "fit window holds {} samples, need at least 15",
            hi - lo
        )));
    }
    let mid = 0.5 * (window.0 + window.1);
    let x: Vec<f64> = trace.wavelength_nm[lo..hi]
        .iter()
        .map(|&l| l - mid)
        .collect();
    let y = &trace.transmission[lo..hi];
    let mut start = match init {
        Some(p) => {
            if p.len() != 5 {
                return Err(Error::invalid(
                    "initial guess needs 5 entries: center, fwhm, depth, offset, slope",
                ));
            }
            p.to_vec()
        }
        None => initial_dip_guess(&x, y),
    };
    if init.is_some() {
        start[0] -= mid;
    }

    let shape = DipShape {
        lo: window.0 - mid,
        hi: window.1 - mid,
    };
    let outcome = fit(&shape, &x, y, None, &start, &FitSettings::default())?;
    let p = &outcome.params;
    let e = &outcome.std_errors;

    let center = p[0] + mid;
    let fwhm = p[1];
    let q = center / fwhm;
    // Q error from the (center, fwhm) covariance block.
    let dq_dc = 1.0 / fwhm;
    let dq_df = -center / (fwhm * fwhm);
    let v00 = outcome.covariance[0];
    let v11 = outcome.covariance[6];
    let v01 = outcome.covariance[1];
    let q_var = dq_dc * dq_dc * v00 + dq_df * dq_df * v11 + 2.0 * dq_dc * dq_df * v01;
    let q_err = q_var.max(0.0).sqrt();

    let mut step = f64::INFINITY;
    for pair in trace.wavelength_nm[lo..hi].windows(2) {
        step = step.min(pair[1] - pair[0]);
    }
    Ok(ResonanceFit {
        center_nm: center,
        center_err_nm: e[0],
        fwhm_nm: fwhm,
        fwhm_err_nm: e[1],
        depth: p[2],
        depth_err: e[2],
        baseline_offset: p[3],
        baseline_offset_err: e[3],
        baseline_slope_per_nm: p[4],
        baseline_slope_err_per_nm: e[4],
        q,
        q_err,
        low_confidence: fwhm < 3.0 * step,
        chi2_red: outcome.chi2_red(),
        iterations: outcome.iterations,
    })
}

/// One candidate dip found by [`find_dips`]: the wavelength of its local
/// minimum and a fit window around it.
#[derive(Debug, Clone, PartialEq)]
pub struct DipCandidate {
    /// Wavelength of the local transmission minimum, nm.
    pub center_nm: f64,
    /// Depth of the minimum below the unit baseline.
    pub depth: f64,
    /// Suggested fit window, five estimated linewidths to each side.
    pub window_nm: (f64, f64),
    /// Set when several minima closer than one linewidth were merged into
    /// this window; the window then needs a multi-dip treatment rather
    /// than a single Lorentzian.
    pub merged: bool,
}

/// Scans a normalized trace for transmission minima deeper than
/// `prominence` below the unit baseline and wraps each in a window of
/// five estimated linewidths per side, clamped to the scan. Minima closer
/// together than one linewidth are merged into a single flagged window.
/// Returns candidates sorted by wavelength; an empty list is valid.
pub fn find_dips(trace: &TransmissionTrace, prominence: f64) -> Vec<DipCandidate> {
    let grid = &trace.wavelength_nm;
    let t = &trace.transmission;
    let n = t.len();
    let threshold = 1.0 - prominence;
    let mut found: Vec<(f64, f64, f64)> = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if t[i] < threshold && t[i - 1] >= t[i] && t[i] < t[i + 1] {
            let depth = 1.0 - t[i];
            // Half-recovery crossings give the linewidth estimate.
            let half = 1.0 - depth / 2.0;
            let mut l = i;
            while l > 0 && t[l] < half {
                l -= 1;
            }
            let mut r = i;
            while r + 1 < n && t[r] < half {
                r += 1;
            }
            let mut width = grid[r] - grid[l];
            if !(width > 0.0) {
                width = (grid[n - 1] - grid[0]) / n as f64 * 3.0;
            }
            found.push((grid[i], depth, width));
        }
    }

    let mut out: Vec<DipCandidate> = Vec::new();
    let mut last_center = f64::NEG_INFINITY;
    let mut last_width = 0.0f64;
    for (center, depth, width) in found {
        let window = (
            (center - 5.0 * width).max(grid[0]),
            (center + 5.0 * width).min(grid[n - 1]),
        );
        match out.last_mut() {
            Some(previous) if center - last_center < width.max(last_width) => {
                // Unresolved neighbours: widen the previous window instead
                // of reporting a second candidate.
                previous.window_nm.1 = window.1.max(previous.window_nm.1);
                previous.merged = true;
                if depth > previous.depth {
                    previous.center_nm = center;
                    previous.depth = depth;
                }
            }
            _ => out.push(DipCandidate {
                center_nm: center,
                depth,
                window_nm: window,
                merged: false,
            }),
        }
        last_center = center;
        last_width = width;
    }
    out
}

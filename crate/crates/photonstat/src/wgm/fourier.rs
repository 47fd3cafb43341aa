//! Segmented Fourier analysis of long resonator scans.
//!
//! A broadband transmission or emission scan of a multimode resonator is
//! periodically modulated with the local free spectral range, which itself
//! drifts with wavelength. Splitting the scan into short segments and
//! Fourier transforming each one turns that chirped modulation into a
//! band at `1/FSR` per segment. Assembling the per-segment magnitudes over
//! segment center yields a map of the mode structure, and the detected
//! band positions trace out the dispersion of the spacing.
//!
//! Each segment is linearly detrended and Hann windowed before the
//! transform to keep the broad envelope from leaking into the low
//! frequencies, and its magnitudes are normalized to peak one so segments
//! with different brightness can share one color scale.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spectrum::Spectrum;

/// Peaks must clear five times the median segment magnitude and this
/// fraction of the strongest bin before they count as a band; window
/// sidelobes of a strong band sit near 2 to 3 percent.
const PEAK_FLOOR: f64 = 0.05;
const PEAK_OVER_MEDIAN: f64 = 5.0;
/// Fraction of segments that must agree on a band before it becomes a
/// track.
const TRACK_SUPPORT: f64 = 0.6;
/// Lowest frequency bin searched for bands. The Hann main lobe spans two
/// bins and detrending leaves residual envelope curvature just above DC,
/// so anything below three bins is indistinguishable from leakage.
const GUARD_BINS: usize = 3;

/// One detected modulation band followed across segments.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTrack {
    /// Harmonic order: 1 is the base band at `1/FSR`.
    pub order: u32,
    /// Segment centers where the band was detected, nm.
    pub segment_center_nm: Vec<f64>,
    /// Band frequency per detected segment, 1/nm.
    pub frequency_inv_nm: Vec<f64>,
    /// Coefficient `A` of the fitted dispersion `f(lambda) = A / lambda^2`,
    /// in nm. For the base band `A = lambda^2 / FSR(lambda)`.
    pub coefficient_nm: f64,
}

impl BandTrack {
    /// Fitted band frequency at a wavelength, 1/nm.
    pub fn frequency_at(&self, wavelength_nm: f64) -> f64 {
        self.coefficient_nm / (wavelength_nm * wavelength_nm)
    }
}

/// Normalized segmented Fourier magnitudes with the detected band tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeStructureMap {
    /// Center wavelength of each segment, nm.
    pub segment_center_nm: Vec<f64>,
    /// Fourier frequency axis shared by all segments, 1/nm.
    pub frequency_inv_nm: Vec<f64>,
    /// Magnitudes per segment, each normalized to peak one;
    /// `amplitude[segment][frequency bin]`.
    pub amplitude: Vec<Vec<f64>>,
    /// Detected bands, sorted by harmonic order; empty when no stable
    /// modulation was found.
    pub tracks: Vec<BandTrack>,
}

impl ModeStructureMap {
    /// Width of one frequency bin, 1/nm.
    pub fn frequency_step_inv_nm(&self) -> f64 {
        self.frequency_inv_nm.get(1).copied().unwrap_or(0.0)
    }

    /// The track at `1/FSR`, when one was detected.
    pub fn base_track(&self) -> Option<&BandTrack> {
        self.tracks.iter().find(|t| t.order == 1)
    }
}

fn is_uniform(grid: &[f64]) -> bool {
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    grid.windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step)
}

/// Linear interpolation of the spectrum onto a uniform grid with the same
/// span and sample count.
fn resample_uniform(spectrum: &Spectrum) -> (Vec<f64>, Vec<f64>) {
    let grid = &spectrum.wavelength_nm;
    let n = grid.len();
    let first = grid[0];
    let step = (grid[n - 1] - first) / (n - 1) as f64;
    let mut out_grid = Vec::with_capacity(n);
    let mut out_values = Vec::with_capacity(n);
    let mut j = 0usize;
    for i in 0..n {
        let target = first + step * i as f64;
        while j + 2 < n && grid[j + 1] <= target {
            j += 1;
        }
        let t = (target - grid[j]) / (grid[j + 1] - grid[j]);
        let t = t.clamp(0.0, 1.0);
        out_grid.push(target);
        out_values.push(spectrum.intensity[j] * (1.0 - t) + spectrum.intensity[j + 1] * t);
    }
    (out_grid, out_values)
}

fn detrend(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (k, &v) in values.iter().enumerate() {
        let dx = k as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    for (k, v) in values.iter_mut().enumerate() {
        *v -= mean_y + slope * (k as f64 - mean_x);
    }
}

struct SegmentPeaks {
    center_nm: f64,
    /// Refined peak frequencies, 1/nm, ascending.
    peaks: Vec<f64>,
    magnitude: Vec<f64>,
}

fn analyze_segment(
    values: &[f64],
    center_nm: f64,
    freq_step: f64,
    fft: &dyn rustfft::Fft<f64>,
) -> SegmentPeaks {
    let n = values.len();
    let mut work = values.to_vec();
    detrend(&mut work);
    let mut buffer: Vec<Complex<f64>> = work
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let hann = 0.5
                * (1.0
                    - libm::cos(2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64));
            Complex::new(v * hann, 0.0)
        })
        .collect();
    fft.process(&mut buffer);
    let half = n / 2 + 1;
    let mut magnitude: Vec<f64> = buffer[..half].iter().map(|c| c.norm()).collect();
    let peak = magnitude.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        for v in &mut magnitude {
            *v /= peak;
        }
    }

    // Noise floor from the median of the searched bins.
    let mut sorted: Vec<f64> = magnitude[GUARD_BINS..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let threshold = (PEAK_OVER_MEDIAN * median).max(PEAK_FLOOR);

    let mut peaks = Vec::new();
    for k in GUARD_BINS..half - 1 {
        if magnitude[k] > threshold
            && magnitude[k] >= magnitude[k - 1]
            && magnitude[k] > magnitude[k + 1]
        {
            // Parabolic vertex through the three bins around the peak.
            let alpha = magnitude[k - 1];
            let beta = magnitude[k];
            let gamma = magnitude[k + 1];
            let denom = alpha - 2.0 * beta + gamma;
            let shift = if denom.abs() > 0.0 {
                (0.5 * (alpha - gamma) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            peaks.push((k as f64 + shift) * freq_step);
        }
    }
    SegmentPeaks {
        center_nm,
        peaks,
        magnitude,
    }
}

/// Assigns per-segment peaks to integer-harmonic tracks. The quantity
/// `f * lambda^2` is constant under the resonator dispersion, so the base
/// band is found by consensus: the median of that invariant over each
/// segment's lowest peak, keeping only segments with a peak near the
/// implied frequency. Harmonics then attach to integer multiples of each
/// segment's own base.
fn assemble_tracks(segments: &[SegmentPeaks], freq_step: f64) -> Vec<BandTrack> {
    let mut scaled: Vec<f64> = segments
        .iter()
        .filter_map(|s| s.peaks.first().map(|&f| f * s.center_nm * s.center_nm))
        .collect();
    if scaled.is_empty() {
        return Vec::new();
    }
    scaled.sort_by(f64::total_cmp);
    let consensus = scaled[scaled.len() / 2];

    // Per supporting segment: center, base frequency, all peaks.
    let mut supporting: Vec<(f64, f64, &[f64])> = Vec::new();
    for segment in segments {
        let expected = consensus / (segment.center_nm * segment.center_nm);
        let tolerance = freq_step.max(0.15 * expected);
        let base = segment
            .peaks
            .iter()
            .copied()
            .min_by(|a, b| (a - expected).abs().total_cmp(&(b - expected).abs()));
        if let Some(base) = base.filter(|f| (f - expected).abs() <= tolerance) {
            supporting.push((segment.center_nm, base, &segment.peaks));
        }
    }
    if (supporting.len() as f64) < TRACK_SUPPORT * segments.len() as f64 {
        return Vec::new();
    }

    let mut tracks: Vec<BandTrack> = Vec::new();
    let mut order = 1u32;
    loop {
        let mut centers = Vec::new();
        let mut freqs = Vec::new();
        let mut any_higher = false;
        for &(center, base, peaks) in &supporting {
            let target = order as f64 * base;
            for &f in peaks {
                if (f - target).abs() <= freq_step {
                    centers.push(center);
                    freqs.push(f);
                    break;
                }
            }
            if peaks.iter().any(|&f| f > target + freq_step) {
                any_higher = true;
            }
        }
        if centers.len() as f64 >= TRACK_SUPPORT * supporting.len() as f64 {
            // Least-squares coefficient of f = A / lambda^2.
            let num: f64 = centers
                .iter()
                .zip(&freqs)
                .map(|(&l, &f)| f / (l * l))
                .sum();
            let den: f64 = centers.iter().map(|&l| 1.0 / (l * l * l * l)).sum();
            tracks.push(BandTrack {
                order,
                segment_center_nm: centers,
                frequency_inv_nm: freqs,
                coefficient_nm: num / den,
            });
        }
        if !any_higher || order > 16 {
            break;
        }
        order += 1;
    }
    tracks
}

/// Splits a spectrum into fixed-width segments, Fourier transforms each
/// one (after linear detrending and Hann windowing), normalizes every
/// segment's magnitudes to peak one, and follows the detected modulation
/// bands across segments. `overlap_fraction` slides consecutive segments
/// closer together; zero keeps them disjoint. A non-uniform wavelength
/// grid is resampled internally by linear interpolation. Segments must
/// span at least 20 grid steps and fit inside the spectrum.
pub fn segmented_fourier(
    spectrum: &Spectrum,
    segment_width_nm: f64,
    overlap_fraction: f64,
) -> Result<ModeStructureMap> {
    if !(segment_width_nm > 0.0) {
        return Err(Error::invalid("segment width must be positive"));
    }
    if !(0.0..=0.95).contains(&overlap_fraction) {
        return Err(Error::invalid("overlap fraction must be in [0, 0.95]"));
    }
    let resampled;
    let (grid, values): (&[f64], &[f64]) = if is_uniform(&spectrum.wavelength_nm) {
        (&spectrum.wavelength_nm, &spectrum.intensity)
    } else {
        resampled = resample_uniform(spectrum);
        (&resampled.0, &resampled.1)
    };
    let n = grid.len();
    let step = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let segment_len = (segment_width_nm / step).round() as usize;
    if segment_len < 20 {
        return Err(Error::invalid(format!(
            "segment of {segment_width_nm} nm spans only {segment_len} grid steps, need 20"
        )));
    }
    if segment_len > n {
        return Err(Error::invalid(format!(
            "segment of {segment_width_nm} nm is wider than the {:.3} nm spectrum",
            grid[n - 1] - grid[0]
        )));
    }
    let hop = ((segment_len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    let starts: Vec<usize> = (0..)
        .map(|i| i * hop)
        .take_while(|&s| s + segment_len <= n)
        .collect();

    let freq_step = 1.0 / (segment_len as f64 * step);
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let segments: Vec<SegmentPeaks> = starts
        .par_iter()
        .map(|&s| {
            let center = grid[s] + step * (segment_len - 1) as f64 / 2.0;
            analyze_segment(&values[s..s + segment_len], center, freq_step, fft.as_ref())
        })
        .collect();

    let tracks = assemble_tracks(&segments, freq_step);
    let half = segment_len / 2 + 1;
    Ok(ModeStructureMap {
        segment_center_nm: segments.iter().map(|s| s.center_nm).collect(),
        frequency_inv_nm: (0..half).map(|k| k as f64 * freq_step).collect(),
        amplitude: segments.into_iter().map(|s| s.magnitude).collect(),
        tracks,
    })
}

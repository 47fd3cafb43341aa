//! Synthetic resonator spectra: transmission traces with Lorentzian dips and
//! broadband spectra carrying a periodic mode modulation.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rand_util::standard_normal;
use crate::spectrum::{validate_grid, Spectrum, TransmissionTrace};

/// One resonance dip in a transmission trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    /// Center wavelength, nm.
    pub center_nm: f64,
    /// Quality factor; the full width at half maximum is `center_nm / q`.
    pub q: f64,
    /// Fractional dip depth at resonance, in (0, 1].
    pub depth: f64,
}

impl Resonance {
    pub fn new(center_nm: f64, q: f64, depth: f64) -> Self {
        Self { center_nm, q, depth }
    }

    /// Full width at half maximum, nm.
    pub fn fwhm_nm(&self) -> f64 {
        self.center_nm / self.q
    }
}

/// Index pairs of resonances whose centers lie closer than three times the
/// wider FWHM. Such dips distort each other's apparent depth and width; the
/// synthesizer still accepts them, so callers that care should check here.
pub fn resonance_overlaps(resonances: &[Resonance]) -> Vec<(usize, usize)> {
    let mut overlaps = Vec::new();
    for i in 0..resonances.len() {
        for j in (i + 1)..resonances.len() {
            let gap = (resonances[i].center_nm - resonances[j].center_nm).abs();
            let fwhm = resonances[i].fwhm_nm().max(resonances[j].fwhm_nm());
            if gap < 3.0 * fwhm {
                overlaps.push((i, j));
            }
        }
    }
    overlaps
}

/// Synthesizes a fiber-transmission trace: a linear baseline about the grid
/// midpoint times a product of Lorentzian dips, plus Gaussian noise.
///
/// The model for each dip is `1 - depth * (G/2)^2 / ((l - l0)^2 + (G/2)^2)`
/// with `G = l0 / q`, so a critically deep dip (depth 1) drops to zero
/// exactly on resonance.
pub fn synth_transmission(
    resonances: &[Resonance],
    baseline_slope_per_nm: f64,
    noise_rms: f64,
    grid: &[f64],
    seed: u64,
) -> Result<TransmissionTrace> {
    validate_grid(grid)?;
    for (k, r) in resonances.iter().enumerate() {
        if !(r.q > 0.0) || !r.q.is_finite() {
            return Err(Error::invalid(format!("resonance {k}: q must be positive")));
        }
        if !(r.depth > 0.0 && r.depth <= 1.0) {
            return Err(Error::invalid(format!(
                "resonance {k}: depth must be in (0, 1]"
            )));
        }
        if !(r.center_nm > 0.0) || !r.center_nm.is_finite() {
            return Err(Error::invalid(format!(
                "resonance {k}: center_nm must be positive"
            )));
        }
    }
    if !(noise_rms >= 0.0) {
        return Err(Error::invalid("noise_rms must be >= 0"));
    }
    if !baseline_slope_per_nm.is_finite() {
        return Err(Error::invalid("baseline_slope_per_nm must be finite"));
    }

    let mid = 0.5 * (grid[0] + grid[grid.len() - 1]);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let transmission = grid
        .iter()
        .map(|&lambda| {
            let mut value = 1.0 + baseline_slope_per_nm * (lambda - mid);
            for r in resonances {
                let half_width = 0.5 * r.fwhm_nm();
                let d = lambda - r.center_nm;
                value *= 1.0 - r.depth * half_width * half_width
                    / (d * d + half_width * half_width);
            }
            if noise_rms > 0.0 {
                value += noise_rms * standard_normal(&mut rng);
            }
            value
        })
        .collect();
    TransmissionTrace::new(grid.to_vec(), transmission)
}

/// Dispersion law for the periodic mode modulation: the free spectral range
/// grows quadratically with wavelength, `FSR(l) = FSR_ref * (l / l_ref)^2`,
/// as it does for a fixed-radius resonator with wavelength-independent index.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationLaw {
    /// Anchor wavelength, nm.
    pub reference_wavelength_nm: f64,
    /// Free spectral range at the anchor wavelength, nm.
    pub fsr_at_reference_nm: f64,
    /// Extra cosine terms at integer multiples of the base phase:
    /// (order, contrast). The fundamental is passed separately.
    pub harmonics: Vec<(u32, f64)>,
}

impl ModulationLaw {
    pub fn new(reference_wavelength_nm: f64, fsr_at_reference_nm: f64) -> Self {
        Self {
            reference_wavelength_nm,
            fsr_at_reference_nm,
            harmonics: Vec::new(),
        }
    }

    pub fn with_harmonic(mut self, order: u32, contrast: f64) -> Self {
        self.harmonics.push((order, contrast));
        self
    }

    /// Free spectral range at a given wavelength, nm.
    pub fn fsr_at(&self, wavelength_nm: f64) -> f64 {
        let ratio = wavelength_nm / self.reference_wavelength_nm;
        self.fsr_at_reference_nm * ratio * ratio
    }

    /// Accumulated mode phase. Integrating `d(phase)/dl = 1/FSR(l)` from the
    /// reference wavelength gives
    /// `phase(l) = (l_ref / FSR_ref) * (l - l_ref) / l`,
    /// which advances by one per local FSR.
    pub fn phase_at(&self, wavelength_nm: f64) -> f64 {
        (self.reference_wavelength_nm / self.fsr_at_reference_nm)
            * (wavelength_nm - self.reference_wavelength_nm)
            / wavelength_nm
    }

    fn validate(&self) -> Result<()> {
        if !(self.reference_wavelength_nm > 0.0) || !self.reference_wavelength_nm.is_finite() {
            return Err(Error::invalid("reference_wavelength_nm must be positive"));
        }
        if !(self.fsr_at_reference_nm > 0.0) || !self.fsr_at_reference_nm.is_finite() {
            return Err(Error::invalid("fsr_at_reference_nm must be positive"));
        }
        for &(order, contrast) in &self.harmonics {
            if order < 2 {
                return Err(Error::invalid("harmonic orders start at 2"));
            }
            if !(0.0..=1.0).contains(&contrast) {
                return Err(Error::invalid("harmonic contrast must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Synthesizes a broadband spectrum whose envelope is multiplied by
/// `1 + contrast * cos(2 pi phase) + sum_k c_k * cos(2 pi k phase)`.
///
/// The phase advances by one per free spectral range under the given law, so
/// a segmented Fourier transform of the result shows a band at `1/FSR` (and
/// at integer multiples for any configured harmonics).
pub fn synth_modulated_spectrum(
    envelope: impl Fn(f64) -> f64,
    law: &ModulationLaw,
    contrast: f64,
    grid: &[f64],
) -> Result<Spectrum> {
    validate_grid(grid)?;
    law.validate()?;
    if !(0.0..=1.0).contains(&contrast) {
        return Err(Error::invalid("contrast must be in [0, 1]"));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let intensity = grid
        .iter()
        .map(|&lambda| {
            let phase = law.phase_at(lambda);
            let mut modulation = 1.0 + contrast * libm::cos(two_pi * phase);
            for &(order, c) in &law.harmonics {
                modulation += c * libm::cos(two_pi * order as f64 * phase);
            }
            envelope(lambda) * modulation
        })
        .collect();
    Spectrum::new(grid.to_vec(), intensity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn bare_trace_is_flat_unity() {
        let grid = linspace(760.0, 780.0, 501);
        let trace = synth_transmission(&[], 0.0, 0.0, &grid, 1).unwrap();
        for &t in &trace.transmission {
            assert_abs_diff_eq!(t, 1.0);
        }
    }

    #[test]
    fn single_dip_has_expected_minimum_and_width() {
        // Q = 1.2e4 at 770 nm gives FWHM = 770 / 12000 = 64.2 pm.
        let grid = linspace(769.5, 770.5, 10_001);
        let r = Resonance::new(770.0, 1.2e4, 0.8);
        let trace = synth_transmission(&[r], 0.0, 0.0, &grid, 1).unwrap();
        let (min_idx, &min_val) = trace
            .transmission
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_abs_diff_eq!(trace.wavelength_nm[min_idx], 770.0, epsilon = 1e-4);
        assert_abs_diff_eq!(min_val, 0.2, epsilon = 1e-9);

        // Width between half-depth crossings (value 0.6).
        let half = 0.6;
        let below: Vec<usize> = trace
            .transmission
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < half)
            .map(|(i, _)| i)
            .collect();
        let fwhm = trace.wavelength_nm[*below.last().unwrap()]
            - trace.wavelength_nm[below[0]];
        assert_relative_eq!(fwhm, 770.0 / 1.2e4, max_relative = 0.01);
    }

    #[test]
    fn overlap_detection_flags_close_dips_only() {
        let far = [
            Resonance::new(760.0, 1e4, 0.5),
            Resonance::new(766.5, 1e4, 0.5),
        ];
        assert!(resonance_overlaps(&far).is_empty());
        let close = [
            Resonance::new(770.0, 1e4, 0.5),
            Resonance::new(770.1, 1e4, 0.5),
        ];
        assert_eq!(resonance_overlaps(&close), vec![(0, 1)]);
    }

    #[test]
    fn noise_rms_matches_request() {
        let grid = linspace(700.0, 800.0, 20_001);
        let trace = synth_transmission(&[], 0.0, 0.01, &grid, 9).unwrap();
        let mean: f64 =
            trace.transmission.iter().sum::<f64>() / trace.transmission.len() as f64;
        let var: f64 = trace
            .transmission
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<f64>()
            / trace.transmission.len() as f64;
        assert_relative_eq!(var.sqrt(), 0.01, max_relative = 0.05);
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn zero_contrast_returns_envelope_exactly() {
        let grid = linspace(600.0, 800.0, 2001);
        let law = ModulationLaw::new(770.0, 6.5);
        let spectrum =
            synth_modulated_spectrum(|l| 1.0 + 0.001 * (l - 700.0), &law, 0.0, &grid).unwrap();
        for (i, &l) in grid.iter().enumerate() {
            assert_abs_diff_eq!(spectrum.intensity[i], 1.0 + 0.001 * (l - 700.0));
        }
    }

    #[test]
    fn phase_advances_by_one_per_local_fsr() {
        let law = ModulationLaw::new(770.0, 6.5);
        assert_abs_diff_eq!(law.phase_at(770.0), 0.0);
        assert_abs_diff_eq!(law.fsr_at(770.0), 6.5);
        // Finite-difference phase slope at 700 nm against 1 / FSR(700).
        let h = 1e-4;
        let slope = (law.phase_at(700.0 + h) - law.phase_at(700.0 - h)) / (2.0 * h);
        assert_relative_eq!(slope, 1.0 / law.fsr_at(700.0), max_relative = 1e-6);
    }

    #[test]
    fn modulation_peaks_lie_one_fsr_apart_near_reference() {
        let grid = linspace(755.0, 785.0, 30_001);
        let law = ModulationLaw::new(770.0, 6.5);
        let spectrum = synth_modulated_spectrum(|_| 1.0, &law, 0.3, &grid).unwrap();
        // Local maxima of the modulation.
        let v = spectrum.intensity;
        let peaks: Vec<f64> = (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1])
            .map(|i| grid[i])
            .collect();
        let near: Vec<f64> = peaks
            .iter()
            .copied()
            .filter(|&l| (l - 770.0).abs() < 10.0)
            .collect();
        assert!(near.len() >= 2);
        for w in near.windows(2) {
            assert_relative_eq!(w[1] - w[0], 6.5, max_relative = 0.02);
        }
    }
}

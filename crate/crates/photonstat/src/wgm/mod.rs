//! Whispering-gallery resonator spectroscopy.
//!
//! A tapered fiber coupled to a microresonator transmits a broadband scan
//! with Lorentzian dips at the resonance wavelengths. This module covers
//! the standard analysis chain: dividing out the taper's own power
//! envelope with an uncoupled reference scan, locating and fitting the
//! dips for quality factors, predicting the free spectral range from the
//! resonator geometry, and mapping the mode structure of long scans with
//! segmented Fourier transforms.

mod dips;
mod fourier;

pub use dips::{find_dips, fit_dip, DipCandidate, ResonanceFit};
pub use fourier::{segmented_fourier, BandTrack, ModeStructureMap};

use crate::error::{Error, Result};
use crate::spectrum::TransmissionTrace;

/// Disc resonator geometry: the only inputs the geometric free-spectral-range
/// estimate needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorGeometry {
    diameter_um: f64,
    effective_index: f64,
}

impl ResonatorGeometry {
    pub fn new(diameter_um: f64, effective_index: f64) -> Result<Self> {
        if !(diameter_um > 0.0) || !diameter_um.is_finite() {
            return Err(Error::invalid("resonator diameter must be positive"));
        }
        if !(effective_index >= 1.0) || !effective_index.is_finite() {
            return Err(Error::invalid("effective index must be at least 1"));
        }
        Ok(Self {
            diameter_um,
            effective_index,
        })
    }

    pub fn diameter_um(&self) -> f64 {
        self.diameter_um
    }

    pub fn effective_index(&self) -> f64 {
        self.effective_index
    }
}

/// Free spectral range of a disc resonator from its circumference alone:
/// `FSR = lambda^2 / (n pi D)`, in nm. Adjacent azimuthal modes differ by
/// one wavelength of optical path around the disc, which this spacing
/// expresses to first order in `FSR / lambda`.
pub fn fsr_geometric(geometry: &ResonatorGeometry, wavelength_nm: f64) -> f64 {
    let diameter_nm = geometry.diameter_um * 1e3;
    wavelength_nm * wavelength_nm
        / (geometry.effective_index * std::f64::consts::PI * diameter_nm)
}

fn grids_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(&x, &y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0))
}

/// Divides a coupled transmission scan by an uncoupled reference scan taken
/// over the same grid, cancelling the taper's slowly varying power envelope
/// so the resonance dips sit on a flat unit baseline.
pub fn normalize_transmission(
    coupled: &TransmissionTrace,
    reference: &TransmissionTrace,
) -> Result<TransmissionTrace> {
    if !grids_match(&coupled.wavelength_nm, &reference.wavelength_nm) {
        return Err(Error::GridMismatch(
            "coupled and reference scans use different wavelength grids".into(),
        ));
    }
    if let Some(&bad) = reference.transmission.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "reference transmission must be strictly positive, found {bad}"
        )));
    }
    let ratio = coupled
        .transmission
        .iter()
        .zip(&reference.transmission)
        .map(|(&c, &r)| c / r)
        .collect();
    TransmissionTrace::new(coupled.wavelength_nm.clone(), ratio)
}

/// Normalizes a trace by the reference stored alongside it.
pub fn normalize_embedded(trace: &TransmissionTrace) -> Result<TransmissionTrace> {
    let Some(reference) = &trace.reference else {
        return Err(Error::invalid("trace carries no reference scan"));
    };
    let reference = TransmissionTrace::new(trace.wavelength_nm.clone(), reference.clone())?;
    normalize_transmission(
        &TransmissionTrace::new(trace.wavelength_nm.clone(), trace.transmission.clone())?,
        &reference,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_util::standard_normal;
    use crate::synth::{synth_transmission, Resonance};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn reference_equal_to_coupled_normalizes_to_unity() {
        let grid = linspace(765.0, 775.0, 200);
        let values: Vec<f64> = grid.iter().map(|&l| 0.8 + 0.01 * (l - 770.0)).collect();
        let trace = TransmissionTrace::new(grid.clone(), values.clone()).unwrap();
        let same = TransmissionTrace::new(grid, values).unwrap();
        let flat = normalize_transmission(&trace, &same).unwrap();
        for &v in &flat.transmission {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_is_the_pointwise_ratio() {
        let grid = linspace(760.0, 780.0, 400);
        let dips = synth_transmission(
            &[Resonance::new(770.0, 1.2e4, 0.6)],
            0.0,
            0.0,
            &grid,
            1,
        )
        .unwrap();
        let envelope: Vec<f64> = grid
            .iter()
            .map(|&l| 0.9 + 0.05 * libm::sin(2.0 * std::f64::consts::PI * (l - 760.0) / 7.0))
            .collect();
        let coupled: Vec<f64> = dips
            .transmission
            .iter()
            .zip(&envelope)
            .map(|(&d, &p)| d * p)
            .collect();
        let coupled = TransmissionTrace::new(grid.clone(), coupled).unwrap();
        let reference = TransmissionTrace::new(grid, envelope).unwrap();
        let normalized = normalize_transmission(&coupled, &reference).unwrap();
        for (&n, &d) in normalized.transmission.iter().zip(&dips.transmission) {
            assert_relative_eq!(n, d, max_relative = 1e-12);
        }
    }

    #[test]
    fn sinusoidal_power_modulation_cancels_to_under_half_percent() {
        // A 5% power swell survives in the raw scan but not in the
        // normalized one, even when both scans carry independent noise.
        let grid = linspace(760.0, 780.0, 2_000);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let envelope: Vec<f64> = grid
            .iter()
            .map(|&l| 1.0 + 0.05 * libm::sin(2.0 * std::f64::consts::PI * (l - 760.0) / 6.0))
            .collect();
        let coupled: Vec<f64> = envelope
            .iter()
            .map(|&p| p * (1.0 + 1e-3 * standard_normal(&mut rng)))
            .collect();
        let reference: Vec<f64> = envelope
            .iter()
            .map(|&p| p * (1.0 + 1e-3 * standard_normal(&mut rng)))
            .collect();
        let raw_excursion = coupled
            .iter()
            .map(|&v| (v - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(raw_excursion > 0.04);
        let coupled = TransmissionTrace::new(grid.clone(), coupled).unwrap();
        let reference = TransmissionTrace::new(grid, reference).unwrap();
        let normalized = normalize_transmission(&coupled, &reference).unwrap();
        let residual = normalized
            .transmission
            .iter()
            .map(|&v| (v - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(residual < 5e-3, "residual envelope {residual}");
    }

    #[test]
    fn normalization_rejects_bad_inputs() {
        let grid = linspace(760.0, 780.0, 50);
        let other = linspace(760.1, 780.1, 50);
        let ones = vec![1.0; 50];
        let a = TransmissionTrace::new(grid.clone(), ones.clone()).unwrap();
        let b = TransmissionTrace::new(other, ones.clone()).unwrap();
        assert!(matches!(
            normalize_transmission(&a, &b),
            Err(Error::GridMismatch(_))
        ));
        let mut zeros = ones.clone();
        zeros[10] = 0.0;
        let z = TransmissionTrace::new(grid, zeros).unwrap();
        assert!(normalize_transmission(&a, &z).is_err());
    }

    #[test]
    fn embedded_reference_normalizes_like_the_explicit_form() {
        let grid = linspace(760.0, 780.0, 50);
        let coupled: Vec<f64> = grid.iter().map(|&l| 0.5 + 0.001 * l).collect();
        let reference = vec![0.5; 50];
        let with = TransmissionTrace::new(grid.clone(), coupled.clone())
            .unwrap()
            .with_reference(reference)
            .unwrap();
        let out = normalize_embedded(&with).unwrap();
        for (o, c) in out.transmission.iter().zip(&coupled) {
            assert_abs_diff_eq!(o, &(c / 0.5), epsilon = 1e-12);
        }
        let bare = TransmissionTrace::new(grid, coupled).unwrap();
        assert!(normalize_embedded(&bare).is_err());
    }

    #[test]
    fn geometric_fsr_reproduces_the_disc_estimate() {
        // 20 um disc, index 1.5, probed at 770 nm.
        let geometry = ResonatorGeometry::new(20.0, 1.5).unwrap();
        let fsr = fsr_geometric(&geometry, 770.0);
        assert_abs_diff_eq!(fsr, 6.2909, epsilon = 1e-3);
        // Sits inside the band spanned by the geometric estimate (6.4 nm)
        // and the measured mode spacing (6.5 nm) once index uncertainty is
        // allowed for.
        assert!((6.2..=6.5).contains(&fsr));
    }

    #[test]
    fn geometric_fsr_is_homogeneous_in_diameter_and_wavelength() {
        let geometry = ResonatorGeometry::new(20.0, 1.5).unwrap();
        let doubled = ResonatorGeometry::new(40.0, 1.5).unwrap();
        let base = fsr_geometric(&geometry, 770.0);
        assert_relative_eq!(fsr_geometric(&doubled, 770.0), base / 2.0, epsilon = 1e-15);
        assert_relative_eq!(
            fsr_geometric(&geometry, 2.0 * 770.0),
            4.0 * base,
            epsilon = 1e-12
        );
    }

    #[test]
    fn geometry_validation_rejects_degenerate_inputs() {
        assert!(ResonatorGeometry::new(0.0, 1.5).is_err());
        assert!(ResonatorGeometry::new(-3.0, 1.5).is_err());
        assert!(ResonatorGeometry::new(20.0, 0.9).is_err());
        assert!(ResonatorGeometry::new(20.0, f64::NAN).is_err());
    }
}

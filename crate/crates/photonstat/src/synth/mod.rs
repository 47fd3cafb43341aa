//! Monte Carlo photon streams and synthetic spectra.
//!
//! The generators here produce the raw material for the analysis modules: a
//! quantum emitter (two-level, optionally with a shelving level) plus a
//! Poissonian background, detected behind a 50/50 beamsplitter under either
//! continuous or pulsed excitation, and synthetic resonator transmission
//! scans and modulated emission spectra.
//!
//! Everything is driven by a seeded, platform-independent generator
//! (ChaCha12, with inverse-CDF sampling through `libm`), so a fixed seed
//! reproduces streams bit for bit.

mod mc;
mod spectra;
mod stream;

pub use mc::{simulate_cw, simulate_cw_with, simulate_pulsed, simulate_pulsed_with, SimOptions};
pub use spectra::{
    resonance_overlaps, synth_modulated_spectrum, synth_transmission, ModulationLaw, Resonance,
};
pub use stream::{Origin, PhotonStream, StreamMetadata};

use crate::error::{Error, Result};

/// Default excited-state lifetime used by fixtures when nothing else is
/// configured: 20 ns, a typical nanodiamond value. It is a fixture parameter,
/// not a measured quantity.
pub const DEFAULT_LIFETIME_PS: f64 = 20_000.0;

/// How the emitter is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    /// Continuous pumping at a fixed rate (per picosecond).
    Cw { pump_rate_per_ps: f64 },
    /// One excitation attempt per laser pulse.
    Pulsed { excitation_probability: f64 },
}

/// Rate-equation model of the emitter.
///
/// The level scheme is ground and excited, with an optional shelving level
/// that produces the long-time bunching shoulder: the excited state branches
/// into the shelf at `shelving_rate_per_ps`, and the shelf relaxes back to
/// the ground state at that same rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterModel {
    pub excited_lifetime_ps: f64,
    pub shelving_rate_per_ps: Option<f64>,
    pub drive: Drive,
    /// Probability that an emitted photon is actually recorded.
    pub detected_fraction: f64,
}

impl EmitterModel {
    pub fn cw(excited_lifetime_ps: f64, pump_rate_per_ps: f64) -> Self {
        Self {
            excited_lifetime_ps,
            shelving_rate_per_ps: None,
            drive: Drive::Cw { pump_rate_per_ps },
            detected_fraction: 1.0,
        }
    }

    pub fn pulsed(excited_lifetime_ps: f64, excitation_probability: f64) -> Self {
        Self {
            excited_lifetime_ps,
            shelving_rate_per_ps: None,
            drive: Drive::Pulsed {
                excitation_probability,
            },
            detected_fraction: 1.0,
        }
    }

    pub fn with_shelving(mut self, rate_per_ps: f64) -> Self {
        self.shelving_rate_per_ps = Some(rate_per_ps);
        self
    }

    pub fn with_detected_fraction(mut self, fraction: f64) -> Self {
        self.detected_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.excited_lifetime_ps > 0.0) {
            return Err(Error::invalid("excited_lifetime_ps must be positive"));
        }
        if let Some(r) = self.shelving_rate_per_ps {
            if !(r >= 0.0) {
                return Err(Error::invalid("shelving_rate_per_ps must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.detected_fraction) {
            return Err(Error::invalid("detected_fraction must be in [0, 1]"));
        }
        match self.drive {
            Drive::Cw { pump_rate_per_ps } => {
                if !(pump_rate_per_ps >= 0.0) {
                    return Err(Error::invalid("pump_rate_per_ps must be >= 0"));
                }
            }
            Drive::Pulsed {
                excitation_probability,
            } => {
                if !(0.0..=1.0).contains(&excitation_probability) {
                    return Err(Error::invalid(
                        "excitation_probability must be in [0, 1]",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Excitation pulse train: `pulse_count` pulses spaced by the repetition
/// period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseTrain {
    pub repetition_period_ps: u64,
    pub pulse_count: u64,
}

impl PulseTrain {
    pub fn new(repetition_period_ps: u64, pulse_count: u64) -> Result<Self> {
        if repetition_period_ps == 0 {
            return Err(Error::invalid("repetition_period_ps must be positive"));
        }
        if pulse_count == 0 {
            return Err(Error::invalid("pulse_count must be positive"));
        }
        Ok(Self {
            repetition_period_ps,
            pulse_count,
        })
    }

    pub fn duration_ps(&self) -> u64 {
        self.repetition_period_ps * self.pulse_count
    }
}

/// Relative emitter intensity `a` and background intensity `b`, with their
/// standard uncertainties. Values are stored normalized to `a + b = 1`;
/// uncertainties of `a` and `b` are scaled along with the values, which
/// leaves every derived correction and error budget unchanged because the
/// mixture formulas are homogeneous of degree zero in `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundMix {
    a: f64,
    b: f64,
    delta_a: f64,
    delta_b: f64,
    delta_ratio: f64,
}

impl BackgroundMix {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        Self::with_uncertainties(a, b, 0.0, 0.0, 0.0)
    }

    /// `delta_ratio` is the standard uncertainty of `r = b / a`.
    pub fn with_uncertainties(
        a: f64,
        b: f64,
        delta_a: f64,
        delta_b: f64,
        delta_ratio: f64,
    ) -> Result<Self> {
        if !(a >= 0.0) || !(b >= 0.0) {
            return Err(Error::invalid("intensities a and b must be >= 0"));
        }
        if a + b <= 0.0 {
            return Err(Error::invalid("a + b must be positive"));
        }
        if delta_a < 0.0 || delta_b < 0.0 || delta_ratio < 0.0 {
            return Err(Error::invalid("uncertainties must be >= 0"));
        }
        let k = 1.0 / (a + b);
        Ok(Self {
            a: a * k,
            b: b * k,
            delta_a: delta_a * k,
            delta_b: delta_b * k,
            delta_ratio,
        })
    }

    /// Relative emitter intensity, normalized so that `a + b = 1`.
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Relative background intensity, normalized so that `a + b = 1`.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn delta_a(&self) -> f64 {
        self.delta_a
    }

    pub fn delta_b(&self) -> f64 {
        self.delta_b
    }

    pub fn delta_ratio(&self) -> f64 {
        self.delta_ratio
    }

    /// Background-to-signal ratio `r = b / a`.
    pub fn ratio(&self) -> f64 {
        self.b / self.a
    }

    /// Background fraction `b / (a + b)`.
    pub fn background_fraction(&self) -> f64 {
        self.b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_auto_normalizes_values_and_uncertainties() {
        let m = BackgroundMix::with_uncertainties(1.0, 2.0, 0.03, 0.21, 0.2).unwrap();
        assert!((m.a() - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.b() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.delta_a() - 0.01).abs() < 1e-15);
        assert!((m.delta_b() - 0.07).abs() < 1e-15);
        assert!((m.delta_ratio() - 0.2).abs() < 1e-15);
        assert!((m.ratio() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mix_rejects_degenerate_inputs() {
        assert!(BackgroundMix::new(0.0, 0.0).is_err());
        assert!(BackgroundMix::new(-0.1, 0.5).is_err());
        assert!(BackgroundMix::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn emitter_validation_catches_bad_probabilities() {
        let mut e = EmitterModel::cw(20_000.0, 1e-5);
        assert!(e.validate().is_ok());
        e.detected_fraction = 1.5;
        assert!(e.validate().is_err());
        let p = EmitterModel::pulsed(0.0, 0.5);
        assert!(p.validate().is_err());
    }
}

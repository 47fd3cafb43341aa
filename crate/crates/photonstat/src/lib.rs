//! Photon statistics for single-emitter experiments.
//!
//! This crate covers the numerical side of a Hanbury Brown-Twiss style
//! measurement chain and of fiber-coupled microresonator spectroscopy:
//!
//! * [`synth`] generates reproducible time-tagged detection streams for a
//!   pumped single-photon emitter plus uncorrelated background behind a
//!   50/50 beamsplitter, and synthetic resonator spectra.
//! * [`correlator`] turns two timestamp streams into second-order
//!   correlation histograms, with per-laser-period rebinning and tail
//!   normalization.
//! * [`g2`] separates emitter from background in a measured correlation:
//!   mixing and unmixing of g2 values for a two-source intensity sum,
//!   Gaussian error propagation, and antibunching model fits.
//! * [`wgm`] analyzes whispering-gallery-mode transmission and emission
//!   spectra: Lorentzian dip fits with quality factors, geometric free
//!   spectral ranges, and segmented Fourier mode maps.
//!
//! Times are picoseconds and rates are events per picosecond throughout;
//! wavelengths are nanometers. Conversions from laboratory units belong at
//! the application boundary, not in this crate.

pub mod correlator;
pub mod error;
pub mod fitting;
pub mod g2;
pub mod io;
mod rand_util;
pub mod spectrum;
pub mod synth;
pub mod wgm;

pub use error::{Error, Result};

// The guide's code blocks compile and run with the test suite, so the
// book cannot drift from the crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/streams.md")]
    mod streams {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/correlation.md")]
    mod correlation {}
    #[doc = include_str!("../../../book/src/pulsed.md")]
    mod pulsed {}
    #[doc = include_str!("../../../book/src/background.md")]
    mod background {}
    #[doc = include_str!("../../../book/src/uncertainty.md")]
    mod uncertainty {}
    #[doc = include_str!("../../../book/src/antibunching.md")]
    mod antibunching {}
    #[doc = include_str!("../../../book/src/resonators.md")]
    mod resonators {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

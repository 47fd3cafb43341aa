//! Wavelength-sampled intensity arrays shared by the spectroscopy analyses.

use crate::error::{Error, Result};

pub(crate) fn validate_grid(wavelength_nm: &[f64]) -> Result<()> {
    if wavelength_nm.len() < 2 {
        return Err(Error::invalid("wavelength grid needs at least 2 samples"));
    }
    for w in wavelength_nm.windows(2) {
        if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
            return Err(Error::invalid(
                "wavelength grid must be finite and strictly increasing",
            ));
        }
    }
    Ok(())
}

/// Emission spectrum: intensity sampled on a strictly increasing wavelength
/// grid in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub wavelength_nm: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavelength_nm: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        validate_grid(&wavelength_nm)?;
        if wavelength_nm.len() != intensity.len() {
            return Err(Error::invalid("wavelength and intensity lengths differ"));
        }
        Ok(Self {
            wavelength_nm,
            intensity,
        })
    }

    pub fn len(&self) -> usize {
        self.wavelength_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelength_nm.is_empty()
    }
}

/// Taper-transmission scan: dimensionless transmitted power on a wavelength
/// grid, optionally carrying the uncoupled reference scan on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionTrace {
    pub wavelength_nm: Vec<f64>,
    pub transmission: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

impl TransmissionTrace {
    pub fn new(wavelength_nm: Vec<f64>, transmission: Vec<f64>) -> Result<Self> {
        validate_grid(&wavelength_nm)?;
        if wavelength_nm.len() != transmission.len() {
            return Err(Error::invalid(
                "wavelength and transmission lengths differ",
            ));
        }
        Ok(Self {
            wavelength_nm,
            transmission,
            reference: None,
        })
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        if reference.len() != self.wavelength_nm.len() {
            return Err(Error::invalid("reference grid differs from trace grid"));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.wavelength_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelength_nm.is_empty()
    }
}

//! Acquisition geometry and intensity datasets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::forward::{IlluminationSet, OpticalSystem, RiVolume};

/// Everything needed to rebuild the optical system and the reconstruction grid.
/// Lengths in um, wavevectors in rad/um.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub wavelength_medium_um: f64,
    pub n_medium: f64,
    pub na_detection: f64,
    pub na_illumination: f64,
    pub nx: usize,
    pub ny: usize,
    pub n_layers: usize,
    pub pixel_pitch_um: f64,
    pub dz_um: f64,
    /// Focus offset from the exit plane; `None` means the volume center.
    #[serde(default)]
    pub z_hat_um: Option<f64>,
}

impl AcquisitionGeometry {
    pub fn z_hat(&self) -> f64 {
        self.z_hat_um
            .unwrap_or_else(|| OpticalSystem::centered_focus(self.dz_um, self.n_layers))
    }

    pub fn system(&self) -> Result<OpticalSystem> {
        if self.n_layers == 0 {
            return Err(OdtError::InvalidDimensions("n_layers must be at least 1".into()));
        }
        if !(self.dz_um > 0.0) {
            return Err(OdtError::param("dz_um", format!("must be positive, got {}", self.dz_um)));
        }
        if !(self.na_illumination >= 0.0) {
            return Err(OdtError::param("na_illumination", "must be non-negative"));
        }
        OpticalSystem::new(
            self.nx,
            self.ny,
            self.pixel_pitch_um,
            self.wavelength_medium_um,
            self.n_medium,
            self.na_detection,
            self.z_hat(),
        )
    }

    /// Reconstruction starting point: every voxel at the medium index.
    pub fn homogeneous_volume(&self) -> Result<RiVolume> {
        RiVolume::homogeneous(self.n_layers, self.nx, self.ny, self.dz_um, self.pixel_pitch_um, self.n_medium)
    }
}

/// L intensity images with the illuminations they were (reportedly) taken under.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionDataset {
    pub geometry: AcquisitionGeometry,
    /// Reported wavevectors, one per image.
    pub illuminations: IlluminationSet,
    pub intensities: Vec<Array2<f64>>,
    /// Ground-truth wavevectors when known (simulation with injected reporting errors).
    pub true_illuminations: Option<IlluminationSet>,
}

impl AcquisitionDataset {
    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if self.illuminations.len() != self.intensities.len() {
            return Err(OdtError::InconsistentDataset(format!(
                "{} illuminations but {} intensity images",
                self.illuminations.len(),
                self.intensities.len()
            )));
        }
        if let Some(truth) = &self.true_illuminations {
            if truth.len() != self.illuminations.len() {
                return Err(OdtError::InconsistentDataset(format!(
                    "{} true illuminations but {} reported",
                    truth.len(),
                    self.illuminations.len()
                )));
            }
        }
        for (idx, img) in self.intensities.iter().enumerate() {
            if img.dim() != (g.nx, g.ny) {
                return Err(OdtError::InconsistentDataset(format!(
                    "image {idx} is {:?}, geometry says {}x{}",
                    img.dim(),
                    g.nx,
                    g.ny
                )));
            }
            if let Some(((x, y), &value)) = img.indexed_iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
                return Err(OdtError::InconsistentDataset(format!(
                    "image {idx} has invalid intensity {value} at ({x}, {y})"
                )));
            }
        }
        for (idx, il) in self.illuminations.iter().enumerate() {
            if !(il.k0[0].is_finite() && il.k0[1].is_finite()) {
                return Err(OdtError::InconsistentDataset(format!("illumination {idx} is not finite")));
            }
        }
        g.system()?;
        Ok(())
    }
}

//! Multi-slice beam propagation: volume + illumination -> camera field.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::grid::{make_frequency_grid, make_pupil, ComplexField2D, FrequencyGrid, Propagator, Pupil, SpectralFilter};

/// Complex refractive index on an `N x nx x ny` grid (layer-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RiVolume {
    n: Array3<Complex64>,
    dz: f64,
    pixel_pitch: f64,
    n_medium: f64,
}

impl RiVolume {
    pub fn new(n: Array3<Complex64>, dz: f64, pixel_pitch: f64, n_medium: f64) -> Result<Self> {
        let (layers, nx, ny) = n.dim();
        if layers == 0 || nx == 0 || ny == 0 {
            return Err(OdtError::InvalidDimensions(format!("empty volume {layers}x{nx}x{ny}")));
        }
        for (name, v) in [("dz", dz), ("pixel_pitch", pixel_pitch), ("n_medium", n_medium)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OdtError::param(name, format!("must be positive, got {v}")));
            }
        }
        if let Some(idx) = n.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(OdtError::param("n", format!("non-finite index at flat position {idx}")));
        }
        Ok(Self {
            n,
            dz,
            pixel_pitch,
            n_medium,
        })
    }

    /// Volume filled with the background index.
    pub fn homogeneous(layers: usize, nx: usize, ny: usize, dz: f64, pixel_pitch: f64, n_medium: f64) -> Result<Self> {
        Self::new(
            Array3::from_elem((layers, nx, ny), Complex64::new(n_medium, 0.0)),
            dz,
            pixel_pitch,
            n_medium,
        )
    }

    pub(crate) fn from_parts(n: Array3<Complex64>, dz: f64, pixel_pitch: f64, n_medium: f64) -> Self {
        Self {
            n,
            dz,
            pixel_pitch,
            n_medium,
        }
    }

    pub fn values(&self) -> &Array3<Complex64> {
        &self.n
    }

    pub(crate) fn values_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.n
    }

    pub fn into_values(self) -> Array3<Complex64> {
        self.n
    }

    pub fn layer(&self, k: usize) -> ArrayView2<'_, Complex64> {
        self.n.index_axis(Axis(0), k)
    }

    /// `(layers, nx, ny)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.n.dim()
    }

    pub fn n_layers(&self) -> usize {
        self.n.dim().0
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn n_medium(&self) -> f64 {
        self.n_medium
    }

    pub fn real_part(&self) -> Array3<f64> {
        self.n.mapv(|v| v.re)
    }

    pub fn imag_part(&self) -> Array3<f64> {
        self.n.mapv(|v| v.im)
    }
}

/// Imaging geometry shared by every illumination angle.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalSystem {
    wavelength_medium: f64,
    n_medium: f64,
    na_detection: f64,
    z_hat: f64,
    pad_factor: usize,
    grid: FrequencyGrid,
    pupil: Pupil,
}

impl OpticalSystem {
    /// `wavelength_medium` is the wavelength inside the immersion medium; the
    /// detection NA refers to the vacuum wavelength `wavelength_medium * n_medium`.
    pub fn new(
        nx: usize,
        ny: usize,
        pixel_pitch: f64,
        wavelength_medium: f64,
        n_medium: f64,
        na_detection: f64,
        z_hat: f64,
    ) -> Result<Self> {
        if !(wavelength_medium > 0.0 && wavelength_medium.is_finite()) {
            return Err(OdtError::param("wavelength_medium", format!("must be positive, got {wavelength_medium}")));
        }
        if !(n_medium > 0.0 && n_medium.is_finite()) {
            return Err(OdtError::param("n_medium", format!("must be positive, got {n_medium}")));
        }
        if !z_hat.is_finite() {
            return Err(OdtError::param("z_hat", "must be finite"));
        }
        let grid = make_frequency_grid(nx, ny, pixel_pitch)?;
        let pupil = make_pupil(&grid, na_detection, wavelength_medium * n_medium)?;
        Ok(Self {
            wavelength_medium,
            n_medium,
            na_detection,
            z_hat,
            pad_factor: 1,
            grid,
            pupil,
        })
    }

    /// Focus at the volume center: `z_hat = dz * N / 2`.
    pub fn centered_focus(dz: f64, n_layers: usize) -> f64 {
        dz * n_layers as f64 / 2.0
    }

    pub fn with_pad_factor(mut self, pad_factor: usize) -> Result<Self> {
        if pad_factor == 0 {
            return Err(OdtError::param("pad_factor", "must be at least 1"));
        }
        self.pad_factor = pad_factor;
        Ok(self)
    }

    pub fn with_z_hat(mut self, z_hat: f64) -> Self {
        self.z_hat = z_hat;
        self
    }

    pub fn wavelength_medium(&self) -> f64 {
        self.wavelength_medium
    }

    pub fn wavelength_vacuum(&self) -> f64 {
        self.wavelength_medium * self.n_medium
    }

    /// Medium wavenumber `2 pi / wavelength_medium` (rad/um).
    pub fn k_medium(&self) -> f64 {
        2.0 * PI / self.wavelength_medium
    }

    pub fn n_medium(&self) -> f64 {
        self.n_medium
    }

    pub fn na_detection(&self) -> f64 {
        self.na_detection
    }

    pub fn z_hat(&self) -> f64 {
        self.z_hat
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn pupil(&self) -> &Pupil {
        &self.pupil
    }

    pub fn nx(&self) -> usize {
        self.grid.nx()
    }

    pub fn ny(&self) -> usize {
        self.grid.ny()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.grid.pixel_pitch()
    }

    pub(crate) fn check_volume(&self, volume: &RiVolume) -> Result<()> {
        let (_, nx, ny) = volume.dim();
        if (nx, ny) != (self.nx(), self.ny())
            || (volume.pixel_pitch() - self.pixel_pitch()).abs() > 1e-12 * self.pixel_pitch()
        {
            return Err(OdtError::GridMismatch(format!(
                "volume lateral grid {nx}x{ny} @ {} um vs system {}x{} @ {} um",
                volume.pixel_pitch(),
                self.nx(),
                self.ny(),
                self.pixel_pitch()
            )));
        }
        Ok(())
    }
}

/// One incident plane wave `amplitude * exp(j k0 . r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    /// Lateral wavevector (rad/um).
    pub k0: [f64; 2],
    #[serde(default = "unit_amplitude")]
    pub amplitude: Complex64,
}

fn unit_amplitude() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

impl Illumination {
    pub fn new(k0: [f64; 2]) -> Self {
        Self {
            k0,
            amplitude: unit_amplitude(),
        }
    }

    pub fn on_axis() -> Self {
        Self::new([0.0, 0.0])
    }

    pub fn magnitude(&self) -> f64 {
        self.k0[0].hypot(self.k0[1])
    }

    /// Same illumination with `k0` rounded to the nearest grid frequency.
    pub fn snapped(&self, grid: &FrequencyGrid) -> Self {
        Self {
            k0: grid.snap(self.k0),
            amplitude: self.amplitude,
        }
    }
}

pub type IlluminationSet = Vec<Illumination>;

/// Stored layer fields of one forward pass: `incident` is y_0, `layers[k-1]` is y_k.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFieldStack {
    pub incident: ComplexField2D,
    pub layers: Vec<ComplexField2D>,
}

impl LayerFieldStack {
    pub fn exit(&self) -> &ComplexField2D {
        self.layers.last().unwrap_or(&self.incident)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// `t(r) = exp(j (2 pi / wavelength) dz (n(r) - n_medium))`.
pub fn transmittance(layer: ArrayView2<'_, Complex64>, dz: f64, wavelength: f64, n_medium: f64) -> Array2<Complex64> {
    let c = 2.0 * PI / wavelength * dz;
    layer.mapv(|n| (Complex64::i() * c * (n - n_medium)).exp())
}

/// Precomputed operators for repeated forward/adjoint passes on one geometry.
#[derive(Debug, Clone)]
pub struct MultiSlice {
    system: OpticalSystem,
    dz: f64,
    n_layers: usize,
    step: Propagator,
    step_back: Propagator,
    refocus: Propagator,
    defocus: Propagator,
    pupil: SpectralFilter,
    pupil_adjoint: SpectralFilter,
}

impl MultiSlice {
    pub fn new(system: &OpticalSystem, dz: f64, n_layers: usize) -> Result<Self> {
        if !(dz > 0.0 && dz.is_finite()) {
            return Err(OdtError::param("dz", format!("must be positive, got {dz}")));
        }
        if n_layers == 0 {
            return Err(OdtError::param("n_layers", "must be at least 1"));
        }
        let (nx, ny, pitch, lambda, pad) = (
            system.nx(),
            system.ny(),
            system.pixel_pitch(),
            system.wavelength_medium(),
            system.pad_factor(),
        );
        let pupil = SpectralFilter::new(system.pupil().transfer().clone());
        Ok(Self {
            dz,
            n_layers,
            step: Propagator::new(nx, ny, pitch, dz, lambda, pad)?,
            step_back: Propagator::new(nx, ny, pitch, -dz, lambda, pad)?,
            refocus: Propagator::new(nx, ny, pitch, -system.z_hat(), lambda, pad)?,
            defocus: Propagator::new(nx, ny, pitch, system.z_hat(), lambda, pad)?,
            pupil_adjoint: pupil.conjugated(),
            pupil,
            system: system.clone(),
        })
    }

    pub fn for_volume(system: &OpticalSystem, volume: &RiVolume) -> Result<Self> {
        system.check_volume(volume)?;
        Self::new(system, volume.dz(), volume.n_layers())
    }

    pub fn system(&self) -> &OpticalSystem {
        &self.system
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// `2 pi dz / wavelength`.
    pub(crate) fn phase_scale(&self) -> f64 {
        2.0 * PI * self.dz / self.system.wavelength_medium()
    }

    pub(crate) fn check_volume(&self, volume: &RiVolume) -> Result<()> {
        self.system.check_volume(volume)?;
        if volume.n_layers() != self.n_layers || (volume.dz() - self.dz).abs() > 1e-12 * self.dz {
            return Err(OdtError::GridMismatch(format!(
                "volume has {} layers @ dz {} um, operator built for {} @ {}",
                volume.n_layers(),
                volume.dz(),
                self.n_layers,
                self.dz
            )));
        }
        Ok(())
    }

    pub(crate) fn transmittance(&self, volume: &RiVolume, k: usize) -> Array2<Complex64> {
        transmittance(volume.layer(k), self.dz, self.system.wavelength_medium(), volume.n_medium())
    }

    pub(crate) fn propagate_step(&self, values: &mut Array2<Complex64>) {
        self.step.apply_in_place(values);
    }

    pub(crate) fn propagate_step_back(&self, values: &mut Array2<Complex64>) {
        self.step_back.apply_in_place(values);
    }

    /// y_0 = A exp(j k0 . r); y_k = t_k * P_dz{y_(k-1)}.
    pub fn forward(&self, volume: &RiVolume, illum: &Illumination) -> Result<LayerFieldStack> {
        self.check_volume(volume)?;
        let limit = self.system.k_medium();
        if illum.magnitude() >= limit {
            return Err(OdtError::OutOfBandIllumination {
                kx: illum.k0[0],
                ky: illum.k0[1],
                limit,
            });
        }
        let (nx, ny, pitch) = (self.system.nx(), self.system.ny(), self.system.pixel_pitch());
        let incident = ComplexField2D::plane_wave(nx, ny, pitch, illum.k0, illum.amplitude)?;
        let mut layers = Vec::with_capacity(self.n_layers);
        let mut current = incident.values().clone();
        for k in 0..self.n_layers {
            self.propagate_step(&mut current);
            current *= &self.transmittance(volume, k);
            layers.push(ComplexField2D::from_parts(current.clone(), pitch));
        }
        Ok(LayerFieldStack { incident, layers })
    }

    /// E = F^-1{ p F{ P_(-z_hat){exit} } }.
    pub fn image_field(&self, exit: &ComplexField2D) -> Result<ComplexField2D> {
        self.check_field(exit)?;
        let mut v = exit.values().clone();
        self.refocus.apply_in_place(&mut v);
        self.pupil.apply_in_place(&mut v);
        Ok(ComplexField2D::from_parts(v, exit.pixel_pitch()))
    }

    /// Adjoint of [`MultiSlice::image_field`]: P_(z_hat){ F^-1{ conj(p) F{q} } }.
    pub fn backproject(&self, q: &ComplexField2D) -> Result<ComplexField2D> {
        self.check_field(q)?;
        let mut v = q.values().clone();
        self.pupil_adjoint.apply_in_place(&mut v);
        self.defocus.apply_in_place(&mut v);
        Ok(ComplexField2D::from_parts(v, q.pixel_pitch()))
    }

    pub fn predict_field(&self, volume: &RiVolume, illum: &Illumination) -> Result<ComplexField2D> {
        let stack = self.forward(volume, illum)?;
        self.image_field(stack.exit())
    }

    pub fn predict_intensity(&self, volume: &RiVolume, illum: &Illumination) -> Result<Array2<f64>> {
        Ok(self.predict_field(volume, illum)?.intensity())
    }

    fn check_field(&self, f: &ComplexField2D) -> Result<()> {
        if f.dim() != (self.system.nx(), self.system.ny()) {
            return Err(OdtError::GridMismatch(format!(
                "field {:?} vs system {}x{}",
                f.dim(),
                self.system.nx(),
                self.system.ny()
            )));
        }
        Ok(())
    }
}

pub fn msbp_forward(volume: &RiVolume, illum: &Illumination, system: &OpticalSystem) -> Result<LayerFieldStack> {
    MultiSlice::for_volume(system, volume)?.forward(volume, illum)
}

pub fn image_field(exit: &ComplexField2D, system: &OpticalSystem) -> Result<ComplexField2D> {
    // The layer geometry does not enter the image-formation step.
    MultiSlice::new(system, 1.0, 1)?.image_field(exit)
}

pub fn predict_intensity(volume: &RiVolume, illum: &Illumination, system: &OpticalSystem) -> Result<Array2<f64>> {
    MultiSlice::for_volume(system, volume)?.predict_intensity(volume, illum)
}

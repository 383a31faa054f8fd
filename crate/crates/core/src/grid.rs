//! FFT-grid wave optics: frequency grids, angular-spectrum propagation,
//! binary pupils and intensity spectra.
//!
//! All spatial frequencies are angular (rad/um). A field of `nx * ny`
//! samples is stored row-major with the `y` index fastest.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{OdtError, Result};
use crate::fft::{fftshift, signed_index, FftPlan};

/// Relative slack for inclusive comparisons against a cutoff radius, so that
/// samples lying exactly on the circle are not lost to rounding.
const EDGE_SLACK: f64 = 1e-12;

/// Sampled complex scalar field on a regular 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    values: Array2<Complex64>,
    pixel_pitch: f64,
}

impl ComplexField2D {
    pub fn new(values: Array2<Complex64>, pixel_pitch: f64) -> Result<Self> {
        check_dims(values.nrows(), values.ncols())?;
        check_pitch(pixel_pitch)?;
        if let Some(idx) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(OdtError::param("values", format!("non-finite sample at flat index {idx}")));
        }
        Ok(Self { values, pixel_pitch })
    }

    pub fn zeros(nx: usize, ny: usize, pixel_pitch: f64) -> Result<Self> {
        Self::new(Array2::zeros((nx, ny)), pixel_pitch)
    }

    pub fn constant(nx: usize, ny: usize, pixel_pitch: f64, value: Complex64) -> Result<Self> {
        Self::new(Array2::from_elem((nx, ny), value), pixel_pitch)
    }

    /// `amplitude * exp(j k0 . r)` with `r = (i * pitch, j * pitch)`.
    pub fn plane_wave(nx: usize, ny: usize, pixel_pitch: f64, k0: [f64; 2], amplitude: Complex64) -> Result<Self> {
        let values = Array2::from_shape_fn((nx, ny), |(i, j)| {
            let phase = k0[0] * i as f64 * pixel_pitch + k0[1] * j as f64 * pixel_pitch;
            amplitude * Complex64::from_polar(1.0, phase)
        });
        Self::new(values, pixel_pitch)
    }

    // Internal constructor for values produced by finite arithmetic on valid fields.
    pub(crate) fn from_parts(values: Array2<Complex64>, pixel_pitch: f64) -> Self {
        Self { values, pixel_pitch }
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    /// `sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexField2D) -> Complex64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

fn check_dims(nx: usize, ny: usize) -> Result<()> {
    if nx < 2 || ny < 2 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
        return Err(OdtError::InvalidDimensions(format!(
            "grid must be at least 2x2 with even sides, got {nx}x{ny}"
        )));
    }
    Ok(())
}

fn check_pitch(pixel_pitch: f64) -> Result<()> {
    if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
        return Err(OdtError::InvalidDimensions(format!("pixel pitch must be positive, got {pixel_pitch}")));
    }
    Ok(())
}

/// Angular spatial frequencies of an `nx * ny` grid, in FFT order (DC at index 0).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    kx: Vec<f64>,
    ky: Vec<f64>,
    pixel_pitch: f64,
}

impl FrequencyGrid {
    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    pub fn nx(&self) -> usize {
        self.kx.len()
    }

    pub fn ny(&self) -> usize {
        self.ky.len()
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    /// Sample spacing along x and y (rad/um).
    pub fn step(&self) -> [f64; 2] {
        [
            2.0 * PI / (self.nx() as f64 * self.pixel_pitch),
            2.0 * PI / (self.ny() as f64 * self.pixel_pitch),
        ]
    }

    /// One-sided Nyquist frequency `pi / pitch`.
    pub fn nyquist(&self) -> f64 {
        PI / self.pixel_pitch
    }

    pub fn k_squared(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.nx(), self.ny()), |(i, j)| self.kx[i].powi(2) + self.ky[j].powi(2))
    }

    /// Rounds a wavevector to the nearest representable grid frequency.
    pub fn snap(&self, k: [f64; 2]) -> [f64; 2] {
        let [dx, dy] = self.step();
        [(k[0] / dx).round() * dx, (k[1] / dy).round() * dy]
    }

    /// Continuous wavevector to fractional sample index (signed, DC = 0).
    pub fn to_samples(&self, k: [f64; 2]) -> [f64; 2] {
        let [dx, dy] = self.step();
        [k[0] / dx, k[1] / dy]
    }
}

pub fn make_frequency_grid(nx: usize, ny: usize, pixel_pitch: f64) -> Result<FrequencyGrid> {
    check_dims(nx, ny)?;
    check_pitch(pixel_pitch)?;
    let axis = |n: usize| -> Vec<f64> {
        let dk = 2.0 * PI / (n as f64 * pixel_pitch);
        (0..n).map(|i| signed_index(i, n) as f64 * dk).collect()
    };
    Ok(FrequencyGrid {
        kx: axis(nx),
        ky: axis(ny),
        pixel_pitch,
    })
}

/// Frequency-domain transfer function of the detection optics.
#[derive(Debug, Clone, PartialEq)]
pub struct Pupil {
    transfer: Array2<Complex64>,
    na: f64,
    wavelength: f64,
    cutoff: f64,
    clipped: bool,
}

impl Pupil {
    pub fn transfer(&self) -> &Array2<Complex64> {
        &self.transfer
    }

    pub fn na(&self) -> f64 {
        self.na
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Cutoff radius `2 pi NA / wavelength` (rad/um).
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// True when the cutoff exceeded the grid Nyquist frequency at construction.
    pub fn clipped(&self) -> bool {
        self.clipped
    }

    pub fn dim(&self) -> (usize, usize) {
        self.transfer.dim()
    }

    /// Number of frequency samples passed by the pupil.
    pub fn support(&self) -> usize {
        self.transfer.iter().filter(|v| v.norm_sqr() > 0.0).count()
    }
}

/// Binary disk pupil of radius `2 pi na / wavelength`, inclusive of the edge.
///
/// `wavelength` is the one the NA refers to, i.e. the vacuum wavelength for
/// an objective specified by its usual NA.
pub fn make_pupil(grid: &FrequencyGrid, na: f64, wavelength: f64) -> Result<Pupil> {
    if !(na > 0.0) {
        return Err(OdtError::param("na", format!("must be positive, got {na}")));
    }
    if !(wavelength > 0.0) {
        return Err(OdtError::param("wavelength", format!("must be positive, got {wavelength}")));
    }
    let cutoff = 2.0 * PI * na / wavelength;
    let clipped = cutoff > grid.nyquist();
    if clipped {
        log::warn!(
            "pupil cutoff {cutoff:.3} rad/um exceeds grid Nyquist {:.3} rad/um; pupil clipped to the grid",
            grid.nyquist()
        );
    }
    let limit = cutoff * cutoff * (1.0 + EDGE_SLACK);
    let transfer = grid
        .k_squared()
        .mapv(|k2| if k2 <= limit { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
    Ok(Pupil {
        transfer,
        na,
        wavelength,
        cutoff,
        clipped,
    })
}

/// Angular-spectrum propagator for a fixed grid, distance and wavelength.
///
/// The kernel is `exp(-j d sqrt(k^2 - |k|^2))` on the propagating band
/// `|k| <= 2 pi / wavelength` and zero outside it, which keeps the operator
/// unitary on the band and makes `-d` its exact inverse and adjoint.
/// With `pad_factor > 1` the field is zero-padded before propagation and
/// cropped afterwards; the crop is the adjoint of the pad, so `-d` remains
/// the adjoint (though no longer the inverse).
#[derive(Debug, Clone)]
pub struct Propagator {
    nx: usize,
    ny: usize,
    pad_factor: usize,
    pixel_pitch: f64,
    kernel: Array2<Complex64>,
    plan: FftPlan,
}

impl Propagator {
    pub fn new(nx: usize, ny: usize, pixel_pitch: f64, distance: f64, wavelength: f64, pad_factor: usize) -> Result<Self> {
        if !(wavelength > 0.0) {
            return Err(OdtError::param("wavelength", format!("must be positive, got {wavelength}")));
        }
        if !distance.is_finite() {
            return Err(OdtError::param("distance", "must be finite"));
        }
        if pad_factor == 0 {
            return Err(OdtError::param("pad_factor", "must be at least 1"));
        }
        let grid = make_frequency_grid(nx * pad_factor, ny * pad_factor, pixel_pitch)?;
        let k_medium = 2.0 * PI / wavelength;
        let band = k_medium * k_medium * (1.0 + EDGE_SLACK);
        let kernel = grid.k_squared().mapv(|k2| {
            if k2 <= band {
                let kz = (k_medium * k_medium - k2).max(0.0).sqrt();
                Complex64::from_polar(1.0, -distance * kz)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Ok(Self {
            nx,
            ny,
            pad_factor,
            pixel_pitch,
            kernel,
            plan: FftPlan::new(&[nx * pad_factor, ny * pad_factor]),
        })
    }

    pub fn apply(&self, field: &ComplexField2D) -> Result<ComplexField2D> {
        if field.dim() != (self.nx, self.ny) {
            return Err(OdtError::GridMismatch(format!(
                "propagator built for {}x{}, field is {:?}",
                self.nx,
                self.ny,
                field.dim()
            )));
        }
        let mut out = field.values.clone();
        self.apply_in_place(&mut out);
        Ok(ComplexField2D::from_parts(out, field.pixel_pitch))
    }

    pub(crate) fn apply_in_place(&self, values: &mut Array2<Complex64>) {
        if self.pad_factor == 1 {
            self.filter(values);
            return;
        }
        let (px, py) = (self.nx * self.pad_factor, self.ny * self.pad_factor);
        let (ox, oy) = ((px - self.nx) / 2, (py - self.ny) / 2);
        let mut padded = Array2::zeros((px, py));
        padded
            .slice_mut(ndarray::s![ox..ox + self.nx, oy..oy + self.ny])
            .assign(values);
        self.filter(&mut padded);
        values.assign(&padded.slice(ndarray::s![ox..ox + self.nx, oy..oy + self.ny]));
    }

    fn filter(&self, values: &mut Array2<Complex64>) {
        self.plan.forward(values);
        ndarray::Zip::from(&mut *values)
            .and(&self.kernel)
            .for_each(|v, h| *v *= h);
        self.plan.inverse(values);
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }
}

/// Propagates `field` by a signed `distance` (um) in a medium where the
/// wavelength is `wavelength` (um).
pub fn propagate(field: &ComplexField2D, distance: f64, wavelength: f64) -> Result<ComplexField2D> {
    let (nx, ny) = field.dim();
    Propagator::new(nx, ny, field.pixel_pitch, distance, wavelength, 1)?.apply(field)
}

/// Zeroes every spectral component outside the propagating band `|k| <= 2 pi / wavelength`.
pub fn band_limit(field: &ComplexField2D, wavelength: f64) -> Result<ComplexField2D> {
    propagate(field, 0.0, wavelength)
}

/// Frequency-domain filter with a fixed transfer function on the field's own grid.
#[derive(Debug, Clone)]
pub(crate) struct SpectralFilter {
    transfer: Array2<Complex64>,
    plan: FftPlan,
}

impl SpectralFilter {
    pub(crate) fn new(transfer: Array2<Complex64>) -> Self {
        let plan = FftPlan::new(transfer.shape());
        Self { transfer, plan }
    }

    pub(crate) fn conjugated(&self) -> Self {
        Self {
            transfer: self.transfer.mapv(|v| v.conj()),
            plan: self.plan.clone(),
        }
    }

    pub(crate) fn apply_in_place(&self, values: &mut Array2<Complex64>) {
        self.plan.forward(values);
        ndarray::Zip::from(&mut *values)
            .and(&self.transfer)
            .for_each(|v, h| *v *= h);
        self.plan.inverse(values);
    }
}

/// `F^-1{ p(k) F{field} }`.
pub fn apply_pupil(field: &ComplexField2D, pupil: &Pupil) -> Result<ComplexField2D> {
    if field.dim() != pupil.dim() {
        return Err(OdtError::GridMismatch(format!(
            "pupil is {:?}, field is {:?}",
            pupil.dim(),
            field.dim()
        )));
    }
    let mut out = field.values.clone();
    SpectralFilter::new(pupil.transfer.clone()).apply_in_place(&mut out);
    Ok(ComplexField2D::from_parts(out, field.pixel_pitch))
}

/// `|F{image}|` with the zero frequency moved to `(nx/2, ny/2)`.
pub fn intensity_spectrum(image: &Array2<f64>) -> Array2<f64> {
    let mut spec = image.mapv(|v| Complex64::new(v, 0.0));
    FftPlan::new(image.shape()).forward(&mut spec);
    fftshift(&spec.mapv(|v| v.norm()))
}

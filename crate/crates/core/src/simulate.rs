//! Synthetic ground truth: spiral illumination sets, voxelized phantoms and
//! forward-simulated intensity datasets.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AcquisitionDataset, AcquisitionGeometry};
use crate::error::{OdtError, Result};
use crate::forward::{Illumination, IlluminationSet, MultiSlice, OpticalSystem, RiVolume};

/// Golden-angle Archimedean spiral from the origin out to `2 pi na / wavelength`.
///
/// Radii grow linearly with the index; the azimuth advances by the golden
/// angle so that any prefix of the sequence covers the disk evenly. The
/// returned wavevectors are continuous; snap them to a grid before use.
pub fn spiral_illuminations(count: usize, na_illum: f64, wavelength: f64) -> Result<IlluminationSet> {
    if count == 0 {
        return Err(OdtError::param("count", "must be at least 1"));
    }
    if !(na_illum > 0.0) {
        return Err(OdtError::param("na_illum", format!("must be positive, got {na_illum}")));
    }
    if !(wavelength > 0.0) {
        return Err(OdtError::param("wavelength", format!("must be positive, got {wavelength}")));
    }
    if count == 1 {
        return Ok(vec![Illumination::on_axis()]);
    }
    let k_max = 2.0 * PI * na_illum / wavelength;
    let golden = PI * (3.0 - 5f64.sqrt());
    Ok((0..count)
        .map(|i| {
            let r = k_max * i as f64 / (count - 1) as f64;
            let theta = golden * i as f64;
            Illumination::new([r * theta.cos(), r * theta.sin()])
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        /// (x, y, z) in um.
        center: [f64; 3],
        radius: f64,
        /// Complex index as `[re, im]`.
        index: Complex64,
    },
    Shell {
        center: [f64; 3],
        inner_radius: f64,
        outer_radius: f64,
        index: Complex64,
    },
    Box {
        center: [f64; 3],
        /// Full edge lengths (x, y, z) in um.
        size: [f64; 3],
        index: Complex64,
    },
}

impl Primitive {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => dist2(p, *center) <= radius * radius,
            Primitive::Shell {
                center,
                inner_radius,
                outer_radius,
                ..
            } => {
                let d2 = dist2(p, *center);
                d2 >= inner_radius * inner_radius && d2 <= outer_radius * outer_radius
            }
            Primitive::Box { center, size, .. } => (0..3).all(|a| (p[a] - center[a]).abs() <= size[a] / 2.0),
        }
    }

    fn index(&self) -> Complex64 {
        match self {
            Primitive::Sphere { index, .. } | Primitive::Shell { index, .. } | Primitive::Box { index, .. } => *index,
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (c, half) = match self {
            Primitive::Sphere { center, radius, .. } => (*center, [*radius; 3]),
            Primitive::Shell {
                center, outer_radius, ..
            } => (*center, [*outer_radius; 3]),
            Primitive::Box { center, size, .. } => (*center, [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0]),
        };
        (
            [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
            [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
        )
    }

    fn validate(&self) -> Result<()> {
        let idx = self.index();
        if !(idx.re.is_finite() && idx.im.is_finite()) {
            return Err(OdtError::param("primitives", "index must be finite"));
        }
        let ok = match self {
            Primitive::Sphere { radius, .. } => *radius >= 0.0,
            Primitive::Shell {
                inner_radius,
                outer_radius,
                ..
            } => *inner_radius >= 0.0 && outer_radius >= inner_radius,
            Primitive::Box { size, .. } => size.iter().all(|s| *s >= 0.0),
        };
        if !ok {
            return Err(OdtError::param("primitives", format!("invalid extent in {self:?}")));
        }
        Ok(())
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Phantom description. Voxel `(k, i, j)` sits at `(i * pitch, j * pitch, k * dz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub n_layers: usize,
    pub pixel_pitch_um: f64,
    pub dz_um: f64,
    pub n_medium: f64,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl PhantomSpec {
    /// Physical extent of the voxel-center lattice, `(x, y, z)` maxima in um.
    pub fn extent(&self) -> [f64; 3] {
        [
            (self.nx.saturating_sub(1)) as f64 * self.pixel_pitch_um,
            (self.ny.saturating_sub(1)) as f64 * self.pixel_pitch_um,
            (self.n_layers.saturating_sub(1)) as f64 * self.dz_um,
        ]
    }

    /// Center of the voxel lattice in um.
    pub fn center(&self) -> [f64; 3] {
        let e = self.extent();
        [e[0] / 2.0, e[1] / 2.0, e[2] / 2.0]
    }

    pub fn validate(&self) -> Result<()> {
        let ext = self.extent();
        for p in &self.primitives {
            p.validate()?;
            let (lo, hi) = p.bounds();
            for a in 0..3 {
                if lo[a] < -1e-9 || hi[a] > ext[a] + 1e-9 {
                    return Err(OdtError::param(
                        "primitives",
                        format!("{p:?} extends outside the grid extent {ext:?} um"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Center-in-primitive voxelization; later primitives overwrite earlier ones.
pub fn rasterize_phantom(spec: &PhantomSpec) -> Result<RiVolume> {
    spec.validate()?;
    let background = Complex64::new(spec.n_medium, 0.0);
    let n = Array3::from_shape_fn((spec.n_layers, spec.nx, spec.ny), |(k, i, j)| {
        let p = [
            i as f64 * spec.pixel_pitch_um,
            j as f64 * spec.pixel_pitch_um,
            k as f64 * spec.dz_um,
        ];
        spec.primitives
            .iter()
            .rev()
            .find(|prim| prim.contains(p))
            .map_or(background, |prim| prim.index())
    });
    RiVolume::new(n, spec.dz_um, spec.pixel_pitch_um, spec.n_medium)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Additive white noise with standard deviation `relative_std * mean(I)`,
    /// clamped at zero.
    Gaussian { relative_std: f64 },
    /// Shot noise with `photons` expected counts at unit intensity.
    Poisson { photons: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::None => Ok(()),
            NoiseSpec::Gaussian { relative_std } if relative_std >= 0.0 && relative_std.is_finite() => Ok(()),
            NoiseSpec::Poisson { photons } if photons > 0.0 && photons.is_finite() => Ok(()),
            other => Err(OdtError::param("noise", format!("invalid parameter in {other:?}"))),
        }
    }

    fn apply(&self, image: &mut Array2<f64>, rng: &mut ChaCha8Rng) {
        match *self {
            NoiseSpec::None => {}
            NoiseSpec::Gaussian { relative_std } => {
                let mean = image.mean().unwrap_or(0.0);
                let std = relative_std * mean;
                if std > 0.0 {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    image.mapv_inplace(|v| (v + normal.sample(rng)).max(0.0));
                }
            }
            NoiseSpec::Poisson { photons } => image.mapv_inplace(|v| {
                let lambda = v * photons;
                if lambda > 0.0 {
                    let counts: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
                    counts / photons
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Per-angle random stream derived from the dataset seed, so angles can be
/// simulated in parallel without changing the output.
fn angle_rng(seed: u64, angle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(angle as u64);
    rng
}

/// Forward-simulates one intensity image per illumination.
///
/// Wavevectors are snapped to the frequency grid first; the dataset stores
/// the snapped values. `na_illumination` in the geometry is the largest
/// snapped illumination NA.
pub fn simulate_dataset(
    volume: &RiVolume,
    illums: &[Illumination],
    system: &OpticalSystem,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<AcquisitionDataset> {
    noise.validate()?;
    let model = MultiSlice::for_volume(system, volume)?;
    let snapped: IlluminationSet = illums.iter().map(|il| il.snapped(system.grid())).collect();
    let intensities = snapped
        .par_iter()
        .enumerate()
        .map(|(idx, il)| {
            let mut img = model.predict_intensity(volume, il)?;
            noise.apply(&mut img, &mut angle_rng(seed, idx));
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    let k_max = snapped.iter().map(Illumination::magnitude).fold(0.0, f64::max);
    let geometry = AcquisitionGeometry {
        wavelength_medium_um: system.wavelength_medium(),
        n_medium: system.n_medium(),
        na_detection: system.na_detection(),
        na_illumination: k_max * system.wavelength_vacuum() / (2.0 * PI),
        nx: system.nx(),
        ny: system.ny(),
        n_layers: volume.n_layers(),
        pixel_pitch_um: system.pixel_pitch(),
        dz_um: volume.dz(),
        z_hat_um: Some(system.z_hat()),
    };
    Ok(AcquisitionDataset {
        geometry,
        illuminations: snapped,
        intensities,
        true_illuminations: None,
    })
}

/// Replaces the reported wavevectors with copies offset by up to
/// `max_offset_samples` frequency samples per axis (uniform), keeping the
/// originals as ground truth.
pub fn perturb_reported_illuminations(dataset: &mut AcquisitionDataset, max_offset_samples: f64, seed: u64) -> Result<()> {
    if !(max_offset_samples >= 0.0 && max_offset_samples.is_finite()) {
        return Err(OdtError::param("max_offset_samples", "must be non-negative"));
    }
    let system = dataset.geometry.system()?;
    let [dx, dy] = system.grid().step();
    let truth = dataset
        .true_illuminations
        .clone()
        .unwrap_or_else(|| dataset.illuminations.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dataset.illuminations = truth
        .iter()
        .map(|il| {
            let ox = rng.random_range(-max_offset_samples..=max_offset_samples);
            let oy = rng.random_range(-max_offset_samples..=max_offset_samples);
            Illumination {
                k0: [il.k0[0] + ox * dx, il.k0[1] + oy * dy],
                amplitude: il.amplitude,
            }
        })
        .collect();
    dataset.true_illuminations = Some(truth);
    Ok(())
}

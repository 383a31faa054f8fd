//! On-disk formats: JSON metadata with raw little-endian `f32` payloads.
//!
//! A dataset directory holds `meta.json`, one `intensity_NNNN.raw` per angle
//! and, for simulated data with injected reporting errors, `truth.json`.
//! A volume directory holds `meta.json`, `real.raw` and `imag.raw`, each
//! payload laid out `(layer, x, y)` with `y` fastest. Values are stored as
//! `f32`, so a round trip is bit-exact for data already at `f32` precision.
//! Every file is written to a temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{AcquisitionDataset, AcquisitionGeometry};
use crate::error::{OdtError, Result};
use crate::forward::{Illumination, RiVolume};

pub const META_FILE: &str = "meta.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const REAL_FILE: &str = "real.raw";
pub const IMAG_FILE: &str = "imag.raw";

/// Dataset `meta.json`. Lengths in um, wavevectors in rad/um.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub wavelength_medium_um: f64,
    pub n_medium: f64,
    pub na_detection: f64,
    pub na_illumination: f64,
    pub nx: usize,
    pub ny: usize,
    pub n_layers: usize,
    pub pixel_pitch_um: f64,
    pub dz_um: f64,
    pub z_hat_um: Option<f64>,
    pub illuminations: Vec<[f64; 2]>,
    /// Complex amplitudes as `[re, im]`; omitted when all are 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illumination_amplitudes: Option<Vec<[f64; 2]>>,
    pub intensity_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthMeta {
    true_illuminations: Vec<[f64; 2]>,
}

/// Volume `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeMeta {
    /// `[n_layers, nx, ny]`.
    pub dims: [usize; 3],
    pub dz_um: f64,
    pub pixel_pitch_um: f64,
    pub n_medium: f64,
}

/// Volumes to fuse, in chain order. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StitchManifest {
    pub volumes: Vec<PathBuf>,
    #[serde(default)]
    pub min_confidence: Option<f64>,
}

fn schema(file: &Path, reason: impl Into<String>) -> OdtError {
    OdtError::Schema {
        file: file.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| OdtError::param("path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| OdtError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        OdtError::io(path, e)
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| schema(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| OdtError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.to_string()))
}

fn encode_f32(values: impl Iterator<Item = f64>, capacity: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(capacity * 4);
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_f32(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| OdtError::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(OdtError::PayloadLength {
            file: path.to_path_buf(),
            expected: count * 4,
            found: bytes.len(),
        });
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(index, c)| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(OdtError::NonFinitePayload {
                    file: path.to_path_buf(),
                    index,
                })
            }
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OdtError::io(dir, e))
}

pub fn intensity_file_name(idx: usize) -> String {
    format!("intensity_{idx:04}.raw")
}

pub fn save_dataset(ds: &AcquisitionDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    create_dir(dir)?;
    let g = &ds.geometry;
    let files: Vec<String> = (0..ds.len()).map(intensity_file_name).collect();
    for (img, name) in ds.intensities.iter().zip(&files) {
        write_atomic(&dir.join(name), &encode_f32(img.iter().copied(), img.len()))?;
    }
    let unit = ds.illuminations.iter().all(|il| il.amplitude == Complex64::new(1.0, 0.0));
    let meta = DatasetMeta {
        wavelength_medium_um: g.wavelength_medium_um,
        n_medium: g.n_medium,
        na_detection: g.na_detection,
        na_illumination: g.na_illumination,
        nx: g.nx,
        ny: g.ny,
        n_layers: g.n_layers,
        pixel_pitch_um: g.pixel_pitch_um,
        dz_um: g.dz_um,
        z_hat_um: g.z_hat_um,
        illuminations: ds.illuminations.iter().map(|il| il.k0).collect(),
        illumination_amplitudes: (!unit).then(|| ds.illuminations.iter().map(|il| [il.amplitude.re, il.amplitude.im]).collect()),
        intensity_files: files,
    };
    let truth_path = dir.join(TRUTH_FILE);
    match &ds.true_illuminations {
        Some(truth) => write_json(
            &truth_path,
            &TruthMeta {
                true_illuminations: truth.iter().map(|il| il.k0).collect(),
            },
        )?,
        None if truth_path.exists() => fs::remove_file(&truth_path).map_err(|e| OdtError::io(&truth_path, e))?,
        None => {}
    }
    // meta.json last, so a directory with a meta file is always complete
    write_json(&dir.join(META_FILE), &meta)
}

pub fn load_dataset(dir: &Path) -> Result<AcquisitionDataset> {
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta = read_json(&meta_path)?;
    if meta.illuminations.len() != meta.intensity_files.len() {
        return Err(schema(
            &meta_path,
            format!(
                "{} illuminations but {} intensity files",
                meta.illuminations.len(),
                meta.intensity_files.len()
            ),
        ));
    }
    if let Some(a) = &meta.illumination_amplitudes {
        if a.len() != meta.illuminations.len() {
            return Err(schema(
                &meta_path,
                format!("{} amplitudes for {} illuminations", a.len(), meta.illuminations.len()),
            ));
        }
    }
    if meta.nx == 0 || meta.ny == 0 || meta.n_layers == 0 {
        return Err(schema(&meta_path, "nx, ny and n_layers must be positive"));
    }
    let intensities = meta
        .intensity_files
        .iter()
        .map(|f| {
            let v = read_f32(&dir.join(f), meta.nx * meta.ny)?;
            Ok(Array2::from_shape_vec((meta.nx, meta.ny), v).expect("length checked"))
        })
        .collect::<Result<Vec<_>>>()?;
    let illuminations = meta
        .illuminations
        .iter()
        .enumerate()
        .map(|(i, k0)| Illumination {
            k0: *k0,
            amplitude: meta
                .illumination_amplitudes
                .as_ref()
                .map_or(Complex64::new(1.0, 0.0), |a| Complex64::new(a[i][0], a[i][1])),
        })
        .collect::<Vec<_>>();
    let truth_path = dir.join(TRUTH_FILE);
    let true_illuminations = if truth_path.exists() {
        let t: TruthMeta = read_json(&truth_path)?;
        if t.true_illuminations.len() != illuminations.len() {
            return Err(schema(
                &truth_path,
                format!("{} entries for {} illuminations", t.true_illuminations.len(), illuminations.len()),
            ));
        }
        Some(t.true_illuminations.into_iter().map(Illumination::new).collect())
    } else {
        None
    };
    let ds = AcquisitionDataset {
        geometry: AcquisitionGeometry {
            wavelength_medium_um: meta.wavelength_medium_um,
            n_medium: meta.n_medium,
            na_detection: meta.na_detection,
            na_illumination: meta.na_illumination,
            nx: meta.nx,
            ny: meta.ny,
            n_layers: meta.n_layers,
            pixel_pitch_um: meta.pixel_pitch_um,
            dz_um: meta.dz_um,
            z_hat_um: meta.z_hat_um,
        },
        illuminations,
        intensities,
        true_illuminations,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_volume(volume: &RiVolume, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let v = volume.values();
    write_atomic(&dir.join(REAL_FILE), &encode_f32(v.iter().map(|c| c.re), v.len()))?;
    write_atomic(&dir.join(IMAG_FILE), &encode_f32(v.iter().map(|c| c.im), v.len()))?;
    let (l, x, y) = volume.dim();
    write_json(
        &dir.join(META_FILE),
        &VolumeMeta {
            dims: [l, x, y],
            dz_um: volume.dz(),
            pixel_pitch_um: volume.pixel_pitch(),
            n_medium: volume.n_medium(),
        },
    )
}

pub fn load_volume(dir: &Path) -> Result<RiVolume> {
    let meta_path = dir.join(META_FILE);
    let meta: VolumeMeta = read_json(&meta_path)?;
    if meta.dims.contains(&0) {
        return Err(schema(&meta_path, format!("dims {:?} must be positive", meta.dims)));
    }
    let count = meta.dims.iter().product();
    let re = read_f32(&dir.join(REAL_FILE), count)?;
    let im = read_f32(&dir.join(IMAG_FILE), count)?;
    let n = Array3::from_shape_vec(
        (meta.dims[0], meta.dims[1], meta.dims[2]),
        re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect(),
    )
    .expect("length checked");
    RiVolume::new(n, meta.dz_um, meta.pixel_pitch_um, meta.n_medium)
}

/// Reads a stitch manifest and resolves its volume paths.
pub fn load_manifest(path: &Path) -> Result<StitchManifest> {
    let mut m: StitchManifest = read_json(path)?;
    if m.volumes.is_empty() {
        return Err(schema(path, "no volumes listed"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for v in &mut m.volumes {
        if v.is_relative() {
            *v = base.join(&*v);
        }
    }
    Ok(m)
}

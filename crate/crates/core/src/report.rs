//! Figure-style outputs: orthogonal slice images, annotated intensity
//! spectra and line profiles.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Rgb, RgbImage};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::forward::{OpticalSystem, RiVolume};
use crate::grid::intensity_spectrum;
use crate::io::{write_atomic, write_json};

/// Display window recorded next to every 8-bit image: gray 0 is `lo`,
/// gray 255 is `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn of<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (lo, hi) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if lo.is_finite() {
            Self { lo, hi }
        } else {
            Self { lo: 0.0, hi: 0.0 }
        }
    }

    pub fn to_gray(&self, v: f64) -> u8 {
        if self.hi <= self.lo {
            return 0;
        }
        ((v - self.lo) / (self.hi - self.lo) * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = OdtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(OdtError::param("axis", format!("expected x, y or z, got `{other}`"))),
        }
    }
}

fn encode_png(path: &Path, write: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf).map_err(|e| OdtError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(path, buf.get_ref())
}

/// 8-bit grayscale PNG with rows along the first array axis.
pub fn write_gray_png(values: &Array2<f64>, window: Window, path: &Path) -> Result<()> {
    let (rows, cols) = values.dim();
    let img = GrayImage::from_fn(cols as u32, rows as u32, |c, r| {
        image::Luma([window.to_gray(values[[r as usize, c as usize]])])
    });
    encode_png(path, |w| img.write_to(w, ImageFormat::Png))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    pub file: String,
    /// Array axes along image rows and columns.
    pub rows: Axis,
    pub cols: Axis,
    /// Fixed voxel index on the remaining axis.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub quantity: String,
    pub window: Window,
    pub slices: Vec<SliceImage>,
}

fn check_point(volume: &RiVolume, at: [usize; 3]) -> Result<()> {
    let (l, x, y) = volume.dim();
    if at[0] >= l || at[1] >= x || at[2] >= y {
        return Err(OdtError::param(
            "point",
            format!("voxel {at:?} outside volume of {:?}", (l, x, y)),
        ));
    }
    Ok(())
}

/// Writes the xy, xz and yz slices of `Re(n)` through voxel `at = [k, i, j]`
/// with one shared window, plus `slices.json`.
pub fn write_orthogonal_slices(volume: &RiVolume, at: [usize; 3], dir: &Path) -> Result<SliceReport> {
    check_point(volume, at)?;
    let re = volume.real_part();
    let xy = re.slice(s![at[0], .., ..]).to_owned();
    let xz = re.slice(s![.., .., at[2]]).to_owned();
    let yz = re.slice(s![.., at[1], ..]).to_owned();
    let window = Window::of(xy.iter().chain(xz.iter()).chain(yz.iter()));
    std::fs::create_dir_all(dir).map_err(|e| OdtError::io(dir, e))?;
    let entries = [
        ("slice_xy.png", &xy, Axis::X, Axis::Y, at[0]),
        ("slice_xz.png", &xz, Axis::Z, Axis::X, at[2]),
        ("slice_yz.png", &yz, Axis::Z, Axis::Y, at[1]),
    ];
    let mut slices = Vec::new();
    for (file, data, rows, cols, index) in entries {
        write_gray_png(data, window, &dir.join(file))?;
        slices.push(SliceImage {
            file: file.into(),
            rows,
            cols,
            index,
        });
    }
    let report = SliceReport {
        quantity: "real part of refractive index".into(),
        window,
        slices,
    };
    write_json(&dir.join("slices.json"), &report)?;
    Ok(report)
}

/// A circle in frequency space, drawn on spectrum images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    /// rad/um.
    pub center: [f64; 2],
    pub radius: f64,
    pub color: [u8; 3],
}

/// `ln(1 + |F I|)` with zero frequency at the image center, normalized to
/// its maximum, with `circles` overlaid. Rows run along kx.
pub fn write_spectrum_png(image: &Array2<f64>, system: &OpticalSystem, circles: &[Circle], path: &Path) -> Result<()> {
    let spec = intensity_spectrum(image).mapv(f64::ln_1p);
    let window = Window::of(spec.iter());
    let (nx, ny) = spec.dim();
    let mut img = RgbImage::from_fn(ny as u32, nx as u32, |c, r| {
        let g = window.to_gray(spec[[r as usize, c as usize]]);
        Rgb([g, g, g])
    });
    let [dx, dy] = system.grid().step();
    for circle in circles {
        let (cx, cy) = (nx as f64 / 2.0 + circle.center[0] / dx, ny as f64 / 2.0 + circle.center[1] / dy);
        let (rx, ry) = (circle.radius / dx, circle.radius / dy);
        let steps = (8.0 * rx.max(ry)).ceil().max(16.0) as usize;
        for t in 0..steps {
            let th = 2.0 * std::f64::consts::PI * t as f64 / steps as f64;
            let (r, c) = ((cx + rx * th.cos()).round(), (cy + ry * th.sin()).round());
            if r >= 0.0 && c >= 0.0 && (r as usize) < nx && (c as usize) < ny {
                img.put_pixel(c as u32, r as u32, Rgb(circle.color));
            }
        }
    }
    encode_png(path, |w| img.write_to(w, ImageFormat::Png))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub index: usize,
    pub position_um: f64,
    pub re: f64,
    pub im: f64,
}

/// Values along `axis` through voxel `at = [k, i, j]`.
pub fn line_profile(volume: &RiVolume, axis: Axis, at: [usize; 3]) -> Result<Vec<ProfileSample>> {
    check_point(volume, at)?;
    let v = volume.values();
    let (line, spacing) = match axis {
        Axis::X => (v.slice(s![at[0], .., at[2]]), volume.pixel_pitch()),
        Axis::Y => (v.slice(s![at[0], at[1], ..]), volume.pixel_pitch()),
        Axis::Z => (v.slice(s![.., at[1], at[2]]), volume.dz()),
    };
    Ok(line
        .iter()
        .enumerate()
        .map(|(index, n)| ProfileSample {
            index,
            position_um: index as f64 * spacing,
            re: n.re,
            im: n.im,
        })
        .collect())
}

pub fn profile_csv(samples: &[ProfileSample]) -> String {
    let mut out = String::from("index,position_um,re,im\n");
    for p in samples {
        let _ = writeln!(out, "{},{},{},{}", p.index, p.position_um, p.re, p.im);
    }
    out
}

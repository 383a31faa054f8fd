//! Translation registration and distance-weighted blending of overlapping
//! volumes.
//!
//! Offsets and shifts are `[z, x, y]` voxel triples in array-axis order.
//! A shift `s` returned by [`register_volumes`] means that content at local
//! position `p` in `a` appears at `p + s` in `b`, so placing `a` at `o` puts
//! `b` at `o - s`.

use ndarray::{s, Array3, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::fft::FftPlan;
use crate::forward::RiVolume;

/// Peak-to-second-peak ratio below which a registration is rejected.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 1.5;
/// Reported ratio when the correlation surface has no secondary peak.
const MAX_CONFIDENCE: f64 = 1e12;
/// Cross-power components weaker than this fraction of the strongest are
/// dropped before whitening.
const SPECTRAL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedVolume {
    pub volume: RiVolume,
    pub offset: [i64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    pub weights: Array3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub shift: [i64; 3],
    pub confidence: f64,
}

/// Bounding box of a set of placements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: [i64; 3],
    pub dims: [usize; 3],
}

fn dims3(v: &RiVolume) -> [usize; 3] {
    let (a, b, c) = v.dim();
    [a, b, c]
}

fn same_spacing(a: &RiVolume, b: &RiVolume) -> Result<()> {
    if a.dz() != b.dz() || a.pixel_pitch() != b.pixel_pitch() {
        return Err(OdtError::GridMismatch(format!(
            "voxel spacings differ: ({}, {}) vs ({}, {}) um",
            a.dz(),
            a.pixel_pitch(),
            b.dz(),
            b.pixel_pitch()
        )));
    }
    Ok(())
}

/// Mean-removed `Re(n)`, zero-padded to `dims`.
fn contrast(v: &RiVolume, dims: [usize; 3]) -> Array3<Complex64> {
    let [a, b, c] = dims3(v);
    let mean = v.values().iter().map(|n| n.re).sum::<f64>() / v.values().len() as f64;
    let mut out = Array3::zeros((dims[0], dims[1], dims[2]));
    out.slice_mut(s![..a, ..b, ..c])
        .zip_mut_with(v.values(), |o, n| *o = Complex64::new(n.re - mean, 0.0));
    out
}

/// Integer translation of `b` relative to `a` by 3D phase correlation.
pub fn register_volumes(a: &RiVolume, b: &RiVolume) -> Result<Registration> {
    register_volumes_with(a, b, DEFAULT_MIN_CONFIDENCE)
}

pub fn register_volumes_with(a: &RiVolume, b: &RiVolume, min_confidence: f64) -> Result<Registration> {
    same_spacing(a, b)?;
    let (da, db) = (dims3(a), dims3(b));
    // Padding to the summed extent makes the correlation linear, so every
    // lag in -(da - 1)..db maps to a unique peak index.
    let dims = [da[0] + db[0] - 1, da[1] + db[1] - 1, da[2] + db[2] - 1];
    let plan = FftPlan::new(&dims);
    let mut fa = contrast(a, dims);
    let mut fb = contrast(b, dims);
    plan.forward(&mut fa);
    plan.forward(&mut fb);

    let mut cross = Zip::from(&fa).and(&fb).map_collect(|x, y| x.conj() * y);
    let floor = cross.iter().map(|v| v.norm()).fold(0.0, f64::max) * SPECTRAL_FLOOR;
    cross.mapv_inplace(|v| {
        let m = v.norm();
        if m > floor {
            v / m
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    plan.inverse(&mut cross);
    let surface = cross.mapv(|v| v.re);

    let ((pz, px, py), &peak) = surface
        .indexed_iter()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| OdtError::InvalidDimensions("empty volume".into()))?;
    let second = secondary_peak(&surface, [pz, px, py]);
    let confidence = if peak <= 0.0 {
        0.0
    } else if second <= peak / MAX_CONFIDENCE {
        MAX_CONFIDENCE
    } else {
        peak / second
    };
    if confidence < min_confidence {
        return Err(OdtError::NoReliableOverlap {
            confidence,
            threshold: min_confidence,
        });
    }

    let unwrap = |p: usize, ax: usize| if p < db[ax] { p as i64 } else { p as i64 - dims[ax] as i64 };
    let shift = [unwrap(pz, 0), unwrap(px, 1), unwrap(py, 2)];
    Ok(Registration { shift, confidence })
}

/// Highest local maximum of a periodic surface other than the one at `main`.
fn secondary_peak(surface: &Array3<f64>, main: [usize; 3]) -> f64 {
    let (nz, nx, ny) = surface.dim();
    let at = |z: usize, x: usize, y: usize, dz: i64, dx: i64, dy: i64| {
        surface[[
            (z as i64 + dz).rem_euclid(nz as i64) as usize,
            (x as i64 + dx).rem_euclid(nx as i64) as usize,
            (y as i64 + dy).rem_euclid(ny as i64) as usize,
        ]]
    };
    let mut second = f64::NEG_INFINITY;
    for ((z, x, y), &v) in surface.indexed_iter() {
        if [z, x, y] == main || v <= second {
            continue;
        }
        let is_max = (-1..=1).all(|dz| {
            (-1..=1).all(|dx| (-1..=1).all(|dy| (dz, dx, dy) == (0, 0, 0) || at(z, x, y, dz, dx, dy) <= v))
        });
        if is_max {
            second = v;
        }
    }
    second
}

/// Bounding box of all placements.
pub fn global_frame(placed: &[PlacedVolume]) -> Result<Frame> {
    let first = placed
        .first()
        .ok_or_else(|| OdtError::InvalidDimensions("no volumes to place".into()))?;
    let mut lo = first.offset;
    let mut hi = [i64::MIN; 3];
    for p in placed {
        let d = dims3(&p.volume);
        for ax in 0..3 {
            lo[ax] = lo[ax].min(p.offset[ax]);
            hi[ax] = hi[ax].max(p.offset[ax] + d[ax] as i64);
        }
    }
    Ok(Frame {
        origin: lo,
        dims: [
            (hi[0] - lo[0]) as usize,
            (hi[1] - lo[1]) as usize,
            (hi[2] - lo[2]) as usize,
        ],
    })
}

fn footprint(p: &PlacedVolume, frame: &Frame) -> ([usize; 3], [usize; 3]) {
    let d = dims3(&p.volume);
    let lo = [
        (p.offset[0] - frame.origin[0]) as usize,
        (p.offset[1] - frame.origin[1]) as usize,
        (p.offset[2] - frame.origin[2]) as usize,
    ];
    (lo, [lo[0] + d[0], lo[1] + d[1], lo[2] + d[2]])
}

/// Exact chessboard distance to the nearest seed voxel (two-pass chamfer
/// over the 26-neighbourhood). Voxels with no seed anywhere stay at
/// `u32::MAX`.
fn chessboard_distance(seeds: &Array3<bool>) -> Array3<u32> {
    let (nz, nx, ny) = seeds.dim();
    let inf = u32::MAX;
    let mut d = seeds.mapv(|s| if s { 0 } else { inf });
    let relax = |d: &mut Array3<u32>, z: usize, x: usize, y: usize, forward: bool| {
        let mut best = d[[z, x, y]];
        for dz in -1i64..=1 {
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    // only neighbours already visited in this pass
                    let key = (dz, dx, dy);
                    let before = key < (0, 0, 0);
                    if key == (0, 0, 0) || before != forward {
                        continue;
                    }
                    let (zz, xx, yy) = (z as i64 + dz, x as i64 + dx, y as i64 + dy);
                    if zz < 0 || xx < 0 || yy < 0 || zz >= nz as i64 || xx >= nx as i64 || yy >= ny as i64 {
                        continue;
                    }
                    let v = d[[zz as usize, xx as usize, yy as usize]];
                    if v != inf {
                        best = best.min(v + 1);
                    }
                }
            }
        }
        d[[z, x, y]] = best;
    };
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                relax(&mut d, z, x, y, true);
            }
        }
    }
    for z in (0..nz).rev() {
        for x in (0..nx).rev() {
            for y in (0..ny).rev() {
                relax(&mut d, z, x, y, false);
            }
        }
    }
    d
}

/// Blend weights per placement.
///
/// A voxel covered by one volume gets weight 1. Where several overlap, each
/// contributor's raw weight is the chessboard distance from the voxel to the
/// nearest voxel covered by other volumes but not by this one, so weights
/// fall to zero toward the edge where a contributor stops. If a contributor's
/// footprint covers the entire union, the distance to the frame boundary is
/// used instead. Raw weights are normalized to sum to 1.
pub fn build_blend_masks(placed: &[PlacedVolume]) -> Result<Vec<BlendMask>> {
    let frame = global_frame(placed)?;
    let [gz, gx, gy] = frame.dims;
    let mut coverage = Array3::<u32>::zeros((gz, gx, gy));
    let boxes: Vec<_> = placed.iter().map(|p| footprint(p, &frame)).collect();
    for (lo, hi) in &boxes {
        coverage
            .slice_mut(s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]])
            .mapv_inplace(|c| c + 1);
    }

    let mut raw: Vec<Array3<f64>> = Vec::with_capacity(placed.len());
    for (lo, hi) in &boxes {
        let inside = |z: usize, x: usize, y: usize| {
            z >= lo[0] && z < hi[0] && x >= lo[1] && x < hi[1] && y >= lo[2] && y < hi[2]
        };
        let seeds = Array3::from_shape_fn((gz, gx, gy), |(z, x, y)| coverage[[z, x, y]] > 0 && !inside(z, x, y));
        let dist = chessboard_distance(&seeds);
        let local = dist.slice(s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]]).mapv(|d| d);
        let w = if local.iter().all(|d| *d == u32::MAX) {
            // footprint covers the union: distance to the frame boundary
            Array3::from_shape_fn(local.dim(), |(z, x, y)| {
                let (z, x, y) = (z + lo[0], x + lo[1], y + lo[2]);
                let m = z.min(gz - 1 - z).min(x.min(gx - 1 - x)).min(y.min(gy - 1 - y));
                (m + 1) as f64
            })
        } else {
            local.mapv(|d| d as f64)
        };
        raw.push(w);
    }

    let mut total = Array3::<f64>::zeros((gz, gx, gy));
    for ((lo, hi), w) in boxes.iter().zip(&raw) {
        total
            .slice_mut(s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]])
            .zip_mut_with(w, |t, v| *t += v);
    }
    Ok(boxes
        .iter()
        .zip(raw)
        .map(|((lo, hi), w)| {
            let t = total.slice(s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]]);
            let c = coverage.slice(s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]]);
            let weights = Zip::from(&w)
                .and(&t)
                .and(&c)
                .map_collect(|w, t, c| if *c == 1 { 1.0 } else { w / t });
            BlendMask { weights }
        })
        .collect())
}

/// Weighted sum of the placed volumes on their common frame. Uncovered
/// voxels are set to the medium index of the first volume.
pub fn stitch(placed: &[PlacedVolume], masks: &[BlendMask]) -> Result<RiVolume> {
    let frame = global_frame(placed)?;
    let first = &placed[0].volume;
    for p in placed {
        same_spacing(first, &p.volume)?;
    }
    if masks.len() != placed.len() {
        return Err(OdtError::GridMismatch(format!(
            "{} masks for {} volumes",
            masks.len(),
            placed.len()
        )));
    }
    for (p, m) in placed.iter().zip(masks) {
        if m.weights.dim() != p.volume.dim() {
            return Err(OdtError::GridMismatch(format!(
                "mask {:?} vs volume {:?}",
                m.weights.dim(),
                p.volume.dim()
            )));
        }
    }
    let [gz, gx, gy] = frame.dims;
    // Accumulate as reference + sum w_i (v_i - reference) so that identical
    // inputs reproduce their value bit for bit.
    let mut reference: Array3<Option<Complex64>> = Array3::from_elem((gz, gx, gy), None);
    let mut acc = Array3::<Complex64>::zeros((gz, gx, gy));
    for (p, m) in placed.iter().zip(masks) {
        let (lo, hi) = footprint(p, &frame);
        let region = s![lo[0]..hi[0], lo[1]..hi[1], lo[2]..hi[2]];
        Zip::from(reference.slice_mut(region))
            .and(acc.slice_mut(region))
            .and(p.volume.values())
            .and(&m.weights)
            .for_each(|r, a, v, w| match r {
                None => *r = Some(*v),
                Some(base) => *a += *w * (*v - *base),
            });
    }
    let background = Complex64::new(first.n_medium(), 0.0);
    let n = Zip::from(&reference)
        .and(&acc)
        .map_collect(|r, a| r.map_or(background, |base| base + a));
    RiVolume::new(n, first.dz(), first.pixel_pitch(), first.n_medium())
}

/// Places `volumes` in order, registering each against its predecessor.
pub fn place_chain(volumes: Vec<RiVolume>, min_confidence: f64) -> Result<(Vec<PlacedVolume>, Vec<Registration>)> {
    let mut placed: Vec<PlacedVolume> = Vec::with_capacity(volumes.len());
    let mut registrations = Vec::new();
    for (idx, v) in volumes.into_iter().enumerate() {
        let offset = match placed.last() {
            None => [0, 0, 0],
            Some(prev) => {
                let reg = register_volumes_with(&prev.volume, &v, min_confidence)?;
                log::info!("volume {idx}: shift {:?}, confidence {:.2}", reg.shift, reg.confidence);
                let o = [
                    prev.offset[0] - reg.shift[0],
                    prev.offset[1] - reg.shift[1],
                    prev.offset[2] - reg.shift[2],
                ];
                registrations.push(reg);
                o
            }
        };
        placed.push(PlacedVolume { volume: v, offset });
    }
    Ok((placed, registrations))
}

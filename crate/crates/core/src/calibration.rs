//! Illumination wavevector self-calibration from intensity spectra.
//!
//! Under weak scattering the spectrum of an image taken with an in-band plane
//! wave `exp(j k0 . r)` is confined to two pupil-sized disks centered at
//! `+k0` and `-k0`. The center is located by matching the boundary of that
//! disk pair against the log-compressed spectrum.

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AcquisitionDataset;
use crate::error::Result;
use crate::forward::{Illumination, IlluminationSet, OpticalSystem};
use crate::grid::intensity_spectrum;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.2;
/// Search radius around a hint, in frequency samples.
pub const DEFAULT_SEARCH_RADIUS: f64 = 5.0;

/// Half-width of the inner and outer template bands, in samples.
const BAND_SAMPLES: f64 = 1.5;
/// Pixels this close to DC (in samples) never enter the score.
const DC_EXCLUSION_SAMPLES: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationFlag {
    Ok,
    /// No two-circle structure inside the brightfield band.
    Darkfield,
    /// The best match sits on the edge of the search window and keeps
    /// improving outside it.
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub confidence_threshold: f64,
    pub search_radius_samples: f64,
    /// Restrict the search to the neighbourhood of the reported wavevectors.
    pub use_hints: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            search_radius_samples: DEFAULT_SEARCH_RADIUS,
            use_hints: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavevectorEstimate {
    /// Circle center in rad/um; `None` for darkfield.
    pub k0: Option<[f64; 2]>,
    /// In `[0, 1]`.
    pub confidence: f64,
    pub flag: CalibrationFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub reported: Vec<[f64; 2]>,
    pub k0_estimates: Vec<Option<[f64; 2]>>,
    pub confidence: Vec<f64>,
    pub flags: Vec<CalibrationFlag>,
    /// Frequency sample spacing (rad/um) along x and y.
    pub sample_step: [f64; 2],
}

/// Log spectrum with the sampling geometry needed to score templates.
struct Spectrum {
    values: Array2<f64>,
    step: [f64; 2],
    radius: f64,
}

impl Spectrum {
    fn new(image: &Array2<f64>, system: &OpticalSystem) -> Self {
        let mag = intensity_spectrum(image);
        let (nx, ny) = mag.dim();
        let mut ac: Vec<f64> = mag
            .indexed_iter()
            .filter(|((i, j), _)| (*i, *j) != (nx / 2, ny / 2))
            .map(|(_, v)| *v)
            .collect();
        ac.sort_by(f64::total_cmp);
        let median = ac.get(ac.len() / 2).copied().unwrap_or(0.0);
        let scale = if median > 0.0 { median } else { f64::MIN_POSITIVE };
        Self {
            values: mag.mapv(|v| (v / scale).ln_1p()),
            step: system.grid().step(),
            radius: system.pupil().cutoff(),
        }
    }

    fn k_at(&self, i: usize, j: usize) -> [f64; 2] {
        let (nx, ny) = self.values.dim();
        [
            (i as f64 - (nx / 2) as f64) * self.step[0],
            (j as f64 - (ny / 2) as f64) * self.step[1],
        ]
    }

    fn sample(&self) -> f64 {
        self.step[0].max(self.step[1])
    }

    /// Normalized edge contrast of the disk pair at `+-c`, in `[-1, 1]`.
    fn score(&self, c: [f64; 2]) -> f64 {
        let (nx, ny) = self.values.dim();
        let band = BAND_SAMPLES * self.sample();
        let dc = DC_EXCLUSION_SAMPLES * self.sample();
        let reach = [c[0].abs() + self.radius + band, c[1].abs() + self.radius + band];
        let lo_i = ((nx / 2) as f64 - reach[0] / self.step[0]).floor().max(0.0) as usize;
        let hi_i = ((nx / 2) as f64 + reach[0] / self.step[0]).ceil().min((nx - 1) as f64) as usize;
        let lo_j = ((ny / 2) as f64 - reach[1] / self.step[1]).floor().max(0.0) as usize;
        let hi_j = ((ny / 2) as f64 + reach[1] / self.step[1]).ceil().min((ny - 1) as f64) as usize;
        let slack = 1e-9 * self.sample();

        let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for i in lo_i..=hi_i {
            for j in lo_j..=hi_j {
                let k = self.k_at(i, j);
                if k[0].hypot(k[1]) <= dc {
                    continue;
                }
                let d_plus = (k[0] - c[0]).hypot(k[1] - c[1]);
                let d_minus = (k[0] + c[0]).hypot(k[1] + c[1]);
                let d = d_plus.min(d_minus) - self.radius;
                if d <= slack && d > -band {
                    sum_in += self.values[[i, j]];
                    n_in += 1;
                } else if d > slack && d <= band {
                    sum_out += self.values[[i, j]];
                    n_out += 1;
                }
            }
        }
        if n_in == 0 || n_out == 0 {
            return 0.0;
        }
        let (m_in, m_out) = (sum_in / n_in as f64, sum_out / n_out as f64);
        if m_in + m_out > 0.0 {
            (m_in - m_out) / (m_in + m_out)
        } else {
            0.0
        }
    }
}

fn parabolic_offset(minus: f64, center: f64, plus: f64) -> f64 {
    let curvature = minus - 2.0 * center + plus;
    if curvature < 0.0 {
        (0.5 * (minus - plus) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Locates the circle pair in the spectrum of `intensity`.
///
/// With a hint the search covers integer-sample centers within
/// [`DEFAULT_SEARCH_RADIUS`] samples of it and the sign closest to the hint
/// is returned. Without a hint the whole brightfield disk is searched and the
/// result lies in the half-plane `kx > 0` (or `kx == 0, ky >= 0`).
pub fn estimate_wavevector(intensity: &Array2<f64>, system: &OpticalSystem, hint: Option<[f64; 2]>) -> WavevectorEstimate {
    estimate_with(intensity, system, hint, &CalibrationOptions::default())
}

pub fn estimate_with(
    intensity: &Array2<f64>,
    system: &OpticalSystem,
    hint: Option<[f64; 2]>,
    opts: &CalibrationOptions,
) -> WavevectorEstimate {
    let spec = Spectrum::new(intensity, system);
    let step = spec.step;
    let radius_samples = [spec.radius / step[0], spec.radius / step[1]];

    // Every center in the brightfield disk, one per +-c pair. Their median
    // score is the reference level for the confidence margin.
    let span = [radius_samples[0].ceil() as i64 + 1, radius_samples[1].ceil() as i64 + 1];
    let mut disk: Vec<(i64, i64)> = Vec::new();
    for a in 0..=span[0] {
        for b in -span[1]..=span[1] {
            if a == 0 && b < 0 {
                continue;
            }
            let k = [a as f64 * step[0], b as f64 * step[1]];
            if k[0].hypot(k[1]) <= spec.radius + spec.sample() {
                disk.push((a, b));
            }
        }
    }
    let candidates: Vec<(i64, i64)> = match hint {
        Some(h) => {
            let hs = [h[0] / step[0], h[1] / step[1]];
            let r = opts.search_radius_samples;
            let (ci, cj) = (hs[0].round() as i64, hs[1].round() as i64);
            let span = r.ceil() as i64;
            let mut window = Vec::new();
            for a in ci - span..=ci + span {
                for b in cj - span..=cj + span {
                    if (a as f64 - hs[0]).hypot(b as f64 - hs[1]) <= r {
                        window.push((a, b));
                    }
                }
            }
            window
        }
        None => disk.clone(),
    };

    let at = |c: (i64, i64)| [c.0 as f64 * step[0], c.1 as f64 * step[1]];
    let mut cache: HashMap<(i64, i64), f64> = HashMap::new();
    let mut score = |c: (i64, i64)| -> f64 {
        let key = if c.0 < 0 || (c.0 == 0 && c.1 < 0) { (-c.0, -c.1) } else { c };
        *cache.entry(key).or_insert_with(|| spec.score(at(key)))
    };
    let mut reference: Vec<f64> = disk.iter().map(|&c| score(c)).collect();
    let scores: Vec<f64> = candidates.iter().map(|&c| score(c)).collect();
    let Some((best_idx, &best)) = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return WavevectorEstimate {
            k0: None,
            confidence: 0.0,
            flag: CalibrationFlag::Darkfield,
        };
    };
    let confidence = (best - median(&mut reference)).clamp(0.0, 1.0);
    let c = candidates[best_idx];

    let around = [
        score((c.0 - 1, c.1)),
        score((c.0 + 1, c.1)),
        score((c.0, c.1 - 1)),
        score((c.0, c.1 + 1)),
    ];
    // A neighbour outside the window scoring higher means the window cut the peak off.
    let clipped = around.iter().any(|s| *s > best);
    let ox = parabolic_offset(around[0], best, around[1]);
    let oy = parabolic_offset(around[2], best, around[3]);
    let mut k0 = [(c.0 as f64 + ox) * step[0], (c.1 as f64 + oy) * step[1]];
    let flip = match hint {
        Some(h) => (k0[0] + h[0]).hypot(k0[1] + h[1]) < (k0[0] - h[0]).hypot(k0[1] - h[1]),
        None => k0[0] < 0.0 || (k0[0] == 0.0 && k0[1] < 0.0),
    };
    if flip {
        k0 = [-k0[0], -k0[1]];
    }

    let magnitude = k0[0].hypot(k0[1]);
    let outside_band = magnitude > spec.radius + spec.sample() || magnitude > system.k_medium();
    let flag = if confidence < opts.confidence_threshold || outside_band {
        CalibrationFlag::Darkfield
    } else if clipped {
        CalibrationFlag::LowConfidence
    } else {
        CalibrationFlag::Ok
    };
    WavevectorEstimate {
        k0: (flag != CalibrationFlag::Darkfield).then_some(k0),
        confidence,
        flag,
    }
}

pub fn calibrate_dataset(dataset: &AcquisitionDataset) -> Result<CalibrationResult> {
    calibrate_dataset_with(dataset, &CalibrationOptions::default())
}

/// Estimates every angle, using the reported wavevectors as hints.
pub fn calibrate_dataset_with(dataset: &AcquisitionDataset, opts: &CalibrationOptions) -> Result<CalibrationResult> {
    dataset.validate()?;
    let system = dataset.geometry.system()?;
    let estimates: Vec<WavevectorEstimate> = dataset
        .intensities
        .par_iter()
        .zip(dataset.illuminations.par_iter())
        .map(|(img, il)| estimate_with(img, &system, opts.use_hints.then_some(il.k0), opts))
        .collect();
    for (idx, e) in estimates.iter().enumerate() {
        if e.flag != CalibrationFlag::Ok {
            log::warn!("angle {idx}: {:?} (confidence {:.3})", e.flag, e.confidence);
        }
    }
    Ok(CalibrationResult {
        reported: dataset.illuminations.iter().map(|il| il.k0).collect(),
        k0_estimates: estimates.iter().map(|e| e.k0).collect(),
        confidence: estimates.iter().map(|e| e.confidence).collect(),
        flags: estimates.iter().map(|e| e.flag).collect(),
        sample_step: system.grid().step(),
    })
}

impl CalibrationResult {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Accepted estimate for angle `idx`, if any.
    pub fn accepted(&self, idx: usize) -> Option<[f64; 2]> {
        (self.flags[idx] == CalibrationFlag::Ok).then_some(self.k0_estimates[idx]).flatten()
    }

    /// Estimated wavevectors where accepted, reported values elsewhere.
    pub fn corrected(&self, reported: &[Illumination]) -> IlluminationSet {
        reported
            .iter()
            .enumerate()
            .map(|(idx, il)| Illumination {
                k0: self.accepted(idx).unwrap_or(il.k0),
                amplitude: il.amplitude,
            })
            .collect()
    }

    /// Correction size in samples for accepted angles.
    pub fn correction_samples(&self, idx: usize) -> Option<f64> {
        let est = self.accepted(idx)?;
        let r = self.reported[idx];
        Some(((est[0] - r[0]) / self.sample_step[0]).hypot((est[1] - r[1]) / self.sample_step[1]))
    }

    pub fn max_correction_samples(&self) -> f64 {
        (0..self.len())
            .filter_map(|i| self.correction_samples(i))
            .fold(0.0, f64::max)
    }

    pub fn report(&self) -> CalibrationReport {
        let angles = (0..self.len())
            .map(|i| AngleReport {
                index: i,
                reported: self.reported[i],
                estimated: self.k0_estimates[i],
                confidence: self.confidence[i],
                flag: self.flags[i],
                correction_samples: self.correction_samples(i),
            })
            .collect();
        let count = |f: CalibrationFlag| self.flags.iter().filter(|x| **x == f).count();
        CalibrationReport {
            angles,
            max_correction_samples: self.max_correction_samples(),
            n_ok: count(CalibrationFlag::Ok),
            n_darkfield: count(CalibrationFlag::Darkfield),
            n_low_confidence: count(CalibrationFlag::LowConfidence),
        }
    }
}

/// Returns a copy of `dataset` whose reported illuminations are replaced by
/// the accepted estimates.
pub fn apply_calibration(dataset: &AcquisitionDataset, result: &CalibrationResult) -> AcquisitionDataset {
    AcquisitionDataset {
        illuminations: result.corrected(&dataset.illuminations),
        ..dataset.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub index: usize,
    pub reported: [f64; 2],
    pub estimated: Option<[f64; 2]>,
    pub confidence: f64,
    pub flag: CalibrationFlag,
    pub correction_samples: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub angles: Vec<AngleReport>,
    pub max_correction_samples: f64,
    pub n_ok: usize,
    pub n_darkfield: usize,
    pub n_low_confidence: usize,
}

/// AC spectral energy of an image split by the disk pair at `+-k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCircleEnergy {
    pub inside: f64,
    pub outside: f64,
}

impl TwoCircleEnergy {
    pub fn ratio(&self) -> f64 {
        if self.outside > 0.0 {
            self.inside / self.outside
        } else {
            f64::INFINITY
        }
    }
}

/// Splits `sum |F{I}|^2` (DC excluded) into the part inside the two pupil
/// disks centered at `+-k0` and the rest.
pub fn two_circle_energy(intensity: &Array2<f64>, k0: [f64; 2], system: &OpticalSystem) -> TwoCircleEnergy {
    let mag = intensity_spectrum(intensity);
    let (nx, ny) = mag.dim();
    let [dx, dy] = system.grid().step();
    let r = system.pupil().cutoff() * (1.0 + 1e-12);
    let (mut inside, mut outside) = (0.0, 0.0);
    for ((i, j), v) in mag.indexed_iter() {
        if (i, j) == (nx / 2, ny / 2) {
            continue;
        }
        let k = [(i as f64 - (nx / 2) as f64) * dx, (j as f64 - (ny / 2) as f64) * dy];
        let e = v * v;
        if (k[0] - k0[0]).hypot(k[1] - k0[1]) <= r || (k[0] + k0[0]).hypot(k[1] + k0[1]) <= r {
            inside += e;
        } else {
            outside += e;
        }
    }
    TwoCircleEnergy { inside, outside }
}

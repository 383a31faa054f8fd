//! Iterative reconstruction: per-angle gradient steps in a shuffled order,
//! one TV prox per epoch, cost bookkeeping and plateau stopping.

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{apply_update, Constraint};
use crate::dataset::{AcquisitionDataset, AcquisitionGeometry};
use crate::error::{OdtError, Result};
use crate::forward::{Illumination, IlluminationSet, MultiSlice, RiVolume};
use crate::tv::{tv_prox, TvConfig};

/// Consecutive epochs below `stop_tolerance` needed to declare a plateau.
pub const PLATEAU_EPOCHS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// The volume is rounded to `f32` after every update and every prox.
    Single,
    #[default]
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    /// Gradient step size.
    pub alpha: f64,
    pub tv: TvConfig,
    /// Maximum number of epochs.
    pub epochs: usize,
    /// Seed of the per-epoch angle permutation.
    pub seed: u64,
    pub constraint: Constraint,
    /// Relative cost change counted as "no progress".
    pub stop_tolerance: f64,
    pub precision: Precision,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            alpha: 6e-4,
            tv: TvConfig::default(),
            epochs: 50,
            seed: 0,
            constraint: Constraint::None,
            stop_tolerance: 1e-3,
            precision: Precision::Double,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(OdtError::param("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(OdtError::param("epochs", "must be at least 1"));
        }
        if !(self.stop_tolerance >= 0.0) {
            return Err(OdtError::param("stop_tolerance", "must be non-negative"));
        }
        self.tv.validate()
    }
}

/// Cost per completed epoch. `epoch[i]` is the 1-based index of `cost[i]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostHistory {
    pub epoch: Vec<usize>,
    pub cost: Vec<f64>,
}

impl CostHistory {
    pub fn len(&self) -> usize {
        self.cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cost.is_empty()
    }

    pub fn first(&self) -> Option<f64> {
        self.cost.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.cost.last().copied()
    }

    fn push(&mut self, cost: f64) {
        self.epoch.push(self.cost.len() + 1);
        self.cost.push(cost);
    }

    /// True when each of the last [`PLATEAU_EPOCHS`] epochs changed the cost by
    /// less than `tol` relative to the epoch before it.
    pub fn plateaued(&self, tol: f64) -> bool {
        if self.cost.len() <= PLATEAU_EPOCHS {
            return false;
        }
        self.cost
            .windows(2)
            .rev()
            .take(PLATEAU_EPOCHS)
            .all(|w| relative_change(w[0], w[1]) < tol)
    }
}

fn relative_change(prev: f64, now: f64) -> f64 {
    if prev == now {
        0.0
    } else {
        (now - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub volume: RiVolume,
    pub history: CostHistory,
    /// Illuminations as used by the forward model (snapped to the grid).
    pub calibrated_illuminations: IlluminationSet,
    pub geometry: AcquisitionGeometry,
    pub config: ReconstructionConfig,
    pub stop_reason: StopReason,
}

/// Reconstruct from a homogeneous start at the medium index.
pub fn reconstruct(dataset: &AcquisitionDataset, config: &ReconstructionConfig) -> Result<ReconstructionResult> {
    let start = dataset.geometry.homogeneous_volume()?;
    reconstruct_from(dataset, config, start)
}

/// Reconstruct starting from `initial` instead of the homogeneous volume.
pub fn reconstruct_from(
    dataset: &AcquisitionDataset,
    config: &ReconstructionConfig,
    initial: RiVolume,
) -> Result<ReconstructionResult> {
    config.validate()?;
    run(dataset, config, initial, CostHistory::default(), config.epochs)
}

/// Continue `previous` for `extra_epochs` more epochs under `config`. The
/// epoch counter carries over, so the shuffles match an uninterrupted run.
pub fn resume(
    previous: ReconstructionResult,
    dataset: &AcquisitionDataset,
    config: &ReconstructionConfig,
    extra_epochs: usize,
) -> Result<ReconstructionResult> {
    if previous.geometry != dataset.geometry {
        return Err(OdtError::GridMismatch(
            "previous result was produced for a different geometry".into(),
        ));
    }
    let checked = ReconstructionConfig { epochs: 1, ..*config };
    checked.validate()?;
    if extra_epochs == 0 {
        return Ok(ReconstructionResult {
            config: *config,
            ..previous
        });
    }
    run(dataset, config, previous.volume, previous.history, extra_epochs)
}

/// Permutation of `0..count` for the given absolute epoch (0-based).
pub fn epoch_order(seed: u64, epoch: usize, count: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order
}

fn round_to_single(volume: &mut RiVolume) {
    volume
        .values_mut()
        .mapv_inplace(|v| Complex64::new(v.re as f32 as f64, v.im as f32 as f64));
}

fn run(
    dataset: &AcquisitionDataset,
    config: &ReconstructionConfig,
    mut volume: RiVolume,
    mut history: CostHistory,
    epochs: usize,
) -> Result<ReconstructionResult> {
    dataset.validate()?;
    let system = dataset.geometry.system()?;
    let model = MultiSlice::for_volume(&system, &volume)?;
    let illums: Vec<Illumination> = dataset
        .illuminations
        .iter()
        .map(|il| il.snapped(system.grid()))
        .collect();
    let images: &[Array2<f64>] = &dataset.intensities;

    if config.precision == Precision::Single {
        round_to_single(&mut volume);
    }
    config.constraint.project(volume.values_mut());

    let mut stop_reason = StopReason::MaxEpochs;
    let offset = history.len();
    for epoch in offset..offset + epochs {
        let mut total = 0.0;
        for angle in epoch_order(config.seed, epoch, illums.len()) {
            let (grad, cost) = model.angle_gradient(&volume, &illums[angle], &images[angle])?;
            if !cost.is_finite() || grad.s.iter().any(|s| !s.is_finite()) {
                return Err(OdtError::Diverged { epoch: epoch + 1, angle });
            }
            total += cost;
            apply_update(&mut volume, &grad, config.alpha, config.constraint)?;
            if config.precision == Precision::Single {
                round_to_single(&mut volume);
            }
        }
        volume = tv_prox(&volume, &config.tv)?;
        config.constraint.project(volume.values_mut());
        if config.precision == Precision::Single {
            round_to_single(&mut volume);
        }
        history.push(total);
        log::info!("epoch {} cost {:.6e}", epoch + 1, total);
        if history.plateaued(config.stop_tolerance) {
            stop_reason = StopReason::Plateau;
            log::info!("cost plateau after epoch {}", epoch + 1);
            break;
        }
    }

    Ok(ReconstructionResult {
        volume,
        history,
        calibrated_illuminations: illums,
        geometry: dataset.geometry.clone(),
        config: *config,
        stop_reason,
    })
}

//! Thin n-dimensional FFT layer over `rustfft`.
//!
//! Forward transforms are unnormalized; inverse transforms carry the full
//! `1/N` factor so that `inverse(forward(x)) == x`.

use std::sync::Arc;

use ndarray::{Array, Array2, Axis, Dimension};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Cached forward/inverse plans for every axis of a fixed shape.
#[derive(Clone)]
pub struct FftPlan {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("shape", &self.shape).finish()
    }
}

impl FftPlan {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            shape: shape.to_vec(),
            forward,
            inverse,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn forward<D: Dimension>(&self, data: &mut Array<Complex64, D>) {
        debug_assert_eq!(data.shape(), self.shape.as_slice());
        for (ax, plan) in self.forward.iter().enumerate() {
            transform_lanes(data, Axis(ax), plan.as_ref());
        }
    }

    pub fn inverse<D: Dimension>(&self, data: &mut Array<Complex64, D>) {
        debug_assert_eq!(data.shape(), self.shape.as_slice());
        for (ax, plan) in self.inverse.iter().enumerate() {
            transform_lanes(data, Axis(ax), plan.as_ref());
        }
        let scale = 1.0 / data.len() as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

fn transform_lanes<D: Dimension>(data: &mut Array<Complex64, D>, axis: Axis, fft: &dyn Fft<f64>) {
    let n = data.len_of(axis);
    if n <= 1 {
        return;
    }
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    for mut lane in data.lanes_mut(axis) {
        if let Some(slice) = lane.as_slice_mut() {
            fft.process_with_scratch(slice, &mut scratch);
        } else {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (v, b) in lane.iter_mut().zip(buf.iter()) {
                *v = *b;
            }
        }
    }
}

/// Moves the zero-frequency sample to the array center (`n/2` on each axis).
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (nx, ny) = a.dim();
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        a[[(i + nx - nx / 2) % nx, (j + ny - ny / 2) % ny]].clone()
    })
}

/// Signed integer frequency index of FFT-order sample `i` on an axis of length `n`.
pub fn signed_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

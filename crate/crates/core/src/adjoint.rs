//! Amplitude residual, back-projection through the imaging optics and
//! layer-by-layer gradient accumulation for the multi-slice model.
//!
//! With cost `C = 1/2 sum (|E| - sqrt(I))^2` for one angle, the term
//! `s_k` returned by [`accumulate_gradient`] satisfies
//! `Re(s_k) = dC/dRe(n_k)` and `Im(s_k) = dC/dIm(n_k)`, so `n -= alpha * s`
//! is a plain gradient step. The conjugated factor in the per-layer term is
//! the conjugate of the field propagated forward by `+dz` (no sign flip);
//! the finite-difference tests below pin this down.

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OdtError, Result};
use crate::forward::{LayerFieldStack, MultiSlice, OpticalSystem, RiVolume};
use crate::grid::ComplexField2D;

/// Residual field at some plane of the back-propagation chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub q: ComplexField2D,
}

/// Per-layer gradient terms, `(layers, nx, ny)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub s: Array3<Complex64>,
}

impl LayerGradient {
    pub fn n_layers(&self) -> usize {
        self.s.dim().0
    }
}

/// Projection applied to the volume after every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    None,
    /// Discard the imaginary part (no absorption).
    RealOnly,
    /// Clamp the imaginary part at zero (no gain).
    NonnegAbsorption,
}

impl Constraint {
    pub fn project(self, n: &mut Array3<Complex64>) {
        match self {
            Constraint::None => {}
            Constraint::RealOnly => n.mapv_inplace(|v| Complex64::new(v.re, 0.0)),
            Constraint::NonnegAbsorption => n.mapv_inplace(|v| Complex64::new(v.re, v.im.max(0.0))),
        }
    }

    pub fn holds(self, n: &Array3<Complex64>) -> bool {
        match self {
            Constraint::None => true,
            Constraint::RealOnly => n.iter().all(|v| v.im == 0.0),
            Constraint::NonnegAbsorption => n.iter().all(|v| v.im >= 0.0),
        }
    }
}

fn check_measurement(predicted: &ComplexField2D, measured: &Array2<f64>) -> Result<()> {
    if predicted.dim() != measured.dim() {
        return Err(OdtError::GridMismatch(format!(
            "predicted field {:?} vs measured image {:?}",
            predicted.dim(),
            measured.dim()
        )));
    }
    if let Some(((x, y), &value)) = measured.indexed_iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(OdtError::NegativeIntensity { x, y, value });
    }
    Ok(())
}

/// `q0 = exp(j angle(G)) (|G| - sqrt(I))`, with the phase factor taken as 1 where `G = 0`.
pub fn amplitude_residual(predicted: &ComplexField2D, measured_intensity: &Array2<f64>) -> Result<ResidualField> {
    check_measurement(predicted, measured_intensity)?;
    let q = Zip::from(predicted.values())
        .and(measured_intensity)
        .map_collect(|g, i| {
            let mag = g.norm_sqr().sqrt();
            let phase = if mag > 0.0 { g / mag } else { Complex64::new(1.0, 0.0) };
            phase * (mag - i.sqrt())
        });
    Ok(ResidualField {
        q: ComplexField2D::from_parts(q, predicted.pixel_pitch()),
    })
}

/// `sum (|G| - sqrt(I))^2`.
pub fn cost_term(predicted: &ComplexField2D, measured_intensity: &Array2<f64>) -> Result<f64> {
    check_measurement(predicted, measured_intensity)?;
    Ok(Zip::from(predicted.values())
        .and(measured_intensity)
        .fold(0.0, |acc, g, i| {
            let d = g.norm_sqr().sqrt() - i.sqrt();
            acc + d * d
        }))
}

/// `q_(N+1) = P_(z_hat){ F^-1{ conj(p) F{q0} } }`.
pub fn backproject_residual(q0: &ResidualField, system: &OpticalSystem) -> Result<ResidualField> {
    let q = MultiSlice::new(system, 1.0, 1)?.backproject(&q0.q)?;
    Ok(ResidualField { q })
}

impl MultiSlice {
    /// Backward recursion over layers `N..1`:
    /// `s_k = -j (2 pi dz / lambda) conj(t_k) conj(P_dz{y_(k-1)}) q_(k+1)`,
    /// `q_k = P_(-dz){ conj(t_k) q_(k+1) }`.
    pub fn gradient(&self, stack: &LayerFieldStack, volume: &RiVolume, q_top: &ResidualField) -> Result<LayerGradient> {
        self.check_volume(volume)?;
        if stack.len() != volume.n_layers() {
            return Err(OdtError::GridMismatch(format!(
                "field stack has {} layers, volume has {}",
                stack.len(),
                volume.n_layers()
            )));
        }
        let (layers, nx, ny) = volume.dim();
        if q_top.q.dim() != (nx, ny) {
            return Err(OdtError::GridMismatch(format!("residual {:?} vs volume {nx}x{ny}", q_top.q.dim())));
        }
        let scale = Complex64::new(0.0, -self.phase_scale());
        let mut s = Array3::zeros((layers, nx, ny));
        let mut q = q_top.q.values().clone();
        for k in (0..layers).rev() {
            let t = self.transmittance(volume, k);
            // conj(t_k) conj(P{y_(k-1)}) == conj(y_k): reuse the stored layer field.
            Zip::from(s.index_axis_mut(Axis(0), k))
                .and(stack.layers[k].values())
                .and(&q)
                .for_each(|s, y, q| *s = scale * y.conj() * q);
            if k > 0 {
                Zip::from(&mut q).and(&t).for_each(|q, t| *q *= t.conj());
                self.propagate_step_back(&mut q);
            }
        }
        Ok(LayerGradient { s })
    }

    /// Gradient of `1/2 sum (|G| - sqrt(I))^2` for one angle, plus that angle's
    /// cost `sum (|G| - sqrt(I))^2` evaluated before any update.
    pub fn angle_gradient(
        &self,
        volume: &RiVolume,
        illum: &crate::forward::Illumination,
        measured: &Array2<f64>,
    ) -> Result<(LayerGradient, f64)> {
        let stack = self.forward(volume, illum)?;
        let predicted = self.image_field(stack.exit())?;
        let cost = cost_term(&predicted, measured)?;
        let q0 = amplitude_residual(&predicted, measured)?;
        let q_top = ResidualField {
            q: self.backproject(&q0.q)?,
        };
        Ok((self.gradient(&stack, volume, &q_top)?, cost))
    }
}

pub fn accumulate_gradient(
    stack: &LayerFieldStack,
    volume: &RiVolume,
    q_top: &ResidualField,
    system: &OpticalSystem,
) -> Result<LayerGradient> {
    MultiSlice::for_volume(system, volume)?.gradient(stack, volume, q_top)
}

/// `n_k <- n_k - alpha s_k`, then the constraint projection.
pub fn apply_update(volume: &mut RiVolume, grad: &LayerGradient, alpha: f64, constraint: Constraint) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(OdtError::param("alpha", format!("must be non-negative, got {alpha}")));
    }
    if grad.s.dim() != volume.dim() {
        return Err(OdtError::GridMismatch(format!(
            "gradient {:?} vs volume {:?}",
            grad.s.dim(),
            volume.dim()
        )));
    }
    let n = volume.values_mut();
    Zip::from(&mut *n).and(&grad.s).for_each(|n, s| *n -= alpha * s);
    constraint.project(n);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Illumination;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const NM: f64 = 1.552;

    fn field(vals: Array2<Complex64>) -> ComplexField2D {
        ComplexField2D::new(vals, 0.1).unwrap()
    }

    #[test]
    fn residual_examples() {
        let g = Array2::from_shape_fn((4, 4), |(i, j)| Complex64::from_polar(1.0 + i as f64, j as f64));
        let pred = field(g.clone());
        let fit = g.mapv(|v| v.norm_sqr());
        let q = amplitude_residual(&pred, &fit).unwrap();
        assert!(q.q.values().iter().all(|v| v.norm() < 1e-14));
        assert!(cost_term(&pred, &fit).unwrap() < 1e-25);

        let dark = Array2::zeros((4, 4));
        let q = amplitude_residual(&pred, &dark).unwrap();
        for (a, b) in q.q.values().iter().zip(g.iter()) {
            assert!((a - b).norm() < 1e-14);
        }

        let mut g1 = Array2::from_elem((4, 4), Complex64::new(0.0, 0.0));
        g1[[1, 1]] = Complex64::from_polar(2.0, PI / 4.0);
        let mut meas = Array2::zeros((4, 4));
        meas[[1, 1]] = 1.0;
        let q = amplitude_residual(&field(g1), &meas).unwrap();
        assert!((q.q.values()[[1, 1]] - Complex64::from_polar(1.0, PI / 4.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_amplitude_uses_unit_phase() {
        let pred = field(Array2::zeros((4, 4)));
        let meas = Array2::from_elem((4, 4), 4.0);
        let q = amplitude_residual(&pred, &meas).unwrap();
        assert!(q.q.values().iter().all(|v| *v == Complex64::new(-2.0, 0.0)));
        // predicted 0, measured 1 on M pixels -> cost M
        let ones = Array2::from_elem((4, 4), 1.0);
        assert_eq!(cost_term(&pred, &ones).unwrap(), 16.0);
    }

    #[test]
    fn negative_intensity_is_an_error() {
        let pred = field(Array2::zeros((4, 4)));
        let mut meas = Array2::zeros((4, 4));
        meas[[2, 3]] = -0.5;
        assert!(matches!(
            amplitude_residual(&pred, &meas),
            Err(OdtError::NegativeIntensity { x: 2, y: 3, .. })
        ));
        assert!(cost_term(&pred, &meas).is_err());
    }

    #[test]
    fn cost_is_residual_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pred = field(Array2::from_shape_fn((6, 6), |_| Complex64::new(rng.random(), rng.random())));
        let meas = Array2::from_shape_fn((6, 6), |_| rng.random::<f64>());
        let c = cost_term(&pred, &meas).unwrap();
        let q = amplitude_residual(&pred, &meas).unwrap();
        assert!((c - q.q.norm().powi(2)).abs() < 1e-12 * c);
    }

    #[test]
    fn backproject_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q0 = ResidualField {
            q: field(Array2::from_shape_fn((8, 8), |_| Complex64::new(rng.random(), rng.random()))),
        };
        let all_pass = OpticalSystem::new(8, 8, 0.1, 0.05, NM, 100.0, 0.0).unwrap();
        let out = backproject_residual(&q0, &all_pass).unwrap();
        for (a, b) in out.q.values().iter().zip(q0.q.values()) {
            assert!((a - b).norm() < 1e-12);
        }

        // Nyquist-row plane wave lies outside a small pupil.
        let sys = OpticalSystem::new(8, 8, 0.1, 0.05, NM, 0.1, 0.4).unwrap();
        let k0 = [sys.grid().kx()[4], 0.0];
        let q = ComplexField2D::plane_wave(8, 8, 0.1, k0, Complex64::new(1.0, 0.0)).unwrap();
        let out = backproject_residual(&ResidualField { q }, &sys).unwrap();
        assert!(out.q.norm() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals = Array3::from_shape_fn((2, 4, 4), |_| Complex64::new(NM + rng.random::<f64>() * 0.01, 0.0));
        let vol = RiVolume::new(vals, 0.2, 0.1, NM).unwrap();
        let mut g = LayerGradient {
            s: Array3::from_shape_fn((2, 4, 4), |_| Complex64::new(rng.random(), rng.random())),
        };

        let mut v = vol.clone();
        apply_update(&mut v, &g, 0.0, Constraint::None).unwrap();
        assert_eq!(v, vol);

        let zero = LayerGradient {
            s: Array3::zeros((2, 4, 4)),
        };
        let mut v = vol.clone();
        apply_update(&mut v, &zero, 0.3, Constraint::None).unwrap();
        assert_eq!(v, vol);

        g.s.fill(Complex64::new(0.0, 0.0));
        g.s[[1, 2, 3]] = Complex64::new(0.5, -0.25);
        let mut v = vol.clone();
        apply_update(&mut v, &g, 0.1, Constraint::None).unwrap();
        for ((idx, a), b) in v.values().indexed_iter().zip(vol.values().iter()) {
            if idx == (1, 2, 3) {
                assert_eq!(*a, b - 0.1 * Complex64::new(0.5, -0.25));
            } else {
                assert_eq!(a, b);
            }
        }

        let mut v = vol.clone();
        apply_update(&mut v, &g, 0.1, Constraint::NonnegAbsorption).unwrap();
        assert!(Constraint::NonnegAbsorption.holds(v.values()));
        apply_update(&mut v, &g, 0.1, Constraint::RealOnly).unwrap();
        assert!(Constraint::RealOnly.holds(v.values()));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let sys = OpticalSystem::new(16, 16, 0.1, 0.532 / NM, NM, 1.1, 0.4).unwrap();
        let vol = RiVolume::homogeneous(4, 16, 16, 0.2, 0.1, NM).unwrap();
        let ms = MultiSlice::for_volume(&sys, &vol).unwrap();
        let illum = Illumination::new(sys.grid().snap([4.0, 2.0]));
        let stack = ms.forward(&vol, &illum).unwrap();
        let zero = ResidualField {
            q: ComplexField2D::zeros(16, 16, 0.1).unwrap(),
        };
        let g = ms.gradient(&stack, &vol, &zero).unwrap();
        assert!(g.s.iter().all(|v| *v == Complex64::new(0.0, 0.0)));

        let meas = ms.predict_intensity(&vol, &illum).unwrap();
        let (g, cost) = ms.angle_gradient(&vol, &illum, &meas).unwrap();
        assert!(cost < 1e-20);
        assert!(g.s.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn gradient_is_homogeneous_in_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sys = OpticalSystem::new(16, 16, 0.1, 0.532 / NM, NM, 1.1, 0.4).unwrap();
        let vals = Array3::from_shape_fn((4, 16, 16), |_| Complex64::new(NM + 0.02 * rng.random::<f64>(), 0.0));
        let vol = RiVolume::new(vals, 0.2, 0.1, NM).unwrap();
        let ms = MultiSlice::for_volume(&sys, &vol).unwrap();
        let illum = Illumination::new(sys.grid().snap([3.0, -1.0]));
        let stack = ms.forward(&vol, &illum).unwrap();
        let pred = ms.image_field(stack.exit()).unwrap();
        let amp = pred.values().mapv(|v| v.norm());
        // measured amplitudes chosen so the residual magnitude doubles
        let meas1 = amp.mapv(|a| (a * 0.9).powi(2));
        let meas2 = amp.mapv(|a| (a * 0.8).powi(2));
        let g = |m: &Array2<f64>| {
            let q0 = amplitude_residual(&pred, m).unwrap();
            let q = ResidualField {
                q: ms.backproject(&q0.q).unwrap(),
            };
            ms.gradient(&stack, &vol, &q).unwrap()
        };
        let (g1, g2) = (g(&meas1), g(&meas2));
        for (a, b) in g1.s.iter().zip(g2.s.iter()) {
            assert!((2.0 * a - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }
}

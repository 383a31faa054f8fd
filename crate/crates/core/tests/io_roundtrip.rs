use ndarray::Array3;
use num_complex::Complex64;
use odt_core::error::OdtError;
use odt_core::forward::{OpticalSystem, RiVolume};
use odt_core::io::{load_dataset, load_volume, save_dataset, save_volume, REAL_FILE};
use odt_core::simulate::{perturb_reported_illuminations, rasterize_phantom, simulate_dataset, spiral_illuminations, NoiseSpec, PhantomSpec, Primitive};
use proptest::prelude::*;

fn phantom() -> PhantomSpec {
    PhantomSpec {
        nx: 16,
        ny: 12,
        n_layers: 4,
        pixel_pitch_um: 0.1,
        dz_um: 0.2,
        n_medium: 1.33,
        primitives: vec![Primitive::Sphere {
            center: [0.8, 0.6, 0.3],
            radius: 0.3,
            index: Complex64::new(1.36, 0.002),
        }],
    }
}

#[test]
fn simulated_dataset_survives_disk() {
    let p = phantom();
    let vol = rasterize_phantom(&p).unwrap();
    let sys = OpticalSystem::new(16, 12, 0.1, 0.4, 1.33, 1.0, OpticalSystem::centered_focus(0.2, 4)).unwrap();
    let illums = spiral_illuminations(5, 0.8, sys.wavelength_vacuum()).unwrap();
    let mut ds = simulate_dataset(&vol, &illums, &sys, &NoiseSpec::None, 3).unwrap();
    perturb_reported_illuminations(&mut ds, 1.5, 3).unwrap();
    for img in &mut ds.intensities {
        img.mapv_inplace(|v| v as f32 as f64);
    }
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.geometry, ds.geometry);
    assert_eq!(back.illuminations, ds.illuminations);
    assert_eq!(back.true_illuminations, ds.true_illuminations);
    assert_eq!(back.intensities, ds.intensities);

    save_volume(&vol, &dir.path().join("phantom")).unwrap();
    let v = load_volume(&dir.path().join("phantom")).unwrap();
    assert_eq!(v.dim(), vol.dim());
    for (a, b) in v.values().iter().zip(vol.values()) {
        assert_eq!(a.re, b.re as f32 as f64);
        assert_eq!(a.im, b.im as f32 as f64);
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let vol = rasterize_phantom(&phantom()).unwrap();
    save_volume(&vol, dir.path()).unwrap();
    let raw = dir.path().join(REAL_FILE);
    let bytes = std::fs::read(&raw).unwrap();
    std::fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_volume(dir.path()), Err(OdtError::PayloadLength { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn f32_volumes_round_trip_exactly(
        dims in (1usize..4, 1usize..6, 1usize..6),
        values in proptest::collection::vec((-10.0f32..10.0, -1.0f32..1.0), 100),
    ) {
        let n = Array3::from_shape_fn(dims, |(k, i, j)| {
            let (re, im) = values[(k * 25 + i * 5 + j) % values.len()];
            Complex64::new(re as f64, im as f64)
        });
        let vol = RiVolume::new(n, 0.3, 0.15, 1.4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_volume(&vol, dir.path()).unwrap();
        prop_assert_eq!(load_volume(dir.path()).unwrap(), vol);
    }
}

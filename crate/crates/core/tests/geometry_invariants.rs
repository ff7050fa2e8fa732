use proptest::prelude::*;
use tracked_bridge::analytic::{closed_form, rescale, ScalingParams};
use tracked_bridge::experiments::{ensemble_tensors, run_density, DensityConfig};
use tracked_bridge::geometry::{
    align, eigen, ellipse, estimate_ensemble, gyration_tensor, GyrationTensor,
};
use tracked_bridge::kernel::{Kernel, KernelSpec};
use tracked_bridge::rng::RngStream;
use tracked_bridge::sampler::{sample_tracked_bridge, TrackedBridge};

fn bridge(spec: KernelSpec, c: f64, seed: u64, stream: u64) -> TrackedBridge {
    let k = Kernel::new(spec).unwrap();
    sample_tracked_bridge(&k, c, &mut RngStream::new(seed, stream)).unwrap()
}

fn rotate(b: &TrackedBridge, angle: f64) -> (Vec<f64>, Vec<f64>) {
    let (s, c) = angle.sin_cos();
    b.x()
        .iter()
        .zip(b.y())
        .map(|(&x, &y)| (c * x - s * y, s * x + c * y))
        .unzip()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eigenvalues_are_rotation_invariant(stream in 0u64..10_000, angle in 0.0f64..std::f64::consts::TAU) {
        let b = bridge(KernelSpec::Exponential { lambda: 5.0 }, 100.0, 5, stream);
        let t = gyration_tensor(&b);
        let (x, y) = rotate(&b, angle);
        let r = GyrationTensor::from_points(&x, &y);
        let (e, f) = (eigen(&t).unwrap(), eigen(&r).unwrap());
        let scale = e.lambda1.max(1e-300);
        prop_assert!((e.lambda1 - f.lambda1).abs() <= 1e-10 * scale);
        prop_assert!((e.lambda2 - f.lambda2).abs() <= 1e-10 * scale);
        prop_assert!((t.trace() - r.trace()).abs() <= 1e-10 * scale);
    }

    #[test]
    fn tensor_ignores_point_order(stream in 0u64..10_000, shift in 1usize..50) {
        let b = bridge(KernelSpec::UShaped { k: 2 }, 60.0, 6, stream);
        let n = b.len();
        let mut x = b.x().to_vec();
        let mut y = b.y().to_vec();
        if n > 3 {
            let k = shift % (n - 2);
            x[1..n - 1].rotate_left(k);
            y[1..n - 1].rotate_left(k);
            x[1..n - 1].reverse();
            y[1..n - 1].reverse();
        }
        let (t, p) = (gyration_tensor(&b), GyrationTensor::from_points(&x, &y));
        let scale = t.trace().max(1e-300);
        prop_assert!((t.t11 - p.t11).abs() <= 1e-12 * scale);
        prop_assert!((t.t12 - p.t12).abs() <= 1e-12 * scale);
        prop_assert!((t.t22 - p.t22).abs() <= 1e-12 * scale);
    }

    #[test]
    fn asphericity_estimates_lie_in_unit_interval(seed in 0u64..1_000, c in 1.0f64..300.0, l in 0.1f64..30.0) {
        let k = Kernel::new(KernelSpec::Exponential { lambda: l }).unwrap();
        let tensors = ensemble_tensors(&k, c, 100, seed).unwrap();
        // An ensemble of all-empty bridges has no defined shape.
        if let Ok(est) = estimate_ensemble(&tensors) {
            prop_assert!(est.a_hat >= 0.0 && est.a_hat < 1.0, "{}", est.a_hat);
            prop_assert!(est.r2_hat > 0.0);
        }
    }

    #[test]
    fn alignment_diagonalizes(stream in 0u64..10_000) {
        let b = bridge(KernelSpec::Triangular { a: 0.4 }, 80.0, 8, stream);
        let a = align(&b).unwrap();
        let (t, u) = (gyration_tensor(&b), gyration_tensor(&a));
        let scale = t.trace();
        prop_assert!(u.t12.abs() <= 1e-10 * scale);
        prop_assert!(u.t11 >= u.t22 - 1e-12 * scale);
        prop_assert!((u.trace() - t.trace()).abs() <= 1e-12 * scale);
        let n = a.len();
        prop_assert!(a.x()[1..n - 1].iter().sum::<f64>() >= 0.0);
        prop_assert_eq!(a.times(), b.times());
    }

    #[test]
    fn ellipse_axes_follow_eigenvalues(stream in 0u64..10_000, kappa in 0.1f64..5.0) {
        let b = bridge(KernelSpec::Exponential { lambda: 2.0 }, 200.0, 9, stream);
        let t = gyration_tensor(&b);
        let e = ellipse(&t, kappa).unwrap();
        // (semi_major^2 + semi_minor^2) / kappa^2 is the trace.
        prop_assert!(((e.semi_major.powi(2) + e.semi_minor.powi(2)) / (kappa * kappa) - t.trace()).abs() <= 1e-12 * t.trace());
        prop_assert!(e.semi_major >= e.semi_minor);
    }
}

#[test]
fn mean_trace_approaches_the_gyration_radius() {
    let spec = KernelSpec::Exponential { lambda: 5.0 };
    let k = Kernel::new(spec.clone()).unwrap();
    let tensors = ensemble_tensors(&k, 1000.0, 4000, 77).unwrap();
    let est = estimate_ensemble(&tensors).unwrap();
    let r2 = closed_form(&spec).unwrap().r2;
    assert!(
        (est.r2_hat - r2).abs() < 4.0 * est.r2_stderr + 0.005 * r2,
        "{} vs {r2}",
        est.r2_hat
    );
}

#[test]
fn low_intensity_shrinks_the_radius() {
    let spec = KernelSpec::UShaped { k: 2 };
    let k = Kernel::new(spec.clone()).unwrap();
    let est = estimate_ensemble(&ensemble_tensors(&k, 20.0, 4000, 78).unwrap()).unwrap();
    let r2 = closed_form(&spec).unwrap().r2;
    assert!(est.r2_hat < r2 - 3.0 * est.r2_stderr);
}

#[test]
fn stretched_ensembles_scale_by_sigma_squared_times_horizon() {
    let spec = KernelSpec::Exponential { lambda: 3.0 };
    let k = Kernel::new(spec.clone()).unwrap();
    let scale = ScalingParams::new(2.5, 0.7).unwrap();
    let tensors: Vec<GyrationTensor> = (0..4000)
        .map(|i| {
            let b = sample_tracked_bridge(&k, 1000.0, &mut RngStream::new(91, i)).unwrap();
            let s = b.stretched(scale);
            GyrationTensor::from_points(&s.x, &s.y)
        })
        .collect();
    let est = estimate_ensemble(&tensors).unwrap();
    let expected = rescale(closed_form(&spec).unwrap(), scale);
    assert!((est.r2_hat - expected.r2).abs() < 4.0 * est.r2_stderr + 0.005 * expected.r2);
    assert!((est.a_hat - expected.asphericity).abs() < 4.0 * est.a_stderr + 0.005);
    assert_eq!(
        expected.asphericity,
        closed_form(&spec).unwrap().asphericity
    );
}

#[test]
fn aligned_density_leans_right_and_tracks_asphericity() {
    let anisotropy = |spec: KernelSpec| {
        let out = run_density(&DensityConfig {
            seed: 4,
            resolution: 121,
            ..DensityConfig::new(spec, 1000.0)
        })
        .unwrap();
        assert_eq!(out.skipped, 0);
        let (left, right) = out.grid.half_plane_masses();
        assert!(right > left, "{left} vs {right}");
        assert!((out.grid.mass() - 1.0).abs() < 0.02);
        let (xx, yy, _) = out.grid.second_moments();
        (xx - yy) / (xx + yy)
    };
    let u = anisotropy(KernelSpec::UShaped { k: 1 });
    let e = anisotropy(KernelSpec::Exponential { lambda: 5.0 });
    assert!(u < e, "u-shaped {u} vs exponential {e}");
}

use proptest::prelude::*;
use smoothfool::conv::convolve2d;
use smoothfool::metrics::{normalized_roughness, roughness, weighted_mean, FoolingReport, RoughnessReport};
use smoothfool::{SmoothingKernel, Tensor};

fn perturbation() -> impl Strategy<Value = Tensor> {
    (1usize..=3, 2usize..=14, 2usize..=14).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-1.0f64..1.0, c * h * w).prop_map(move |v| Tensor::new(vec![c, h, w], v).unwrap())
    })
}

fn gaussian(sigma: f64) -> SmoothingKernel {
    SmoothingKernel::gaussian(sigma).unwrap()
}

proptest! {
    #[test]
    fn roughness_is_quadratic(r in perturbation(), c in -5.0f64..5.0, sigma in 0.5f64..3.0) {
        let h = gaussian(sigma);
        let base = roughness(&r, &h).unwrap();
        let scaled = roughness(&r.scale(c), &h).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-10 * (c * c * base).abs().max(1e-300));
    }

    #[test]
    fn roughness_is_nonnegative(r in perturbation(), sigma in 0.5f64..3.0) {
        prop_assert!(roughness(&r, &gaussian(sigma)).unwrap() >= 0.0);
    }

    #[test]
    fn normalized_roughness_ignores_sign_and_scale(r in perturbation(), c in 0.1f64..10.0) {
        let h = gaussian(1.0);
        let base = normalized_roughness(&r, &h).unwrap();
        prop_assert!((normalized_roughness(&r.scale(-1.0), &h).unwrap() - base).abs() <= 1e-12 * base.max(1e-300));
        prop_assert!((normalized_roughness(&r.scale(c), &h).unwrap() - base).abs() <= 1e-10 * base.max(1e-300));
    }

    #[test]
    fn presmoothing_does_not_add_roughness(r in perturbation()) {
        let h = gaussian(1.0);
        let mut previous = roughness(&r, &h).unwrap();
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let current = roughness(&convolve2d(&r, &gaussian(sigma)).unwrap(), &h).unwrap();
            prop_assert!(current <= previous * (1.0 + 1e-12) + 1e-15, "sigma {sigma}: {current} > {previous}");
            previous = current;
        }
    }

    #[test]
    fn overall_rate_is_the_class_weighted_mean(
        rows in prop::collection::vec((0usize..5, any::<bool>(), any::<bool>()), 1..200),
    ) {
        let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let correct: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let fooled: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let Ok(report) = FoolingReport::from_flags(&labels, 5, &correct, &fooled, None) else {
            prop_assert!(correct.iter().all(|c| !c));
            return Ok(());
        };
        prop_assert_eq!(report.overall_rate, weighted_mean(&report.per_class, &report.class_counts));
        let attacked = correct.iter().filter(|c| **c).count();
        let hits = correct.iter().zip(&fooled).filter(|(c, f)| **c && **f).count();
        prop_assert!((report.overall_rate - hits as f64 / attacked as f64).abs() <= 1e-12);
        prop_assert_eq!(report.misclassified, rows.len() - attacked);
    }
}

#[test]
fn report_from_measurements_matches_direct_computation() {
    let h = gaussian(1.0);
    let rs: Vec<Tensor> = (0..5)
        .map(|k| Tensor::from_fn(&[1, 6, 6], |i| ((i * (k + 3)) % 7) as f64 / 7.0 - 0.4))
        .collect();
    let omegas: Vec<f64> = rs.iter().map(|r| roughness(r, &h).unwrap()).collect();
    let l2: Vec<f64> = rs.iter().map(Tensor::norm_l2).collect();
    let report = RoughnessReport::from_measurements(&omegas, &l2, Some(1.0)).unwrap();
    let normalized: Vec<f64> = rs.iter().map(|r| normalized_roughness(r, &h).unwrap()).collect();
    let mean_n = normalized.iter().sum::<f64>() / 5.0;
    assert!((report.omega_bar_n - mean_n).abs() <= 1e-14 * mean_n);
    assert!((report.omega_bar - omegas.iter().sum::<f64>() / 5.0).abs() <= 1e-15);
}

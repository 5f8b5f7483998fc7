use nalgebra::DMatrix;
use proptest::prelude::*;

use arhmc::covariance::{build_y_series, omega, spectral_i};
use arhmc::estimate::project_to_theta_space;
use arhmc::model::{canonicalize, model_to_theta, permute_regimes, theta_len, theta_to_model, validate, ThetaVector};
use arhmc::moments::{empirical_autocov, psi_vector};
use arhmc::simulate::{simulate_arhmc, NoiseSpec};

fn raw_theta() -> impl Strategy<Value = ThetaVector> {
    (1usize..=3).prop_flat_map(|k| {
        prop::collection::vec(-3.0f64..3.0, theta_len(k)).prop_map(move |values| ThetaVector { k, values })
    })
}

fn admissible_theta() -> impl Strategy<Value = ThetaVector> {
    raw_theta().prop_map(|t| project_to_theta_space(&t, 1e-3))
}

fn eigen_min(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_parameter_space(raw in raw_theta()) {
        let t = project_to_theta_space(&raw, 1e-4);
        let report = validate(&t, &[2.0]);
        prop_assert!(report.in_theta, "{:?}", report.messages);
        let again = project_to_theta_space(&t, 1e-4);
        for (a, b) in again.values.iter().zip(&t.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn theta_model_round_trip(t in admissible_theta()) {
        let back = model_to_theta(&theta_to_model(&t).unwrap());
        prop_assert_eq!(back.k, t.k);
        for (a, b) in back.values.iter().zip(&t.values) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn canonicalize_is_idempotent_and_preserves_moments(t in admissible_theta()) {
        let c = canonicalize(&t).unwrap();
        let cc = canonicalize(&c).unwrap();
        prop_assert_eq!(&c.values, &cc.values);
        let (pt, pc) = (psi_vector(&t, 6).unwrap(), psi_vector(&c, 6).unwrap());
        for (a, b) in pt.iter().zip(&pc) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn relabelling_leaves_moments_unchanged(t in admissible_theta(), flip in any::<bool>()) {
        let m = theta_to_model(&t).unwrap();
        let k = m.k;
        let perm: Vec<usize> = (0..k).rev().collect();
        let signs: Vec<f64> = (0..k).map(|i| if flip && i == 0 { -1.0 } else { 1.0 }).collect();
        let relabelled = model_to_theta(&permute_regimes(&m, &perm, &signs));
        let (a, b) = (psi_vector(&t, 5).unwrap(), psi_vector(&relabelled, 5).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn stationary_distribution_is_invariant(t in admissible_theta()) {
        let m = theta_to_model(&t).unwrap();
        let pi = m.stationary_distribution().unwrap();
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
        prop_assert!(pi.iter().all(|&p| p > 0.0));
        let moved = m.p.transpose() * &pi;
        prop_assert!((moved - &pi).amax() < 1e-12);
    }

    #[test]
    fn sandwich_is_symmetric_psd(
        j_entries in prop::collection::vec(-2.0f64..2.0, 12),
        b_entries in prop::collection::vec(-2.0f64..2.0, 16),
    ) {
        let j = DMatrix::from_row_slice(4, 3, &j_entries);
        prop_assume!(j.clone().singular_values().min() > 1e-3);
        let b = DMatrix::from_row_slice(4, 4, &b_entries);
        let i = &b * b.transpose();
        let m = j.transpose() * &j;
        let o = omega(&m, &j, &i).unwrap();
        prop_assert!((&o - o.transpose()).amax() < 1e-12 * o.amax().max(1.0));
        prop_assert!(eigen_min(&o) >= -1e-9 * o.amax().max(1.0));
    }

    #[test]
    fn empirical_autocov_scales_quadratically(x in prop::collection::vec(-5.0f64..5.0, 10..60), s in -3.0f64..3.0) {
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        for k in 0..3 {
            let (a, b) = (empirical_autocov(&x, k).unwrap(), empirical_autocov(&scaled, k).unwrap());
            prop_assert!((b - s * s * a).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn simulation_is_a_function_of_the_seed(t in admissible_theta(), seed in any::<u64>()) {
        let m = theta_to_model(&t).unwrap();
        let a = simulate_arhmc(&m, &NoiseSpec::Weak1, 50, 20, seed, true).unwrap();
        let b = simulate_arhmc(&m, &NoiseSpec::Weak1, 50, 20, seed, true).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectral_estimate_is_symmetric_psd(x in prop::collection::vec(-3.0f64..3.0, 200..400), r in 0usize..3) {
        let y = build_y_series(&x, 3).unwrap();
        let (i, _) = spectral_i(&y, Some(r)).unwrap();
        prop_assert!((&i - i.transpose()).amax() < 1e-12 * i.amax().max(1.0));
        prop_assert!(eigen_min(&i) >= -1e-9 * i.amax().max(1.0));
    }
}

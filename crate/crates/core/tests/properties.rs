mod common;

use common::*;
use proptest::prelude::*;
use qbranch::model::{harris_sevastyanov, IntensityVector, INTENSITY_TOL};
use qbranch::{build_model, model_from, Criticality};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_invariants(a in intensities()) {
        let m = model_from(&a).unwrap();
        let q = m.q();
        prop_assert!(q > 0.0 && q <= 1.0);
        prop_assert!(m.f(q).abs() < 1e-10);
        prop_assert!(m.f(1.0).abs() < 1e-12);
        prop_assert!((m.beta() - m.df(q).exp()).abs() < 1e-9);
        prop_assert!(m.b() >= 0.0);
        prop_assert_eq!(m.is_critical(), m.gamma().is_none());
        let expected = if m.is_critical() { Criticality::Critical } else if q < 1.0 { Criticality::Supercritical } else { Criticality::Subcritical };
        prop_assert_eq!(m.criticality(), expected);
    }

    #[test]
    fn build_is_idempotent(a in intensities()) {
        let m = model_from(&a).unwrap();
        let again = build_model(m.intensities().clone(), m.tol()).unwrap();
        prop_assert_eq!(m, again);
    }

    #[test]
    fn transform_is_subcritical_or_critical(a in intensities()) {
        let m = model_from(&a).unwrap();
        let hs = harris_sevastyanov(&m);
        prop_assert!((hs.q() - 1.0).abs() < 1e-12);
        prop_assert!((hs.ln_beta() - m.ln_beta()).abs() < 1e-9);
        prop_assert!((hs.b() - m.b()).abs() < 1e-9 * (1.0 + m.b()));
    }

    #[test]
    fn densities_are_conservative(a in intensities()) {
        check_densities_conservative(&model_from(&a).unwrap()).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn phi_fixed_points(a in intensities(), t in 0.1f64..6.0) {
        check_fixed_points(&model_from(&a).unwrap(), t).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn phi_semigroup(a in intensities(), t in 0.05f64..3.0, s in 0.05f64..3.0, x in 0.0f64..1.0) {
        check_semigroup(&model_from(&a).unwrap(), t, s, x).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn q_rows_sum_to_one(a in intensities(), i in 1usize..4, t in 0.05f64..2.0) {
        check_q_rows_sum_to_one(&model_from(&a).unwrap(), i, t).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn qprocess_never_visits_zero(a in intensities(), i0 in 1u64..6, seed in any::<u64>()) {
        check_qprocess_avoids_zero(&model_from(&a).unwrap(), i0, seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn seed_determinism(a in intensities(), seed in any::<u64>()) {
        check_seed_determinism(&model_from(&a).unwrap(), seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn invalid_intensities_rejected(a0 in 0.1f64..1.0, a2 in 0.1f64..1.0, off in 1e-6f64..0.1) {
        // a_1 must equal -(a_0 + a_2) within tolerance.
        prop_assert!(IntensityVector::new(vec![a0, -(a0 + a2) + off, a2], INTENSITY_TOL).is_err());
        prop_assert!(IntensityVector::new(vec![-a0, a0 - a2, a2], INTENSITY_TOL).is_err());
    }
}

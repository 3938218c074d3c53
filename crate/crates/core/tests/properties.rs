mod common;

use proptest::prelude::*;

use vla_core::diagnostics::{bound_check, jacobian_sigma, rank_one_sigma, run_norm_trace};
use vla_core::kernels::{sm_update_in_place, HeadConfig, KernelKind, PenaltyDirection};
use vla_core::linalg::{relative_frobenius_error, Matrix, Vector};
use vla_core::rng::seeded;
use vla_core::scan::{compose, make_element, RecurrenceElement};
use vla_core::stream::StreamSpec;
use vla_core::tasks::{gen_copy, gen_mqar, parse_line, recall_episode, InstanceLine, KeyGeometry, TokenLayout};

fn element(seed: u64, d: usize) -> RecurrenceElement {
    let mut rng = seeded(seed);
    let k = Vector::random_unit(&mut rng, d);
    let a = Vector::random_unit(&mut rng, d);
    let v = Vector::gaussian(&mut rng, d);
    make_element(&k, &a, &v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sherman_morrison_tracks_inverse(seed in any::<u64>(), d in 2usize..24, steps in 1usize..60, lambda0 in 0.01f64..10.0) {
        let mut rng = seeded(seed);
        let mut a = Matrix::scaled_identity(d, 1.0 / lambda0);
        let mut m = Matrix::scaled_identity(d, lambda0);
        for _ in 0..steps {
            let u = Vector::gaussian(&mut rng, d);
            sm_update_in_place(&mut a, &u, 1e-12).unwrap();
            m.add_outer(1.0, &u, &u);
        }
        prop_assert!(relative_frobenius_error(&a, &m.invert().unwrap()) < 1e-8);
    }

    #[test]
    fn sigma_matches_svd(seed in any::<u64>(), d in 2usize..16, c in -1.0f64..=1.0) {
        let mut rng = seeded(seed);
        let (k, a) = common::unit_pair(&mut rng, d, c);
        let mut m = Matrix::identity(d);
        m.add_outer(-1.0, &a, &k);
        prop_assert!((common::svd_sigma_max(&m) - jacobian_sigma(c).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sigma_bounds_and_monotone(c1 in -1.0f64..=1.0, c2 in -1.0f64..=1.0) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        let (s_lo, s_hi) = (jacobian_sigma(lo).unwrap(), jacobian_sigma(hi).unwrap());
        prop_assert!(s_hi <= s_lo + 1e-12);
        prop_assert!(s_hi >= 1.0);
        prop_assert!(s_lo <= 2.0 + 1e-12);
        prop_assert!((rank_one_sigma(hi, 1.0) - s_hi).abs() < 1e-12);
    }

    #[test]
    fn sigma_rejects_out_of_range(c in 1.0f64..10.0) {
        prop_assume!(c > 1.0);
        prop_assert!(jacobian_sigma(c).is_err());
        prop_assert!(jacobian_sigma(-c).is_err());
    }

    #[test]
    fn compose_is_associative(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), d in 1usize..12) {
        let (x, y, z) = (element(s1, d), element(s2, d), element(s3, d));
        let left = compose(&compose(&x, &y), &z);
        let right = compose(&x, &compose(&y, &z));
        prop_assert!(relative_frobenius_error(&left.transition, &right.transition) < 1e-10);
        prop_assert!(relative_frobenius_error(&left.injection, &right.injection) < 1e-10);
    }

    #[test]
    fn compose_applies_left_then_right(s1 in any::<u64>(), s2 in any::<u64>(), d in 1usize..12) {
        let (x, y) = (element(s1, d), element(s2, d));
        let s0 = Matrix::gaussian(&mut seeded(s1 ^ s2), d, d);
        let stepped = y.apply(&x.apply(&s0));
        prop_assert!(relative_frobenius_error(&compose(&x, &y).apply(&s0), &stepped) < 1e-10);
    }

    #[test]
    fn telescoped_bound_holds(seed in any::<u64>(), len in 1usize..300, mode in 0usize..5, kind in 0usize..2) {
        let cfg = HeadConfig { d_h: 16, u_mode: PenaltyDirection::ALL[mode], ..HeadConfig::default() };
        let kind = [KernelKind::Vla, KernelKind::DeltaNet][kind];
        let trace = run_norm_trace(kind, &cfg, StreamSpec::Gaussian, len, seed).unwrap();
        let report = bound_check(&trace, kind);
        prop_assert!(report.applicable);
        prop_assert_eq!(report.violations, 0);
        prop_assert_eq!(report.checked, len);
    }

    #[test]
    fn recall_is_deterministic(seed in any::<u64>(), n in 1usize..40, pad in 0usize..20) {
        let cfg = HeadConfig::default();
        let a = recall_episode(KernelKind::Vla, &cfg, n, KeyGeometry::RandomUnit, pad, true, seed).unwrap();
        let b = recall_episode(KernelKind::Vla, &cfg, n, KeyGeometry::RandomUnit, pad, true, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn orthonormal_recall_is_exact_up_to_d(seed in any::<u64>(), n in 1usize..=32) {
        let cfg = HeadConfig::default();
        let r = recall_episode(KernelKind::Vla, &cfg, n, KeyGeometry::Orthonormal, 0, false, seed).unwrap();
        prop_assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn mqar_instances_validate_and_round_trip(seed in any::<u64>(), n in 1usize..=32, extra in 0usize..40) {
        let layout = TokenLayout::default();
        let inst = gen_mqar(n, 3 * n + 1 + extra, &layout, seed).unwrap();
        inst.validate(&layout).unwrap();
        prop_assert_eq!(inst.tokens.len(), 3 * n + 1 + extra);
        prop_assert_eq!(parse_line(&inst.to_line()).unwrap(), InstanceLine::Mqar(inst));
    }

    #[test]
    fn copy_instances_round_trip(seed in any::<u64>(), h in 1usize..50) {
        let inst = gen_copy(h, &TokenLayout::default(), seed).unwrap();
        prop_assert_eq!(inst.tokens.len(), 2 * h + 1);
        prop_assert_eq!(parse_line(&inst.to_line()).unwrap(), InstanceLine::Copy(inst));
    }
}

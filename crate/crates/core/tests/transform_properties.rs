mod common;

use common::{complex_step_gradient, fd_derivative, rel_err};
use proptest::prelude::*;
use threshold_choice::{eval_transform, transform_gradient, TransformKind, TransformSpec};

fn kind() -> impl Strategy<Value = TransformKind> {
    prop::sample::select(TransformKind::ALL.to_vec())
}

fn spec_for(kind: TransformKind, alpha: f64) -> TransformSpec {
    TransformSpec::new(kind, alpha).unwrap()
}

fn f(spec: &TransformSpec, dt: f64) -> f64 {
    eval_transform(spec, dt).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn antisymmetric(kind in kind(), alpha in 0.05f64..15.0, dt in -200.0f64..200.0) {
        let s = spec_for(kind, alpha);
        prop_assert_eq!(f(&s, -dt), -f(&s, dt));
    }

    #[test]
    fn non_decreasing(kind in kind(), alpha in 0.05f64..15.0, a in -200.0f64..200.0, b in -200.0f64..200.0) {
        let s = spec_for(kind, alpha);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f(&s, lo) <= f(&s, hi));
    }

    #[test]
    fn damped(alpha in 0.05f64..15.0, dt in -200.0f64..200.0) {
        for kind in [TransformKind::Linear, TransformKind::Htf, TransformKind::Stf1, TransformKind::Stf2, TransformKind::Reverting] {
            let s = spec_for(kind, alpha);
            prop_assert!(f(&s, dt).abs() <= dt.abs(), "{} {} {}", kind, alpha, dt);
        }
    }

    #[test]
    fn stf1_approaches_htf(alpha in 0.05f64..15.0, k in 50.0f64..400.0, neg in any::<bool>()) {
        let dt = if neg { -k * alpha } else { k * alpha };
        let s = spec_for(TransformKind::Stf1, alpha);
        prop_assert!((f(&s, dt) - (dt - dt.signum() * alpha)).abs() < 1e-6);
    }

    #[test]
    fn stf2_gap_decays_like_inverse_square(alpha in 0.05f64..15.0, k in 50.0f64..400.0, neg in any::<bool>()) {
        // dt - sign * alpha - f = -alpha (1 - u / sqrt(u^2 + 1)) ~ -alpha / (2 u^2)
        let dt = if neg { -k * alpha } else { k * alpha };
        let s = spec_for(TransformKind::Stf2, alpha);
        let gap = (f(&s, dt) - (dt - dt.signum() * alpha)).abs();
        let predicted = alpha / (2.0 * k * k);
        prop_assert!((gap - predicted).abs() <= 1e-3 * predicted + 1e-12 * dt.abs(), "{gap} vs {predicted}");
    }

    #[test]
    fn reverting_becomes_linear(alpha in 0.05f64..15.0, extra in 20.0f64..200.0, neg in any::<bool>()) {
        let dt = if neg { -(alpha + extra) } else { alpha + extra };
        let s = spec_for(TransformKind::Reverting, alpha);
        prop_assert!((f(&s, dt) - dt).abs() < 1e-6);
    }

    #[test]
    fn htf_flat_inside_threshold(alpha in 0.05f64..15.0, frac in -0.999f64..0.999) {
        let s = spec_for(TransformKind::Htf, alpha);
        let dt = frac * alpha;
        prop_assert_eq!(f(&s, dt), 0.0);
        prop_assert_eq!(transform_gradient(&s, dt).unwrap().0, 0.0);
    }

    #[test]
    fn gradient_matches_complex_step(kind in kind(), alpha in 0.1f64..15.0, dt in -100.0f64..100.0) {
        let alpha = if kind == TransformKind::Power { 0.2 + alpha / 5.0 } else { alpha };
        prop_assume!(dt.abs() > 1e-2);
        prop_assume!(kind != TransformKind::Htf || dt.abs() > alpha);
        let (d_dt, d_alpha) = transform_gradient(&spec_for(kind, alpha), dt).unwrap();
        let (ref_dt, ref_alpha) = complex_step_gradient(kind, alpha, dt);
        prop_assert!(rel_err(d_dt, ref_dt) < 1e-6, "d/ddt {} vs {}", d_dt, ref_dt);
        if kind.has_alpha() {
            prop_assert!(rel_err(d_alpha, ref_alpha) < 1e-6, "d/dalpha {} vs {}", d_alpha, ref_alpha);
        }
    }

    #[test]
    fn gradient_matches_central_differences(kind in kind(), alpha in 0.1f64..15.0, dt in -100.0f64..100.0) {
        // real-valued differences lose digits to rounding in f; compare on the scale of f
        let alpha = if kind == TransformKind::Power { 0.2 + alpha / 5.0 } else { alpha };
        prop_assume!(dt.abs() > 1e-2);
        prop_assume!(kind != TransformKind::Htf || (dt.abs() - alpha).abs() > 1e-2);
        let s = spec_for(kind, alpha);
        let (d_dt, d_alpha) = transform_gradient(&s, dt).unwrap();
        let room = if kind == TransformKind::Htf { (dt.abs() - alpha).abs() } else { f64::INFINITY };
        let fd_dt = fd_derivative(|x| f(&s, x), dt, 1e-3 * dt.abs().min(room));
        prop_assert!((d_dt - fd_dt).abs() < 1e-6 * fd_dt.abs().max(1.0));
        if kind.has_alpha() {
            let fd_a = fd_derivative(|a| f(&spec_for(kind, a), dt), alpha, 1e-3 * alpha.min(room));
            prop_assert!((d_alpha - fd_a).abs() < 1e-6 * fd_a.abs().max(1.0));
        }
    }
}

#[test]
fn slopes_tend_to_one() {
    for kind in [TransformKind::Htf, TransformKind::Stf1, TransformKind::Stf2] {
        let s = spec_for(kind, 3.0);
        let mut previous_gap = f64::INFINITY;
        for dt in [10.0, 100.0, 1000.0, 10000.0] {
            let slope = (f(&s, dt + 0.5) - f(&s, dt - 0.5)) / 1.0;
            let gap = (1.0 - slope).abs();
            assert!(gap <= previous_gap, "{kind} at {dt}");
            previous_gap = gap;
        }
        assert!(previous_gap < 1e-6, "{kind}: {previous_gap}");
    }
}

use bundleflow_core::flow::Schedule;
use bundleflow_core::{BaseDomain, Mat, Signature, StencilKind};
use proptest::prelude::*;

fn spd(n: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| {
        let b = Mat::from_row_major(n, n, &v);
        b.transpose() * b + Mat::identity(n) * 0.5
    })
}

fn unimodular(n: usize) -> impl Strategy<Value = Mat> {
    spd(n).prop_map(move |m| m * m.det().powf(-1.0 / n as f64))
}

proptest! {
    #[test]
    fn inverse_round_trip(m in (1usize..=3).prop_flat_map(spd)) {
        let inv = m.inverse().unwrap();
        let n = m.rows();
        prop_assert!((m * inv - Mat::identity(n)).max_abs() < 1e-10);
    }

    #[test]
    fn sqrt_and_exp_are_consistent(m in (1usize..=3).prop_flat_map(spd)) {
        let r = m.sqrt_spd();
        prop_assert!((r * r - m).max_abs() < 1e-10 * (1.0 + m.max_abs()));
        let log = m.map_symmetric(f64::ln);
        prop_assert!((log.exp_symmetric() - m).max_abs() < 1e-10 * (1.0 + m.max_abs()));
        prop_assert!((log.trace().exp() - m.det()).abs() < 1e-9 * m.det());
    }

    #[test]
    fn seam_transport_round_trips(
        rho in (1usize..=3).prop_flat_map(unimodular),
        seed in proptest::collection::vec(-2.0..2.0f64, 9),
    ) {
        let n = rho.rows();
        let inv = rho.inverse().unwrap();
        let g = Mat::from_row_major(n, n, &seed[..n * n]).symmetrize();
        let a = Mat::from_row_major(n, 1, &seed[..n]);
        for (sig, v) in [(Signature::LowerLower, g), (Signature::UpperRows, a), (Signature::LowerRows, a), (Signature::Scalar, g)] {
            let there = sig.transport(&v, &rho, &inv, true);
            let back = sig.transport(&there, &rho, &inv, false);
            prop_assert!((back - v).max_abs() < 1e-10 * (1.0 + v.max_abs()));
        }
        // det G is continuous across the seam for |det ρ| = 1.
        let gs = g * g + Mat::identity(n);
        let carried = Signature::LowerLower.transport(&gs, &rho, &inv, true);
        prop_assert!((carried.det() - gs.det()).abs() < 1e-9 * gs.det());
    }

    #[test]
    fn stencils_differentiate_trigonometric_modes(k in 1i32..4, order in prop_oneof![Just(4usize), Just(6), Just(8)], phase in 0.0..6.3f64) {
        let size = 64;
        let period = 2.0;
        let domain = BaseDomain::grid(&[size], &[period]).unwrap().with_stencil_order(order).unwrap();
        let w = 2.0 * std::f64::consts::PI * k as f64 / period;
        let x = |i: usize| i as f64 * period / size as f64;
        let f: Vec<f64> = (0..size).map(|i| (w * x(i) + phase).sin()).collect();
        let d1 = domain.derive_scalar(&f, 0, StencilKind::First).unwrap();
        let d2 = domain.derive_scalar(&f, 0, StencilKind::Second).unwrap();
        // Truncation error of a centred stencil scales like (w h)^order.
        let tol = (w * period / size as f64).powi(order as i32) + 1e-10;
        for i in 0..size {
            prop_assert!((d1[i] - w * (w * x(i) + phase).cos()).abs() < tol * w);
            prop_assert!((d2[i] + w * w * f[i]).abs() < tol * w * w);
        }
    }

    #[test]
    fn schedule_stops_are_sorted_and_end_at_the_target(
        anchor in 0.5..2.0f64,
        density in 1.0..64.0f64,
        start in 0.5..4.0f64,
        span in 0.01..8.0f64,
        extra in proptest::collection::vec(0.1..20.0f64, 0..4),
    ) {
        let end = start + span;
        let stops = Schedule { anchor, per_log_unit: density, extra }.stops(start, end).unwrap();
        prop_assert_eq!(*stops.last().unwrap(), end);
        prop_assert!(stops.iter().all(|&t| t > start && t <= end));
        prop_assert!(stops.windows(2).all(|w| w[0] < w[1]));
    }
}

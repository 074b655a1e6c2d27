use bundleflow_core::curvature::{curvature_package, scalar_total_field};
use bundleflow_core::oracle::{default_probe_radius, total_space_oracle};
use bundleflow_core::perturb::analytic_state;
use bundleflow_core::solitons::make_soliton;
use bundleflow_core::{BaseDomain, BundleState, Mat, SolitonSpec};

/// Worst mismatch over `nodes`, relative to the largest oracle component at each node.
fn worst_relative(state: &BundleState, nodes: impl Iterator<Item = usize>) -> f64 {
    let pkg = curvature_package(state).unwrap();
    let probe = default_probe_radius(state);
    let mut worst: f64 = 0.0;
    for node in nodes {
        let o = total_space_oracle(state, node, probe).unwrap();
        let c = &pkg.nodes[node];
        let scale = o.ricci_fiber.max_abs().max(o.ricci_mixed.max_abs()).max(o.ricci_basecomp.max_abs()).max(o.scalar_total.abs());
        let diff = (c.ricci_fiber - o.ricci_fiber)
            .max_abs()
            .max((c.ricci_mixed - o.ricci_mixed).max_abs())
            .max((c.ricci_basecomp - o.ricci_basecomp).max_abs())
            .max((c.scalar_total - o.scalar_total).abs());
        worst = worst.max(diff / scale);
    }
    worst
}

#[test]
fn twisted_line_matches_the_total_space() {
    let domain = BaseDomain::grid(&[256], &[1.0])
        .unwrap()
        .with_holonomy(Mat::diag(&[1.5, 1.0 / 1.5]))
        .unwrap()
        .with_stencil_order(8)
        .unwrap();
    for seed in [11, 12] {
        let state = analytic_state(domain.clone(), 2, seed, 0.3).unwrap();
        // Includes the nodes next to the seam on both sides.
        let err = worst_relative(&state, [0, 1, 2, 77, 128, 253, 254, 255].into_iter());
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn torus_with_background_curvature_matches_the_total_space() {
    let domain = BaseDomain::grid(&[96, 96], &[1.0, 1.0]).unwrap().with_stencil_order(8).unwrap();
    let state = analytic_state(domain, 1, 21, 0.3).unwrap();
    assert!(state.connection.background.max_abs() > 0.0);
    let err = worst_relative(&state, (0..9216).step_by(997));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn three_fibers_over_a_line() {
    let rho = Mat::diag(&[1.2, 1.0, 1.0 / 1.2]);
    let domain = BaseDomain::grid(&[256], &[1.0]).unwrap().with_holonomy(rho).unwrap().with_stencil_order(8).unwrap();
    let state = analytic_state(domain, 3, 5, 0.2).unwrap();
    let err = worst_relative(&state, (0..256).step_by(31));
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn flat_state_has_no_curvature() {
    let domain = BaseDomain::grid(&[16, 16], &[1.0, 2.0]).unwrap();
    let state = BundleState::flat(domain, 2, 1.0).unwrap();
    for r in scalar_total_field(&state).unwrap() {
        assert!(r.abs() < 1e-12, "{r}");
    }
}

#[test]
fn oracle_confirms_the_nil_scalar_curvature() {
    // R = -1/(6t) on the Nil soliton, computed without the reduced formulas.
    for t in [1.0, 2.5] {
        let state = make_soliton(&SolitonSpec::nil(32, 4.0, 1.0), t).unwrap();
        let o = total_space_oracle(&state, 100, default_probe_radius(&state)).unwrap();
        assert!((o.scalar_total + 1.0 / (6.0 * t)).abs() < 1e-8, "t = {t}: {}", o.scalar_total);
    }
}

#[test]
fn oracle_rejects_oversized_probes() {
    let state = analytic_state(BaseDomain::grid(&[64], &[1.0]).unwrap(), 1, 1, 0.1).unwrap();
    assert!(total_space_oracle(&state, 3, 1.0).is_err());
}

use bundleflow_core::flow::{advance_to, integrate, rhs_reduced, Checkpoint, Schedule, Tangent, Trajectory};
use bundleflow_core::perturb::analytic_state;
use bundleflow_core::{BaseDomain, BundleState, Error, Mat, StepControl};

#[test]
fn flat_flow_is_exactly_stationary() {
    let state = BundleState::flat(BaseDomain::grid(&[16], &[1.0]).unwrap(), 2, 1.0).unwrap();
    let traj = integrate(state.clone(), &rhs_reduced, 2.0, &StepControl::default(), &Schedule::default()).unwrap();
    let last = traj.last();
    assert_eq!(last.t, 2.0);
    assert_eq!(last.fiber_metric, state.fiber_metric);
    assert_eq!(last.base_metric, state.base_metric);
}

#[test]
fn schedule_is_logarithmic_and_lands_on_extras() {
    let s = Schedule { anchor: 1.0, per_log_unit: 2.0, extra: vec![1.3, 5.0] };
    let stops = s.stops(1.0, 3.0).unwrap();
    assert_eq!(*stops.last().unwrap(), 3.0);
    assert!(stops.contains(&1.3));
    assert!(!stops.contains(&5.0));
    assert!(stops.windows(2).all(|w| w[0] < w[1]));
    assert!((stops[0] - 1.3).abs() < 1e-15);
    assert!((stops[1] - 0.5f64.exp()).abs() < 1e-15);
    assert!(s.stops(0.0, 1.0).is_err());
}

/// Cubic in `t` per field entry, with its exact derivative.
fn cubic_state(base: &BundleState, t: f64) -> (BundleState, Tangent) {
    let mut s = base.clone();
    s.t = t;
    let p = 1.0 + 0.1 * t + 0.05 * t * t - 0.01 * t * t * t;
    let dp = 0.1 + 0.1 * t - 0.03 * t * t;
    for m in &mut s.fiber_metric {
        *m = Mat::identity(2) * p;
    }
    let rate = Tangent {
        fiber: vec![Mat::identity(2) * dp; s.node_count()],
        connection: vec![Mat::zeros(2, 1); s.node_count()],
        base: vec![Mat::zeros(1, 1); s.node_count()],
        potential: None,
    };
    (s, rate)
}

#[test]
fn hermite_interpolation_is_exact_for_cubics() {
    let base = BundleState::flat(BaseDomain::grid(&[8], &[1.0]).unwrap(), 2, 1.0).unwrap();
    let cps: Vec<Checkpoint> = [1.0, 2.0]
        .iter()
        .map(|&t| {
            let (state, rate) = cubic_state(&base, t);
            Checkpoint { state, rate }
        })
        .collect();
    let traj = Trajectory::new(cps).unwrap();
    for t in [1.25, 1.5, 1.9] {
        let got = traj.interpolate(t).unwrap();
        let (want, _) = cubic_state(&base, t);
        assert!((got.fiber_metric[3] - want.fiber_metric[3]).max_abs() < 1e-14);
    }
    assert!(matches!(traj.interpolate(2.5), Err(Error::WindowNotCovered { .. })));
}

#[test]
fn trajectory_times_must_increase() {
    let a = BundleState::flat(BaseDomain::grid(&[8], &[1.0]).unwrap(), 1, 1.0).unwrap();
    let rate = rhs_reduced(&a).unwrap();
    let cp = Checkpoint { state: a, rate };
    assert!(Trajectory::new(vec![cp.clone(), cp]).is_err());
}

#[test]
fn advance_lands_exactly_on_the_stop() {
    let rho = Mat::diag(&[1.5, 1.0 / 1.5]);
    let domain = BaseDomain::grid(&[64], &[1.0]).unwrap().with_holonomy(rho).unwrap();
    let state = analytic_state(domain, 2, 3, 0.2).unwrap();
    let before = state.validate().seam_defect;
    let mut steps = 0;
    let next = advance_to(state, &rhs_reduced, 1.001, &StepControl::default(), &mut steps).unwrap();
    assert_eq!(next.t, 1.001);
    assert!(steps > 0);
    let v = next.validate();
    assert!(v.is_valid());
    // The defect is an extrapolation error, so it only stays at the scale of
    // the initial one as the fields move.
    assert!(v.seam_defect < 2.0 * before, "{} vs {before}", v.seam_defect);
}

#[test]
fn step_control_is_checked() {
    assert!(StepControl { safety: 0.0, ..StepControl::default() }.check().is_err());
    assert!(StepControl { dt_max: Some(-1.0), ..StepControl::default() }.check().is_err());
    assert!(StepControl::default().check().is_ok());
}

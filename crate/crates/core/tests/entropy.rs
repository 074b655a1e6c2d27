use bundleflow_core::experiments::{run_mass_conservation, run_monotonicity, MonotonicityOptions};
use bundleflow_core::functionals::{dissipation, f_functional, fbar_identity_check, wplus_functional};
use bundleflow_core::perturb::{analytic_state, perturb_fiber, smooth_scalar};
use bundleflow_core::solitons::make_soliton;
use bundleflow_core::{BaseDomain, BundleState, Convention, DensityField, FunctionalKind, Mat, SolitonSpec, StepControl};

fn twisted() -> BaseDomain {
    BaseDomain::grid(&[256], &[1.0]).unwrap().with_holonomy(Mat::diag(&[1.5, 1.0 / 1.5])).unwrap().with_stencil_order(8).unwrap()
}

#[test]
fn fbar_matches_f_on_seeded_states() {
    for seed in 0..3 {
        let state = analytic_state(twisted(), 2, seed, 0.3).unwrap();
        let fbar = smooth_scalar(&state, seed + 50, 0.5).unwrap();
        let (lhs, rhs, defect) = fbar_identity_check(&state, &fbar).unwrap();
        assert!(defect.abs() < 1e-8, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn flat_state_with_constant_potential_has_zero_f() {
    let state = BundleState::flat(BaseDomain::grid(&[32], &[2.0]).unwrap(), 2, 1.0).unwrap();
    let f = vec![0.3; 32];
    assert!(f_functional(&state, &f).unwrap().abs() < 1e-14);
    assert!(dissipation(&state, &f, 1.0, FunctionalKind::F).unwrap().abs() < 1e-20);
}

#[test]
fn f_dissipation_is_nonnegative() {
    for seed in 0..4 {
        let state = analytic_state(twisted(), 2, seed, 0.3).unwrap();
        let f = smooth_scalar(&state, seed, 0.4).unwrap();
        assert!(dissipation(&state, &f, 1.0, FunctionalKind::F).unwrap() >= 0.0);
    }
}

#[test]
fn wplus_rejects_an_unnormalized_density() {
    let state = make_soliton(&SolitonSpec::sol(64, 4.0, &[1.0, -1.0]), 1.0).unwrap();
    let f = vec![0.0; 64];
    assert!(wplus_functional(&state, &f, 1.0).is_err());
    let u = DensityField::uniform(&state, Convention::Expander).unwrap();
    assert!(wplus_functional(&state, &u.potential(), 1.0).is_ok());
}

fn perturbed_sol() -> BundleState {
    perturb_fiber(&make_soliton(&SolitonSpec::sol(64, 8.0, &[1.0, -1.0]), 1.0).unwrap(), 1e-2, 7).unwrap()
}

#[test]
fn f_derivative_matches_dissipation_on_a_short_run() {
    let opts = MonotonicityOptions { criterion: 5, ..MonotonicityOptions::default() };
    let report = run_monotonicity(&perturbed_sol(), 1.5, FunctionalKind::F, &opts).unwrap();
    assert!(report.passed(), "{:?}", report.verdicts);
    assert!(!report.records.is_empty());
}

#[test]
fn w_without_blowup_time_is_an_error() {
    let opts = MonotonicityOptions::default();
    assert!(run_monotonicity(&perturbed_sol(), 1.5, FunctionalKind::W, &opts).is_err());
}

#[test]
fn backward_solve_conserves_mass() {
    let report =
        run_mass_conservation(&perturbed_sol(), 2.0, &[Convention::Plain, Convention::Expander], &StepControl::default(), 32.0, 1e-6)
            .unwrap();
    assert!(report.passed(), "{:?}", report.verdicts);
    assert_eq!(report.verdicts.len(), 2);
}

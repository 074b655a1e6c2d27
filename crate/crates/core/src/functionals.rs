//! Modified F, W and W+ entropies, their dissipation identities, the backward
//! conjugate-heat solver, the Jensen lower bound and the F̄ = F cross-check.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curvature::Jets;
use crate::error::{Error, Result};
use crate::flow::{advance_to_with, laplacian, Checkpoint, StepControl, Tangent, Trajectory};
use crate::linalg::Mat;
use crate::math;
use crate::solitons::ScalarJets;
use crate::state::{BundleState, Convention, DensityField};

/// Normalized-mass tolerance for W and W+ evaluation.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionalKind {
    #[serde(rename = "F")]
    F,
    #[serde(rename = "W")]
    W,
    #[serde(rename = "W+")]
    WPlus,
}

impl FunctionalKind {
    pub fn name(self) -> &'static str {
        match self {
            FunctionalKind::F => "F",
            FunctionalKind::W => "W",
            FunctionalKind::WPlus => "W+",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "F" | "f" => Some(FunctionalKind::F),
            "W" | "w" => Some(FunctionalKind::W),
            "W+" | "w+" | "wplus" => Some(FunctionalKind::WPlus),
            _ => None,
        }
    }
}

/// One sample of a functional along a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSample {
    pub t: f64,
    pub value: f64,
    pub dissipation: f64,
    /// Centred difference `(v(t+δ) − v(t−δ)) / 2δ`, when the neighbours were sampled.
    pub fd_derivative: Option<f64>,
    pub mass: f64,
}

/// Pointwise `|∇f|² + R − ¼ g^{αβ} tr(G⁻¹G_α G⁻¹G_β) − ¼ |F|²`.
pub fn entropy_integrand(state: &BundleState, f: &[f64]) -> Result<Vec<f64>> {
    let jets = Jets::new(state)?;
    let fj = ScalarJets::new(&state.domain, f)?;
    let n = state.base_dim();
    (0..state.node_count())
        .map(|node| {
            let j = jets.node(node)?;
            let df = fj.gradient(node);
            let mut grad2 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    grad2 += j.gi[(a, b)] * df[a] * df[b];
                }
            }
            Ok(grad2 + j.scalar_base - 0.25 * j.fiber_energy() - 0.25 * j.f_norm2())
        })
        .collect()
}

fn weights_from(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| math::exp(-v)).collect()
}

fn check_mass(state: &BundleState, f: &[f64], convention: Convention) -> Result<f64> {
    let mass = convention.weight(state.base_dim(), state.t) * state.integrate(&weights_from(f))?;
    if !((mass - 1.0).abs() <= MASS_TOLERANCE) {
        return Err(Error::MassViolation { mass });
    }
    Ok(mass)
}

/// `F = ∫ (|∇f|² + R − ¼E − ¼|F|²) e^{-f} dvol`.
pub fn f_functional(state: &BundleState, f: &[f64]) -> Result<f64> {
    let integrand = entropy_integrand(state, f)?;
    let w = weights_from(f);
    state.integrate(&integrand.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>())
}

/// `W = ∫ [τ(|∇f|² + R − ¼E − ¼|F|²) + f − n] (4πτ)^{-n/2} e^{-f} dvol`.
pub fn w_functional(state: &BundleState, f: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("τ must be positive, got {tau}")));
    }
    check_mass(state, f, Convention::Shrinker { blowup_time: state.t + tau })?;
    let n = state.base_dim() as f64;
    let integrand = entropy_integrand(state, f)?;
    let dens: Vec<f64> = integrand
        .iter()
        .zip(f)
        .map(|(q, fv)| (tau * q + fv - n) * math::exp(-fv))
        .collect();
    Ok(math::powf(4.0 * math::PI * tau, -n / 2.0) * state.integrate(&dens)?)
}

/// `W+ = ∫ [t(|∇f|² + R − ¼E − ¼|F|²) − f + n] (4πt)^{-n/2} e^{-f} dvol`.
pub fn wplus_functional(state: &BundleState, f: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let mut at_t = state.clone();
    at_t.t = t;
    check_mass(&at_t, f, Convention::Expander)?;
    let n = state.base_dim() as f64;
    let integrand = entropy_integrand(state, f)?;
    let dens: Vec<f64> = integrand
        .iter()
        .zip(f)
        .map(|(q, fv)| (t * q - fv + n) * math::exp(-fv))
        .collect();
    Ok(math::powf(4.0 * math::PI * t, -n / 2.0) * state.integrate(&dens)?)
}

/// Value of a functional with the parameter implied by `convention` at `state.t`.
pub fn functional_value(state: &BundleState, f: &[f64], which: FunctionalKind, convention: Convention) -> Result<f64> {
    match (which, convention) {
        (FunctionalKind::F, _) => f_functional(state, f),
        (FunctionalKind::W, Convention::Shrinker { blowup_time }) => w_functional(state, f, blowup_time - state.t),
        (FunctionalKind::WPlus, _) => wplus_functional(state, f, state.t),
        (FunctionalKind::W, _) => Err(Error::InvalidArgument("W needs the shrinker convention".into())),
    }
}

/// Potential term `R − ¼E − ½|F|²` of the conjugate heat equation.
pub fn conjugate_heat_potential(state: &BundleState) -> Result<Vec<f64>> {
    let jets = Jets::new(state)?;
    (0..state.node_count())
        .map(|node| {
            let j = jets.node(node)?;
            Ok(j.scalar_base - 0.25 * j.fiber_energy() - 0.5 * j.f_norm2())
        })
        .collect()
}

fn convention_shift(convention: Convention, n: usize, t: f64) -> f64 {
    let n = n as f64;
    match convention {
        Convention::Plain => 0.0,
        Convention::Shrinker { blowup_time } => -n / (2.0 * (blowup_time - t)),
        Convention::Expander => n / (2.0 * t),
    }
}

/// `u̇ = −∇²u + (R − ¼E − ½|F|² + shift) u`, with shift `0`, `−n/2τ` or `+n/2t`.
pub fn conjugate_heat_rhs(state: &BundleState, u: &[f64], convention: Convention) -> Result<Vec<f64>> {
    let potential = conjugate_heat_potential(state)?;
    heat_rhs_with(state, &potential, u, convention)
}

fn heat_rhs_with(state: &BundleState, potential: &[f64], u: &[f64], convention: Convention) -> Result<Vec<f64>> {
    let lap = laplacian(state, u)?;
    let shift = convention_shift(convention, state.base_dim(), state.t);
    Ok(lap
        .iter()
        .zip(potential)
        .zip(u)
        .map(|((l, p), uv)| -l + (p + shift) * uv)
        .collect())
}

/// Solves the conjugate heat equation backward along `traj` from `final_u`
/// (given at the last checkpoint). Returns one density per checkpoint.
///
/// Mass is not renormalized; it is conserved by the scheme itself.
pub fn solve_f_backward(traj: &Trajectory, final_u: &DensityField, control: &StepControl) -> Result<Vec<DensityField>> {
    control.check()?;
    let convention = final_u.convention;
    let count = traj.checkpoints.len();
    let mut out = vec![final_u.clone(); count];
    let mut u = final_u.values.clone();
    let cache = core::cell::RefCell::new(Vec::<(f64, BundleState, Vec<f64>)>::new());
    let frame = |t: f64| -> Result<(BundleState, Vec<f64>)> {
        if let Some((_, s, p)) = cache.borrow().iter().find(|(tt, _, _)| *tt == t) {
            return Ok((s.clone(), p.clone()));
        }
        let s = traj.interpolate(t)?;
        let p = conjugate_heat_potential(&s)?;
        let mut c = cache.borrow_mut();
        if c.len() > 4 {
            c.remove(0);
        }
        c.push((t, s.clone(), p.clone()));
        Ok((s, p))
    };
    let rhs = |t: f64, u: &[f64]| -> Result<Vec<f64>> {
        let (s, p) = frame(t)?;
        heat_rhs_with(&s, &p, u, convention)
    };
    for k in (1..count).rev() {
        let t_hi = traj.checkpoints[k].state.t;
        let t_lo = traj.checkpoints[k - 1].state.t;
        let mut t = t_hi;
        while t > t_lo {
            let remaining = t - t_lo;
            let mut dt = control.cfl_step(&traj.checkpoints[k].state).min(control.cfl_step(&traj.checkpoints[k - 1].state));
            if dt >= remaining || remaining - dt < 1e-3 * dt {
                dt = remaining;
            }
            let mut rejects = 0;
            loop {
                let k1 = rhs(t, &u)?;
                let mid: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a - 0.5 * dt * b).collect();
                let k2 = rhs(t - 0.5 * dt, &mid)?;
                let mid: Vec<f64> = u.iter().zip(&k2).map(|(a, b)| a - 0.5 * dt * b).collect();
                let k3 = rhs(t - 0.5 * dt, &mid)?;
                let end: Vec<f64> = u.iter().zip(&k3).map(|(a, b)| a - dt * b).collect();
                let k4 = rhs(t - dt, &end)?;
                let next: Vec<f64> = (0..u.len())
                    .map(|i| u[i] - dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect();
                if next.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    let landed = dt == remaining;
                    u = next;
                    t = if landed { t_lo } else { t - dt };
                    break;
                }
                rejects += 1;
                dt *= 0.5;
                if dt < control.dt_min || rejects > control.max_rejects {
                    return Err(Error::PositivityLost { t });
                }
            }
        }
        out[k - 1] = DensityField { values: u.clone(), convention };
    }
    Ok(out)
}

/// Backward solve that re-integrates each checkpoint interval with the same
/// deterministic steps and steps `u` through those exact flow states.
///
/// `rhs` and `control` must be the ones that produced `traj`. Only one interval
/// of fine states is held in memory at a time.
pub fn solve_f_backward_recompute(
    traj: &Trajectory,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    control: &StepControl,
    final_u: &DensityField,
) -> Result<Vec<DensityField>> {
    let count = traj.checkpoints.len();
    let mut out = vec![final_u.clone(); count];
    let mut u = final_u.clone();
    for k in (1..count).rev() {
        let start = &traj.checkpoints[k - 1];
        let target = &traj.checkpoints[k];
        let mut fine: Vec<Checkpoint> = Vec::new();
        let mut steps = 0;
        let end = advance_to_with(start.state.clone(), rhs, target.state.t, control, &mut steps, &mut |s, r| {
            fine.push(Checkpoint { state: s.clone(), rate: r.clone() })
        })?;
        fine.push(Checkpoint { state: end, rate: target.rate.clone() });
        let fine = Trajectory::new(fine)?;
        let solved = solve_f_backward(&fine, &u, control)?;
        u = solved[0].clone();
        out[k - 1] = u.clone();
    }
    Ok(out)
}

/// Pointwise squared norms `(|X|², |Y|², Z)` entering the dissipation identities.
struct DissipationTerms {
    x2: f64,
    y2: f64,
    z: Mat,
    g: Mat,
    gi: Mat,
    f2: f64,
}

fn dissipation_terms(state: &BundleState, f: &[f64]) -> Result<Vec<DissipationTerms>> {
    let jets = Jets::new(state)?;
    let fj = ScalarJets::new(&state.domain, f)?;
    let n = state.base_dim();
    let grid = state.domain.is_grid();
    (0..state.node_count())
        .map(|node| {
            let j = jets.node(node)?;
            let df = fj.gradient(node);
            let mut x = j.rhs_fiber();
            for a in 0..n {
                for b in 0..n {
                    x -= j.d_big_g[a] * (j.gi[(a, b)] * df[b]);
                }
            }
            let x2 = (j.big_gi * x * j.big_gi * x).trace();
            let mut y = if grid { j.rhs_connection() * -1.0 } else { Mat::zeros(j.nf, n) };
            for i in 0..j.nf {
                for a in 0..n {
                    let mut v = 0.0;
                    for c in 0..n {
                        for d in 0..n {
                            v += j.gi[(c, d)] * df[c] * j.f[i][a][d];
                        }
                    }
                    y[(i, a)] -= v;
                }
            }
            let y2 = if j.nf > 0 && n > 0 { (j.big_g * y * j.gi * y.transpose()).trace() } else { 0.0 };
            let z = j.ricci_base - j.dirichlet_tensor() * 0.25 - j.f_base_square() * 0.5 + fj.hessian(node, &j.gamma);
            Ok(DissipationTerms { x2, y2, z: z.symmetrize(), g: j.g, gi: j.gi, f2: j.f_norm2() })
        })
        .collect()
}

/// Right-hand side of the monotonicity identity of `which`.
///
/// `parameter` is τ for W and t for W+; it is ignored for F. The W value keeps
/// the final negative `|F|²` term; the W+ value keeps the positive one.
pub fn dissipation(state: &BundleState, f: &[f64], parameter: f64, which: FunctionalKind) -> Result<f64> {
    let terms = dissipation_terms(state, f)?;
    let n = state.base_dim() as f64;
    let norm2 = |m: &Mat, gi: &Mat| (*gi * *m * *gi * *m).trace();
    let dens: Vec<f64> = terms
        .iter()
        .zip(f)
        .map(|(d, fv)| {
            let e = math::exp(-fv);
            let v = match which {
                FunctionalKind::F => 0.5 * d.x2 + d.y2 + 2.0 * norm2(&d.z, &d.gi),
                FunctionalKind::W => {
                    let tau = parameter;
                    let zz = d.z - d.g * (0.5 / tau);
                    0.5 * tau * d.x2 + tau * d.y2 + 2.0 * tau * norm2(&zz, &d.gi) - 0.25 * d.f2
                }
                FunctionalKind::WPlus => {
                    let t = parameter;
                    let zz = d.z + d.g * (0.5 / t);
                    0.5 * t * d.x2 + t * d.y2 + 2.0 * t * norm2(&zz, &d.gi) + 0.25 * d.f2
                }
            };
            v * e
        })
        .collect();
    let weight = match which {
        FunctionalKind::F => 1.0,
        _ => math::powf(4.0 * math::PI * parameter, -n / 2.0),
    };
    Ok(weight * state.integrate(&dens)?)
}

/// `F̄(f̄) = ∫ (|∇f̄|² + R̄) e^{-f̄} √det G dvol` against `F(f̄ − ln √det G)`.
/// Returns `(F̄, F, F̄ − F)`.
pub fn fbar_identity_check(state: &BundleState, fbar: &[f64]) -> Result<(f64, f64, f64)> {
    let jets = Jets::new(state)?;
    let fj = ScalarJets::new(&state.domain, fbar)?;
    let n = state.base_dim();
    let det = state.det_g_field();
    let mut dens = Vec::with_capacity(state.node_count());
    for node in 0..state.node_count() {
        let j = jets.node(node)?;
        let df = fj.gradient(node);
        let mut grad2 = 0.0;
        for a in 0..n {
            for b in 0..n {
                grad2 += j.gi[(a, b)] * df[a] * df[b];
            }
        }
        dens.push((grad2 + j.scalar_total()) * math::exp(-fbar[node]) * math::sqrt(det[node]));
    }
    let lhs = state.integrate(&dens)?;
    let f: Vec<f64> = fbar.iter().zip(&det).map(|(fb, d)| fb - 0.5 * math::ln(*d)).collect();
    let rhs = f_functional(state, &f)?;
    Ok((lhs, rhs, lhs - rhs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JensenBound {
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
}

/// Lower bound `t R̄_min + n + (n/2) ln 4π − ln(t^{-n/2} vol)` for W+.
pub fn jensen_bound(state: &BundleState, f: &[f64], t: f64) -> Result<JensenBound> {
    let value = wplus_functional(state, f, t)?;
    let n = state.base_dim() as f64;
    let r_min = crate::curvature::scalar_total_field(state)?.into_iter().fold(f64::INFINITY, f64::min);
    let vol = state.volume()?;
    let bound = t * r_min + n + 0.5 * n * math::ln(4.0 * math::PI) - math::ln(math::powf(t, -n / 2.0) * vol);
    Ok(JensenBound { value, bound, margin: value - bound })
}

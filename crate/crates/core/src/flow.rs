//! Method-of-lines integration of the reduced flow and its `f`-coupled variant.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curvature::Jets;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;
use crate::solitons::ScalarJets;
use crate::state::{BundleState, DensityField};

/// Time derivative of the fields. `potential` is only filled by the coupled flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub fiber: Vec<Mat>,
    /// Update of the periodic part of the connection.
    pub connection: Vec<Mat>,
    pub base: Vec<Mat>,
    pub potential: Option<Vec<f64>>,
}

impl Tangent {
    pub fn max_abs(&self) -> f64 {
        let m = |v: &[Mat]| v.iter().map(Mat::max_abs).fold(0.0, f64::max);
        let p = self.potential.as_ref().map_or(0.0, |p| p.iter().fold(0.0, |a: f64, b| a.max(b.abs())));
        m(&self.fiber).max(m(&self.connection)).max(m(&self.base)).max(p)
    }
}

/// Right-hand side of the reduced flow: heat flow for `G`, Yang–Mills type flow
/// for `A`, Ricci type flow for `g`.
pub fn rhs_reduced(state: &BundleState) -> Result<Tangent> {
    let jets = Jets::new(state)?;
    let nodes = state.node_count();
    let mut out = Tangent {
        fiber: Vec::with_capacity(nodes),
        connection: Vec::with_capacity(nodes),
        base: Vec::with_capacity(nodes),
        potential: None,
    };
    let grid = state.domain.is_grid();
    for node in 0..nodes {
        let j = jets.node(node)?;
        out.fiber.push(j.rhs_fiber());
        out.connection.push(if grid { j.rhs_connection() } else { Mat::zeros(j.nf, j.n) });
        out.base.push(j.rhs_base());
    }
    Ok(out)
}

/// Lie-derivative corrections that turn the reduced flow into the `f`-coupled gradient flow.
pub fn coupling_terms(state: &BundleState, f: &[f64]) -> Result<Tangent> {
    let jets = Jets::new(state)?;
    let fj = ScalarJets::new(&state.domain, f)?;
    let n = state.base_dim();
    let nodes = state.node_count();
    let mut out = Tangent { fiber: vec![], connection: vec![], base: vec![], potential: None };
    for node in 0..nodes {
        let j = jets.node(node)?;
        let df = fj.gradient(node);
        let mut fiber = Mat::zeros(j.nf, j.nf);
        let mut conn = Mat::zeros(j.nf, n);
        for a in 0..n {
            for b in 0..n {
                fiber -= j.d_big_g[a] * (j.gi[(a, b)] * df[b]);
            }
        }
        for i in 0..j.nf {
            for a in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for d in 0..n {
                        v += j.gi[(c, d)] * df[c] * j.f[i][a][d];
                    }
                }
                conn[(i, a)] = v;
            }
        }
        out.fiber.push(fiber);
        out.connection.push(conn);
        out.base.push(fj.hessian(node, &j.gamma) * -2.0);
    }
    Ok(out)
}

/// Right-hand side of the `f`-coupled gradient flow, including `ḟ`.
pub fn rhs_coupled(state: &BundleState, density: &DensityField) -> Result<Tangent> {
    let f = density.potential();
    let mut out = rhs_reduced(state)?;
    let corr = coupling_terms(state, &f)?;
    for node in 0..state.node_count() {
        out.fiber[node] += corr.fiber[node];
        out.connection[node] += corr.connection[node];
        out.base[node] += corr.base[node];
    }
    let jets = Jets::new(state)?;
    let lap = laplacian(state, &f)?;
    let mut fdot = Vec::with_capacity(state.node_count());
    for (node, l) in lap.iter().enumerate() {
        let j = jets.node(node)?;
        fdot.push(-j.scalar_base + 0.25 * j.fiber_energy() + 0.5 * j.f_norm2() - l);
    }
    if !state.domain.is_grid() {
        out.connection = vec![Mat::zeros(state.fiber_dim, state.base_dim()); state.node_count()];
    }
    out.potential = Some(fdot);
    Ok(out)
}

/// Laplace–Beltrami operator in divergence form `|g|^{-1/2} ∂_α(|g|^{1/2} g^{αβ} ∂_β u)`.
///
/// The divergence form makes `Σ ∇²u dvol` vanish identically on the grid.
pub fn laplacian(state: &BundleState, u: &[f64]) -> Result<Vec<f64>> {
    let domain = &state.domain;
    let nodes = state.node_count();
    if !domain.is_grid() {
        return Ok(vec![0.0; nodes]);
    }
    let n = state.base_dim();
    let vol = state.volume_element();
    let du: Vec<Vec<f64>> = (0..n)
        .map(|a| domain.derive_scalar(u, a, crate::domain::StencilKind::First))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; nodes];
    for a in 0..n {
        let mut flux = vec![0.0; nodes];
        for node in 0..nodes {
            let gi = state.base_metric[node].inverse().ok_or(Error::SingularMetric { node })?;
            let mut v = 0.0;
            for b in 0..n {
                v += gi[(a, b)] * du[b][node];
            }
            flux[node] = vol[node] * v;
        }
        let div = domain.derive_scalar(&flux, a, crate::domain::StencilKind::First)?;
        for node in 0..nodes {
            out[node] += div[node] / vol[node];
        }
    }
    Ok(out)
}

/// Step-size control for the explicit integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Parabolic CFL factor `c` in `dt ≤ c · h² · min λ(g)`.
    pub safety: f64,
    pub dt_min: f64,
    pub max_rejects: usize,
    /// Optional hard cap on the step.
    pub dt_max: Option<f64>,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { safety: 0.2, dt_min: 1e-12, max_rejects: 40, dt_max: None }
    }
}

impl StepControl {
    pub fn check(&self) -> Result<()> {
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("safety must lie in (0, 1], got {}", self.safety)));
        }
        if !(self.dt_min > 0.0) {
            return Err(Error::InvalidArgument(format!("dt_min must be positive, got {}", self.dt_min)));
        }
        if let Some(cap) = self.dt_max {
            if !(cap > 0.0) {
                return Err(Error::InvalidArgument("dt_max must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parabolic CFL limit for the state (`h² → 1` in homogeneous mode).
    pub fn cfl_step(&self, state: &BundleState) -> f64 {
        let h = state.domain.min_spacing();
        let h2 = if h.is_finite() { h * h } else { 1.0 };
        let lam = state.base_metric.iter().map(Mat::min_eigenvalue).fold(f64::INFINITY, f64::min);
        let dt = self.safety * h2 * lam;
        match self.dt_max {
            Some(cap) => dt.min(cap),
            None => dt,
        }
    }
}

/// `state + dt · k` (the potential component is ignored).
pub fn advance(state: &BundleState, k: &Tangent, dt: f64) -> BundleState {
    let mut next = state.clone();
    for node in 0..state.node_count() {
        next.fiber_metric[node] += k.fiber[node] * dt;
        next.connection.periodic[node] += k.connection[node] * dt;
        next.base_metric[node] += k.base[node] * dt;
    }
    next.t = state.t + dt;
    next
}

/// One classical four-stage Runge–Kutta step, without acceptance checks.
pub fn step_rk4(
    state: &BundleState,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    dt: f64,
) -> Result<(BundleState, Tangent)> {
    let k1 = rhs(state)?;
    let k2 = rhs(&advance(state, &k1, 0.5 * dt))?;
    let k3 = rhs(&advance(state, &k2, 0.5 * dt))?;
    let k4 = rhs(&advance(state, &k3, dt))?;
    let mut next = state.clone();
    let w = dt / 6.0;
    for node in 0..state.node_count() {
        next.fiber_metric[node] +=
            (k1.fiber[node] + k2.fiber[node] * 2.0 + k3.fiber[node] * 2.0 + k4.fiber[node]) * w;
        next.connection.periodic[node] += (k1.connection[node]
            + k2.connection[node] * 2.0
            + k3.connection[node] * 2.0
            + k4.connection[node])
            * w;
        next.base_metric[node] += (k1.base[node] + k2.base[node] * 2.0 + k3.base[node] * 2.0 + k4.base[node]) * w;
        next.fiber_metric[node] = next.fiber_metric[node].symmetrize();
        next.base_metric[node] = next.base_metric[node].symmetrize();
    }
    next.t = state.t + dt;
    Ok((next, k1))
}

/// Accepts a step when every metric is finite and positive definite (Sylvester's criterion).
fn acceptable(state: &BundleState) -> bool {
    let spd = |m: &Mat| {
        let n = m.rows();
        m.is_finite()
            && (n < 1 || m[(0, 0)] > 0.0)
            && (n < 2 || m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] > 0.0)
            && (n < 3 || m.det() > 0.0)
    };
    state.fiber_metric.iter().all(spd)
        && state.base_metric.iter().all(spd)
        && state.connection.periodic.iter().all(Mat::is_finite)
}

/// Steps that take `state` exactly to `t_stop`, halving on SPD or NaN failures.
pub fn advance_to(
    state: BundleState,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    t_stop: f64,
    control: &StepControl,
    steps: &mut usize,
) -> Result<BundleState> {
    advance_to_with(state, rhs, t_stop, control, steps, &mut |_, _| {})
}

/// [`advance_to`] that reports every accepted step as `(state before the step, its rate)`.
pub fn advance_to_with(
    mut state: BundleState,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    t_stop: f64,
    control: &StepControl,
    steps: &mut usize,
    on_step: &mut dyn FnMut(&BundleState, &Tangent),
) -> Result<BundleState> {
    control.check()?;
    while state.t < t_stop {
        let remaining = t_stop - state.t;
        let mut dt = control.cfl_step(&state);
        if !(dt > 0.0) {
            return Err(Error::StepCollapse { t: state.t, dt });
        }
        // Land exactly on the stop; avoid a sliver step just before it.
        if dt >= remaining || remaining - dt < 1e-3 * dt {
            dt = remaining;
        }
        let mut rejects = 0;
        loop {
            match step_rk4(&state, rhs, dt) {
                Ok((next, k1)) if acceptable(&next) => {
                    on_step(&state, &k1);
                    let landed = dt == remaining;
                    state = next;
                    if landed {
                        state.t = t_stop;
                    }
                    *steps += 1;
                    break;
                }
                Ok(_) | Err(Error::SingularMetric { .. }) => {
                    rejects += 1;
                    dt *= 0.5;
                    if dt < control.dt_min || rejects > control.max_rejects {
                        return Err(Error::StepCollapse { t: state.t, dt });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(state)
}

/// Checkpoint times: `anchor · exp(k / per_log_unit)` for integer `k`, plus extra stops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub anchor: f64,
    pub per_log_unit: f64,
    pub extra: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { anchor: 1.0, per_log_unit: 64.0, extra: Vec::new() }
    }
}

impl Schedule {
    /// Sorted stop times in `(t_start, t_end]`, always ending with `t_end`.
    pub fn stops(&self, t_start: f64, t_end: f64) -> Result<Vec<f64>> {
        if !(self.anchor > 0.0 && self.per_log_unit > 0.0) {
            return Err(Error::InvalidArgument("schedule anchor and density must be positive".into()));
        }
        if !(t_start > 0.0) {
            return Err(Error::InvalidArgument("logarithmic schedules need positive times".into()));
        }
        let k0 = math::floor(math::ln(t_start / self.anchor) * self.per_log_unit) as i64;
        let mut out = Vec::new();
        let mut k = k0;
        loop {
            let tk = self.anchor * math::exp(k as f64 / self.per_log_unit);
            if tk >= t_end {
                break;
            }
            if tk > t_start * (1.0 + 1e-14) {
                out.push(tk);
            }
            k += 1;
        }
        out.extend(self.extra.iter().copied().filter(|&x| x > t_start && x < t_end));
        out.push(t_end);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        Ok(out)
    }
}

/// One stored time slice with its rate (used for Hermite interpolation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: BundleState,
    pub rate: Tangent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    /// Cubic Hermite using the stored rates.
    Hermite,
}

/// Time-ordered checkpoints of a flow run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub interpolation: Interpolation,
}

impl Trajectory {
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self> {
        for w in checkpoints.windows(2) {
            if !(w[1].state.t > w[0].state.t) {
                return Err(Error::InvalidArgument("checkpoint times must increase strictly".into()));
            }
            if w[1].state.domain != w[0].state.domain || w[1].state.fiber_dim != w[0].state.fiber_dim {
                return Err(Error::ShapeMismatch("checkpoints must share domain and fiber dimension".into()));
            }
        }
        Ok(Trajectory { checkpoints, interpolation: Interpolation::Hermite })
    }

    pub fn times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.state.t).collect()
    }

    pub fn first(&self) -> &BundleState {
        &self.checkpoints[0].state
    }

    pub fn last(&self) -> &BundleState {
        &self.checkpoints[self.checkpoints.len() - 1].state
    }

    /// Checkpoint whose time matches `t` to relative precision `1e-12`.
    pub fn at_time(&self, t: f64) -> Option<&BundleState> {
        self.checkpoints.iter().map(|c| &c.state).find(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Field state at time `t` interpolated between checkpoints.
    pub fn interpolate(&self, t: f64) -> Result<BundleState> {
        let first = self.first().t;
        let last = self.last().t;
        let tol = 1e-12 * last.abs().max(1.0);
        if t < first - tol || t > last + tol {
            return Err(Error::WindowNotCovered { start: t, end: t });
        }
        let k = match self.checkpoints.iter().position(|c| c.state.t >= t) {
            Some(0) | None if t <= first + tol => return Ok(self.checkpoints[0].state.clone()),
            Some(k) => k,
            None => return Ok(self.last().clone()),
        };
        let (c0, c1) = (&self.checkpoints[k - 1], &self.checkpoints[k]);
        let (t0, t1) = (c0.state.t, c1.state.t);
        let dt = t1 - t0;
        let s = ((t - t0) / dt).clamp(0.0, 1.0);
        let (w0, w1, v0, v1) = match self.interpolation {
            Interpolation::Linear => (1.0 - s, s, 0.0, 0.0),
            Interpolation::Hermite => {
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0, -2.0 * s3 + 3.0 * s2, (s3 - 2.0 * s2 + s) * dt, (s3 - s2) * dt)
            }
        };
        let mut out = c0.state.clone();
        for node in 0..out.node_count() {
            let mix = |a: &Mat, b: &Mat, ra: &Mat, rb: &Mat| *a * w0 + *b * w1 + *ra * v0 + *rb * v1;
            out.fiber_metric[node] = mix(
                &c0.state.fiber_metric[node],
                &c1.state.fiber_metric[node],
                &c0.rate.fiber[node],
                &c1.rate.fiber[node],
            );
            out.connection.periodic[node] = mix(
                &c0.state.connection.periodic[node],
                &c1.state.connection.periodic[node],
                &c0.rate.connection[node],
                &c1.rate.connection[node],
            );
            out.base_metric[node] = mix(
                &c0.state.base_metric[node],
                &c1.state.base_metric[node],
                &c0.rate.base[node],
                &c1.rate.base[node],
            );
        }
        out.t = t;
        Ok(out)
    }
}

/// Runs the reduced flow to `t_end`, handing every stop (and the initial state) to `observe`.
/// Returns the final state and the number of accepted steps.
pub fn integrate_with(
    state0: BundleState,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    t_end: f64,
    control: &StepControl,
    schedule: &Schedule,
    observe: &mut dyn FnMut(&BundleState) -> Result<()>,
) -> Result<(BundleState, usize)> {
    if !(t_end > state0.t) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must exceed the start time {}", state0.t)));
    }
    let stops = schedule.stops(state0.t, t_end)?;
    let mut steps = 0;
    let mut state = state0;
    observe(&state)?;
    for stop in stops {
        state = advance_to(state, rhs, stop, control, &mut steps)?;
        observe(&state)?;
    }
    Ok((state, steps))
}

/// Runs the flow and stores every stop as a checkpoint.
pub fn integrate(
    state0: BundleState,
    rhs: &dyn Fn(&BundleState) -> Result<Tangent>,
    t_end: f64,
    control: &StepControl,
    schedule: &Schedule,
) -> Result<Trajectory> {
    let mut checkpoints = Vec::new();
    integrate_with(state0, rhs, t_end, control, schedule, &mut |s| {
        let rate = rhs(s)?;
        checkpoints.push(Checkpoint { state: s.clone(), rate });
        Ok(())
    })?;
    Trajectory::new(checkpoints)
}

/// Rescaled state `(G(st), A(st)/√s, g(st)/s)` at time `t = s_time / s`.
///
/// The fiber coordinates are scaled by `1/√s` so that `G` is unchanged; the
/// connection, including its background curvature, scales by `1/√s`.
pub fn rescale_state(state: &BundleState, s: f64) -> BundleState {
    let mut out = state.clone();
    let root = math::sqrt(s);
    out.t = state.t / s;
    out.connection.background = state.connection.background * (1.0 / root);
    for node in 0..state.node_count() {
        out.connection.periodic[node] = state.connection.periodic[node] * (1.0 / root);
        out.base_metric[node] = state.base_metric[node] * (1.0 / s);
    }
    out
}

fn rescale_tangent(rate: &Tangent, s: f64) -> Tangent {
    // d/dt' of the rescaled fields at t' = t/s.
    let root = math::sqrt(s);
    Tangent {
        fiber: rate.fiber.iter().map(|m| *m * s).collect(),
        connection: rate.connection.iter().map(|m| *m * root).collect(),
        base: rate.base.clone(),
        potential: None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blowdown {
    pub trajectory: Trajectory,
    /// Max relative mismatch between a centred difference of the rescaled
    /// fields and the reduced right-hand side at the interior checkpoints.
    pub consistency_defect: f64,
}

/// Blowdown `ḡ_s(t) = s⁻¹ ḡ(st)` of the checkpoints covering `[s·a, s·b]`.
pub fn blowdown_rescale(traj: &Trajectory, s: f64, window: (f64, f64)) -> Result<Blowdown> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {s}")));
    }
    let (a, b) = window;
    let tol = 1e-12 * (s * b).abs().max(1.0);
    if traj.first().t > s * a + tol || traj.last().t < s * b - tol {
        return Err(Error::WindowNotCovered { start: s * a, end: s * b });
    }
    let picked: Vec<Checkpoint> = traj
        .checkpoints
        .iter()
        .filter(|c| c.state.t >= s * a - tol && c.state.t <= s * b + tol)
        .map(|c| Checkpoint { state: rescale_state(&c.state, s), rate: rescale_tangent(&c.rate, s) })
        .collect();
    let mut defect: f64 = 0.0;
    for w in picked.windows(3) {
        let (p, c, nx) = (&w[0].state, &w[1].state, &w[2].state);
        let rhs = rhs_reduced(c)?;
        let (h0, h1) = (c.t - p.t, nx.t - c.t);
        // Second-order centred difference on a nonuniform grid.
        let (wp, wc, wn) = (-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1)));
        let scale = rhs.max_abs().max(1e-300);
        for node in 0..c.node_count() {
            let fd_g = p.fiber_metric[node] * wp + c.fiber_metric[node] * wc + nx.fiber_metric[node] * wn;
            let fd_b = p.base_metric[node] * wp + c.base_metric[node] * wc + nx.base_metric[node] * wn;
            let fd_a = p.connection.periodic[node] * wp
                + c.connection.periodic[node] * wc
                + nx.connection.periodic[node] * wn;
            let err = (fd_g - rhs.fiber[node])
                .max_abs()
                .max((fd_b - rhs.base[node]).max_abs())
                .max((fd_a - rhs.connection[node]).max_abs());
            defect = defect.max(err / scale);
        }
    }
    Ok(Blowdown { trajectory: Trajectory::new(picked)?, consistency_defect: defect })
}

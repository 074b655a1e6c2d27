//! Closed-form expanding solitons, the harmonic-Einstein residual and a
//! symmetry-reduced distance to the soliton family.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::curvature::Jets;
use crate::domain::{BaseDomain, StencilKind};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;
use crate::state::{pair_count, BundleState, Connection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolitonKind {
    Flat,
    Nil,
    Sol,
    H2xr,
    H3,
    GeneralizedSol,
}

impl SolitonKind {
    pub fn name(self) -> &'static str {
        match self {
            SolitonKind::Flat => "flat",
            SolitonKind::Nil => "nil",
            SolitonKind::Sol => "sol",
            SolitonKind::H2xr => "h2xr",
            SolitonKind::H3 => "h3",
            SolitonKind::GeneralizedSol => "generalized_sol",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            SolitonKind::Flat,
            SolitonKind::Nil,
            SolitonKind::Sol,
            SolitonKind::H2xr,
            SolitonKind::H3,
            SolitonKind::GeneralizedSol,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolitonSpec {
    pub kind: SolitonKind,
    /// Diagonal of the traceless generator `X` (sol kinds).
    pub generator: Vec<f64>,
    /// Euler density `c` of the background curvature (nil).
    pub euler_density: f64,
    /// Reference sectional curvature κ̂ (h2xr, h3).
    pub curvature: f64,
    /// Fiber dimension (flat only; the other kinds fix it).
    pub fiber_dim: usize,
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    pub stencil_order: usize,
}

impl SolitonSpec {
    fn base(kind: SolitonKind) -> Self {
        SolitonSpec {
            kind,
            generator: Vec::new(),
            euler_density: 0.0,
            curvature: 0.0,
            fiber_dim: 0,
            sizes: Vec::new(),
            periods: Vec::new(),
            stencil_order: 4,
        }
    }

    pub fn flat(sizes: &[usize], periods: &[f64], fiber_dim: usize) -> Self {
        SolitonSpec { fiber_dim, sizes: sizes.to_vec(), periods: periods.to_vec(), ..Self::base(SolitonKind::Flat) }
    }

    /// Twisted Sol over a circle of length `period` with `X = diag(generator)`.
    pub fn sol(size: usize, period: f64, generator: &[f64]) -> Self {
        let kind = if generator.len() == 2 { SolitonKind::Sol } else { SolitonKind::GeneralizedSol };
        SolitonSpec { generator: generator.to_vec(), sizes: vec![size], periods: vec![period], ..Self::base(kind) }
    }

    pub fn nil(size: usize, period: f64, euler_density: f64) -> Self {
        SolitonSpec {
            euler_density,
            sizes: vec![size, size],
            periods: vec![period, period],
            ..Self::base(SolitonKind::Nil)
        }
    }

    pub fn h2xr(curvature: f64) -> Self {
        SolitonSpec { curvature, ..Self::base(SolitonKind::H2xr) }
    }

    pub fn h3(curvature: f64) -> Self {
        SolitonSpec { curvature, ..Self::base(SolitonKind::H3) }
    }

    pub fn with_stencil_order(mut self, order: usize) -> Self {
        self.stencil_order = order;
        self
    }

    pub fn fiber_dimension(&self) -> usize {
        match self.kind {
            SolitonKind::Flat => self.fiber_dim,
            SolitonKind::Nil | SolitonKind::H2xr => 1,
            SolitonKind::H3 => 0,
            SolitonKind::Sol | SolitonKind::GeneralizedSol => self.generator.len(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidSpec(m));
        match self.kind {
            SolitonKind::Sol | SolitonKind::GeneralizedSol => {
                let n = self.generator.len();
                if self.kind == SolitonKind::Sol && n != 2 {
                    return bad(format!("sol needs a 2x2 generator, got {n} entries"));
                }
                if !(2..=3).contains(&n) {
                    return bad(format!("generator must have 2 or 3 entries, got {n}"));
                }
                let tr: f64 = self.generator.iter().sum();
                let scale = self.generator.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if tr.abs() > 1e-12 * scale.max(1.0) {
                    return bad(format!("generator must be traceless, trace = {tr}"));
                }
                if scale == 0.0 {
                    return bad("generator must be nonzero".into());
                }
                if self.sizes.len() != 1 {
                    return bad("sol kinds live over a one-dimensional base".into());
                }
            }
            SolitonKind::Nil => {
                if self.euler_density == 0.0 || !self.euler_density.is_finite() {
                    return bad("nil needs a nonzero Euler density".into());
                }
                if self.sizes.len() != 2 {
                    return bad("nil lives over a two-dimensional torus".into());
                }
            }
            SolitonKind::H2xr | SolitonKind::H3 => {
                if !(self.curvature < 0.0) {
                    return bad(format!("{} needs negative curvature, got {}", self.kind.name(), self.curvature));
                }
            }
            SolitonKind::Flat => {
                if self.fiber_dim > 3 {
                    return bad("fiber dimension must be at most 3".into());
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BaseDomain> {
        self.check()?;
        match self.kind {
            SolitonKind::H2xr => BaseDomain::homogeneous(2, self.curvature),
            SolitonKind::H3 => BaseDomain::homogeneous(3, self.curvature),
            SolitonKind::Sol | SolitonKind::GeneralizedSol => {
                let x = Mat::diag(&self.generator);
                let rho = (x * (0.5 * self.periods[0])).exp_symmetric();
                BaseDomain::grid(&self.sizes, &self.periods)?
                    .with_stencil_order(self.stencil_order)?
                    .with_holonomy(rho)
            }
            _ => BaseDomain::grid(&self.sizes, &self.periods)?.with_stencil_order(self.stencil_order),
        }
    }

    /// Conformal factor of the base metric along the family.
    pub fn base_scale(&self, t: f64) -> f64 {
        match self.kind {
            SolitonKind::Flat => 1.0,
            SolitonKind::Nil => math::cbrt(t),
            SolitonKind::Sol | SolitonKind::GeneralizedSol => {
                0.5 * t * self.generator.iter().map(|x| x * x).sum::<f64>()
            }
            SolitonKind::H2xr => -2.0 * self.curvature * t,
            SolitonKind::H3 => -4.0 * self.curvature * t,
        }
    }
}

/// Soliton state at time `t`.
pub fn make_soliton(spec: &SolitonSpec, t: f64) -> Result<BundleState> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("soliton time must be positive, got {t}")));
    }
    let domain = spec.domain()?;
    let nodes = domain.node_count();
    let n = domain.dim;
    let nf = spec.fiber_dimension();
    let mut background = Mat::zeros(nf, pair_count(n));
    let fiber_metric: Vec<Mat> = match spec.kind {
        SolitonKind::Sol | SolitonKind::GeneralizedSol => {
            let x = Mat::diag(&spec.generator);
            (0..nodes).map(|k| (x * domain.coords(k)[0]).exp_symmetric()).collect()
        }
        SolitonKind::Nil => {
            let c = spec.euler_density;
            background[(0, 0)] = c;
            vec![Mat::scalar(1, 1.0 / (3.0 * c * c * math::cbrt(t))); nodes]
        }
        _ => vec![Mat::identity(nf); nodes],
    };
    let base_metric = vec![Mat::scalar(n, spec.base_scale(t)); nodes];
    BundleState::new(
        domain,
        nf,
        t,
        fiber_metric,
        Connection { background, periodic: vec![Mat::zeros(nf, n); nodes] },
        base_metric,
    )
}

/// Relative sup-norm distance of `state` from the closed form at `state.t`:
/// the largest of `sup|ΔG| / sup|G*|`, `sup|Δg| / sup|g*|` and `sup|Δa|` (the
/// periodic connection of every family member vanishes).
pub fn closed_form_error(state: &BundleState, spec: &SolitonSpec) -> Result<f64> {
    let exact = make_soliton(spec, state.t)?;
    if exact.node_count() != state.node_count() || exact.fiber_dim != state.fiber_dim {
        return Err(Error::ShapeMismatch("state does not live on the soliton's grid".into()));
    }
    let rel = |a: &[Mat], b: &[Mat]| {
        let diff = a.iter().zip(b).map(|(x, y)| (*x - *y).max_abs()).fold(0.0, f64::max);
        let scale = b.iter().map(Mat::max_abs).fold(0.0, f64::max);
        if scale > 0.0 { diff / scale } else { diff }
    };
    let da = state.connection.periodic.iter().map(Mat::max_abs).fold(0.0, f64::max);
    Ok(rel(&state.fiber_metric, &exact.fiber_metric).max(rel(&state.base_metric, &exact.base_metric)).max(da))
}

/// Analytic time derivative `(Ġ, ġ)` of the family at one node.
pub fn family_rate(spec: &SolitonSpec, state: &BundleState, node: usize) -> (Mat, Mat) {
    let nf = state.fiber_dim;
    let n = state.base_dim();
    let t = state.t;
    match spec.kind {
        SolitonKind::Nil => {
            let c = spec.euler_density;
            let dg = -1.0 / (9.0 * c * c * math::powf(t, 4.0 / 3.0));
            (Mat::scalar(1, dg), Mat::scalar(n, 1.0 / (3.0 * math::powf(t, 2.0 / 3.0))))
        }
        _ => {
            let _ = node;
            (Mat::zeros(nf, nf), Mat::scalar(n, spec.base_scale(t) / t))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regime {
    Steady,
    Shrinker { tau: f64 },
    Expander { t: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEinsteinResidual {
    /// Sup over nodes of the `G`-norm of the harmonic-map equation.
    pub fiber: f64,
    /// Sup over nodes of the `g`-norm of the base equation.
    pub base: f64,
    /// Sup over nodes of `|F|`.
    pub curvature: f64,
    /// `(max det G − min det G) / mean det G`.
    pub det_oscillation: f64,
}

impl HarmonicEinsteinResidual {
    /// Largest of the two equation residuals.
    pub fn equations(&self) -> f64 {
        self.fiber.max(self.base)
    }
}

/// Residual of the harmonic-Einstein system of the given regime. `potential`
/// supplies `f` for the shrinker equations and is ignored otherwise.
pub fn harmonic_einstein_residual(
    state: &BundleState,
    regime: Regime,
    potential: Option<&[f64]>,
) -> Result<HarmonicEinsteinResidual> {
    let jets = Jets::new(state)?;
    let n = state.base_dim();
    let nodes = state.node_count();
    let f_jets = match (regime, potential) {
        (Regime::Shrinker { .. }, Some(f)) => Some(ScalarJets::new(&state.domain, f)?),
        _ => None,
    };
    let mut out = HarmonicEinsteinResidual { fiber: 0.0, base: 0.0, curvature: 0.0, det_oscillation: 0.0 };
    for node in 0..nodes {
        let j = jets.node(node)?;
        let mut eq_g = Mat::zeros(j.nf, j.nf);
        for a in 0..n {
            for b in 0..n {
                eq_g += (j.hess[a][b] - j.d_big_g[a] * j.big_gi * j.d_big_g[b]) * j.gi[(a, b)];
            }
        }
        let mut eq_b = j.ricci_base - j.dirichlet_tensor() * 0.25;
        match regime {
            Regime::Steady => {}
            Regime::Expander { t } => eq_b += j.g * (0.5 / t),
            Regime::Shrinker { tau } => {
                eq_b -= j.g * (0.5 / tau);
                if let Some(fj) = &f_jets {
                    let grad = fj.gradient(node);
                    for a in 0..n {
                        for b in 0..n {
                            eq_g -= j.d_big_g[a] * (j.gi[(a, b)] * grad[b]);
                        }
                    }
                    eq_b += fj.hessian(node, &j.gamma);
                }
            }
        }
        let fiber = math::sqrt((j.big_gi * eq_g * j.big_gi * eq_g).trace().max(0.0));
        let base = math::sqrt((j.gi * eq_b * j.gi * eq_b).trace().max(0.0));
        out.fiber = out.fiber.max(fiber);
        out.base = out.base.max(base);
        out.curvature = out.curvature.max(math::sqrt(j.f_norm2().max(0.0)));
    }
    let det = state.det_g_field();
    let (lo, hi) = det.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &d| (l.min(d), h.max(d)));
    let mean = det.iter().sum::<f64>() / det.len() as f64;
    out.det_oscillation = if mean != 0.0 { (hi - lo) / mean.abs() } else { 0.0 };
    Ok(out)
}

/// First and second derivatives of a scalar field.
pub(crate) struct ScalarJets {
    n: usize,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<Vec<f64>>>,
}

impl ScalarJets {
    pub(crate) fn new(domain: &BaseDomain, f: &[f64]) -> Result<Self> {
        let n = domain.dim;
        let nodes = domain.node_count();
        domain.check_field_len(f.len())?;
        if !domain.is_grid() {
            return Ok(ScalarJets { n, d1: vec![vec![0.0; nodes]; n], d2: vec![vec![vec![0.0; nodes]; n]; n] });
        }
        let d1: Vec<Vec<f64>> =
            (0..n).map(|a| domain.derive_scalar(f, a, StencilKind::First)).collect::<Result<_>>()?;
        let mut d2 = vec![vec![Vec::new(); n]; n];
        for a in 0..n {
            for b in a..n {
                let v = if a == b {
                    domain.derive_scalar(f, a, StencilKind::Second)?
                } else {
                    domain.derive_scalar(&d1[b], a, StencilKind::First)?
                };
                d2[b][a] = v.clone();
                d2[a][b] = v;
            }
        }
        Ok(ScalarJets { n, d1, d2 })
    }

    pub(crate) fn gradient(&self, node: usize) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate().take(self.n) {
            *ga = self.d1[a][node];
        }
        g
    }

    /// Covariant Hessian `f_;αβ = f_,αβ − Γ^σ_αβ f_,σ`.
    pub(crate) fn hessian(&self, node: usize, gamma: &[Mat; 3]) -> Mat {
        let n = self.n;
        let mut h = Mat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut v = self.d2[a][b][node];
                for s in 0..n {
                    v -= gamma[s][(a, b)] * self.d1[s][node];
                }
                h[(a, b)] = v;
            }
        }
        h
    }
}

/// Distance from `state` to the soliton family of `spec` at `state.t`, modulo
/// the family's symmetries.
///
/// Sol kinds quotient base reparametrization (fields are compared in the
/// normalized arclength coordinate) and translation; nil quotients the scale
/// parameter of its one-parameter family; flat and homogeneous kinds quotient
/// constant fiber metrics.
pub fn soliton_distance(state: &BundleState, spec: &SolitonSpec) -> Result<f64> {
    spec.check()?;
    if state.fiber_dim != spec.fiber_dimension() {
        return Err(Error::ShapeMismatch(format!(
            "state has fiber dimension {}, spec needs {}",
            state.fiber_dim,
            spec.fiber_dimension()
        )));
    }
    match spec.kind {
        SolitonKind::Sol | SolitonKind::GeneralizedSol => sol_distance(state, spec),
        SolitonKind::Nil => nil_distance(state, spec),
        SolitonKind::Flat => {
            let spread = |fields: &[Mat]| {
                let mean = fields.iter().fold(Mat::zeros(fields[0].rows(), fields[0].cols()), |acc, m| acc + *m)
                    * (1.0 / fields.len() as f64);
                let scale = mean.norm_frobenius().max(f64::MIN_POSITIVE);
                fields.iter().map(|m| (*m - mean).norm_frobenius() / scale).fold(0.0, f64::max)
            };
            let g_part = if state.fiber_dim > 0 { spread(&state.fiber_metric) } else { 0.0 };
            Ok(g_part + spread(&state.base_metric))
        }
        SolitonKind::H2xr | SolitonKind::H3 => {
            if state.domain.is_grid() {
                return Err(Error::ShapeMismatch("homogeneous spec needs a homogeneous state".into()));
            }
            let mu = state.base_metric[0][(0, 0)];
            Ok((mu / spec.base_scale(state.t) - 1.0).abs())
        }
    }
}

fn sol_distance(state: &BundleState, spec: &SolitonSpec) -> Result<f64> {
    let domain = &state.domain;
    if domain.dim != 1 || !domain.is_grid() || domain.sizes[0] != spec.sizes[0] {
        return Err(Error::ShapeMismatch("sol distance needs the spec's one-dimensional grid".into()));
    }
    let size = domain.sizes[0];
    let period = domain.periods[0];
    let speed: Vec<f64> = state.base_metric.iter().map(|g| math::sqrt(g[(0, 0)])).collect();
    let (length, arclength) = periodic_antiderivative(&speed, period);
    // σ(b): arclength rescaled to the coordinate period.
    let sigma: Vec<f64> = arclength.iter().map(|s| s * period / length).collect();
    let x = Mat::diag(&spec.generator);
    let mismatch = |shift: f64| {
        (0..size)
            .map(|k| {
                let target = (x * (sigma[k] + shift)).exp_symmetric();
                (state.fiber_metric[k] - target).norm_frobenius() / target.norm_frobenius()
            })
            .fold(0.0, f64::max)
    };
    let shift = minimize_scalar(&mismatch, -period, period, 128);
    let expected = math::sqrt(spec.base_scale(state.t)) * period;
    Ok(mismatch(shift) + (length / expected - 1.0).abs())
}

fn nil_distance(state: &BundleState, spec: &SolitonSpec) -> Result<f64> {
    let domain = &state.domain;
    if domain.dim != 2 || !domain.is_grid() {
        return Err(Error::ShapeMismatch("nil distance needs a two-dimensional grid".into()));
    }
    let t = state.t;
    let c = spec.euler_density;
    let fiber: Vec<f64> = state.fiber_metric.iter().map(|m| m[(0, 0)] * math::cbrt(t)).collect();
    let two_form = state.curvature_two_form()?;
    let f_dev = two_form.iter().map(|m| (m[(0, 0)] / c - 1.0).abs()).fold(0.0, f64::max);
    // Family member a: G = a t^{-1/3}, g = √(3a)|c| t^{1/3}.
    let mismatch = |log_a: f64| {
        let a = math::exp(log_a);
        let mu = math::sqrt(3.0 * a) * c.abs() * math::cbrt(t);
        let dg = fiber.iter().map(|v| (v / a - 1.0).abs()).fold(0.0, f64::max);
        let db = state
            .base_metric
            .iter()
            .map(|g| (*g * (1.0 / mu) - Mat::identity(2)).max_abs())
            .fold(0.0, f64::max);
        dg + db
    };
    let mean = fiber.iter().sum::<f64>() / fiber.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidState("fiber metric is not positive".into()));
    }
    let center = math::ln(mean);
    let log_a = minimize_scalar(&mismatch, center - 1.0, center + 1.0, 64);
    Ok(mismatch(log_a) + f_dev)
}

/// Coarse grid search followed by golden-section refinement around the best cell.
pub fn minimize_scalar(func: &dyn Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> f64 {
    let step = (hi - lo) / samples as f64;
    let mut best = lo;
    let mut best_val = f64::INFINITY;
    for k in 0..=samples {
        let x = lo + step * k as f64;
        let v = func(x);
        if v < best_val {
            best_val = v;
            best = x;
        }
    }
    let (mut a, mut b) = (best - step, best + step);
    let phi = 0.5 * (math::sqrt(5.0) - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (func(c), func(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = func(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = func(d);
        }
    }
    let mid = 0.5 * (a + b);
    if func(mid) <= best_val {
        mid
    } else {
        best
    }
}

/// Total integral and node values of `∫_0^b s` for a periodic sampled function,
/// using the discrete Fourier series (exact for trigonometric polynomials below Nyquist).
pub fn periodic_antiderivative(values: &[f64], period: f64) -> (f64, Vec<f64>) {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    let mut out = vec![0.0; m];
    let two_pi = 2.0 * math::PI;
    for k in 1..=(m - 1) / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in values.iter().enumerate() {
            let ang = two_pi * (k * j) as f64 / m as f64;
            re += v * math::cos(ang);
            im -= v * math::sin(ang);
        }
        re *= 2.0 / m as f64;
        im *= 2.0 / m as f64;
        // s_k(b) = re cos(ωb) − im sin(ωb), ω = 2πk/period
        let omega = two_pi * k as f64 / period;
        for (j, o) in out.iter_mut().enumerate() {
            let b = period * j as f64 / m as f64;
            *o += (re * math::sin(omega * b) + im * (math::cos(omega * b) - 1.0)) / omega;
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o += mean * period * j as f64 / m as f64;
    }
    (mean * period, out)
}

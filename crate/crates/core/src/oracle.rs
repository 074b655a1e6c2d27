//! Independent curvature oracle on the total space.
//!
//! The `(n + N)`-dimensional invariant metric is assembled literally from
//! `(G, A, g)` on a coordinate patch around a node, and its Levi-Civita
//! curvature is computed by nested finite differences. Nothing here shares code
//! with the reduced formulas in [`crate::curvature`].

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::Signature;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::state::{two_form_component, BundleState};

const DMAX: usize = 6;
/// Sixth-order central first-derivative weights for offsets 1, 2, 3.
const D1: [f64; 3] = [0.75, -0.15, 1.0 / 60.0];
/// Interpolation nodes on each side of the centre node.
const PATCH: isize = 4;

#[derive(Clone, Copy, Debug)]
struct Dense {
    d: usize,
    a: [[f64; DMAX]; DMAX],
}

impl Dense {
    fn zeros(d: usize) -> Self {
        Dense { d, a: [[0.0; DMAX]; DMAX] }
    }

    fn inverse(&self) -> Option<Dense> {
        let d = self.d;
        let mut m = self.a;
        let mut inv = Dense::zeros(d);
        for i in 0..d {
            inv.a[i][i] = 1.0;
        }
        for col in 0..d {
            let pivot = (col..d).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
            if m[pivot][col] == 0.0 {
                return None;
            }
            m.swap(col, pivot);
            inv.a.swap(col, pivot);
            let p = m[col][col];
            for k in 0..d {
                m[col][k] /= p;
                inv.a[col][k] /= p;
            }
            for r in 0..d {
                if r != col {
                    let factor = m[r][col];
                    for k in 0..d {
                        m[r][k] -= factor * m[col][k];
                        inv.a[r][k] -= factor * inv.a[col][k];
                    }
                }
            }
        }
        Some(inv)
    }
}

/// Curvature of the total space at a node, in the frame `(∂_α, ∂_i)` with `A = 0` there.
#[derive(Clone, Debug)]
pub struct OracleCurvature {
    pub ricci_fiber: Mat,
    pub ricci_mixed: Mat,
    pub ricci_basecomp: Mat,
    pub scalar_total: f64,
    /// Total-space Riemann tensor `R_IJKL` (base indices first), flattened row-major.
    pub riemann: Vec<f64>,
    pub dim: usize,
}

/// Local description of the reduced fields around a base point.
pub trait LocalFields {
    fn base_dim(&self) -> usize;
    fn fiber_dim(&self) -> usize;
    /// `(G, A, g)` at an offset `y` from the base point; `A` must already be in a
    /// gauge where it vanishes at `y = 0`.
    fn fields(&self, y: [f64; 2]) -> Result<(Mat, Mat, Mat)>;
}

fn total_metric(fields: &dyn LocalFields, y: [f64; 2]) -> Result<Dense> {
    let (n, nf) = (fields.base_dim(), fields.fiber_dim());
    let (big_g, a, g) = fields.fields(y)?;
    let mut m = Dense::zeros(n + nf);
    for al in 0..n {
        for be in 0..n {
            let mut v = g[(al, be)];
            for i in 0..nf {
                for j in 0..nf {
                    v += big_g[(i, j)] * a[(i, al)] * a[(j, be)];
                }
            }
            m.a[al][be] = v;
        }
        for i in 0..nf {
            let mut v = 0.0;
            for j in 0..nf {
                v += big_g[(i, j)] * a[(j, al)];
            }
            m.a[al][n + i] = v;
            m.a[n + i][al] = v;
        }
    }
    for i in 0..nf {
        for j in 0..nf {
            m.a[n + i][n + j] = big_g[(i, j)];
        }
    }
    Ok(m)
}

fn shifted(y: [f64; 2], axis: usize, by: f64) -> [f64; 2] {
    let mut z = y;
    z[axis] += by;
    z
}

/// `Γ^K_IJ` of the total metric at `y`, flattened `[K][I][J]`.
fn total_christoffel(fields: &dyn LocalFields, y: [f64; 2], step: f64) -> Result<Vec<f64>> {
    let n = fields.base_dim();
    let d = n + fields.fiber_dim();
    let metric = total_metric(fields, y)?;
    let inv = metric.inverse().ok_or(Error::SingularMetric { node: 0 })?;
    // ∂_a ḡ_IJ; only base directions carry derivatives.
    let mut dm = vec![[[0.0; DMAX]; DMAX]; n];
    for (axis, dma) in dm.iter_mut().enumerate() {
        for (k, w) in D1.iter().enumerate() {
            let off = (k + 1) as f64 * step;
            let plus = total_metric(fields, shifted(y, axis, off))?;
            let minus = total_metric(fields, shifted(y, axis, -off))?;
            for r in 0..d {
                for c in 0..d {
                    dma[r][c] += w * (plus.a[r][c] - minus.a[r][c]) / step;
                }
            }
        }
    }
    let partial = |axis: usize, r: usize, c: usize| if axis < n { dm[axis][r][c] } else { 0.0 };
    let mut gam = vec![0.0; d * d * d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut v = 0.0;
                for l in 0..d {
                    v += inv.a[k][l] * (partial(i, l, j) + partial(j, l, i) - partial(l, i, j));
                }
                gam[(k * d + i) * d + j] = 0.5 * v;
            }
        }
    }
    Ok(gam)
}

/// Curvature of the total space at the base point of `fields`.
pub fn total_space_curvature(fields: &dyn LocalFields, probe: f64) -> Result<OracleCurvature> {
    let n = fields.base_dim();
    let nf = fields.fiber_dim();
    let d = n + nf;
    let origin = [0.0, 0.0];
    let metric = total_metric(fields, origin)?;
    let inv = metric.inverse().ok_or(Error::SingularMetric { node: 0 })?;
    let gam = total_christoffel(fields, origin, probe)?;
    let mut dgam = vec![vec![0.0; d * d * d]; d];
    for (axis, dga) in dgam.iter_mut().enumerate().take(n) {
        for (k, w) in D1.iter().enumerate() {
            let off = (k + 1) as f64 * probe;
            let plus = total_christoffel(fields, shifted(origin, axis, off), probe)?;
            let minus = total_christoffel(fields, shifted(origin, axis, -off), probe)?;
            for (slot, (p, m)) in dga.iter_mut().zip(plus.iter().zip(&minus)) {
                *slot += w * (p - m) / probe;
            }
        }
    }
    let g3 = |k: usize, i: usize, j: usize| gam[(k * d + i) * d + j];
    let dg3 = |a: usize, k: usize, i: usize, j: usize| dgam[a][(k * d + i) * d + j];
    // R^r_smn = ∂_m Γ^r_ns − ∂_n Γ^r_ms + Γ^r_ml Γ^l_ns − Γ^r_nl Γ^l_ms
    let mut up = vec![0.0; d * d * d * d];
    let i4 = |a: usize, b: usize, c: usize, e: usize| ((a * d + b) * d + c) * d + e;
    for r in 0..d {
        for s in 0..d {
            for m in 0..d {
                for nn in 0..d {
                    let mut v = dg3(m, r, nn, s) - dg3(nn, r, m, s);
                    for l in 0..d {
                        v += g3(r, m, l) * g3(l, nn, s) - g3(r, nn, l) * g3(l, m, s);
                    }
                    up[i4(r, s, m, nn)] = v;
                }
            }
        }
    }
    let mut riemann = vec![0.0; d * d * d * d];
    for a in 0..d {
        for s in 0..d {
            for m in 0..d {
                for nn in 0..d {
                    let mut v = 0.0;
                    for r in 0..d {
                        v += metric.a[a][r] * up[i4(r, s, m, nn)];
                    }
                    riemann[i4(a, s, m, nn)] = v;
                }
            }
        }
    }
    let mut ric = [[0.0; DMAX]; DMAX];
    for s in 0..d {
        for nn in 0..d {
            let mut v = 0.0;
            for r in 0..d {
                v += up[i4(r, s, r, nn)];
            }
            ric[s][nn] = v;
        }
    }
    let mut scalar = 0.0;
    for s in 0..d {
        for nn in 0..d {
            scalar += inv.a[s][nn] * ric[s][nn];
        }
    }
    let sym = |a: usize, b: usize| 0.5 * (ric[a][b] + ric[b][a]);
    let mut ricci_fiber = Mat::zeros(nf, nf);
    let mut ricci_mixed = Mat::zeros(nf, n);
    let mut ricci_basecomp = Mat::zeros(n, n);
    for i in 0..nf {
        for j in 0..nf {
            ricci_fiber[(i, j)] = sym(n + i, n + j);
        }
        for a in 0..n {
            ricci_mixed[(i, a)] = sym(n + i, a);
        }
    }
    for a in 0..n {
        for b in 0..n {
            ricci_basecomp[(a, b)] = sym(a, b);
        }
    }
    Ok(OracleCurvature { ricci_fiber, ricci_mixed, ricci_basecomp, scalar_total: scalar, riemann, dim: d })
}

/// Degree-8 Lagrange interpolant of the state's fields on a 9-point (per axis) patch.
struct Patch<'a> {
    state: &'a BundleState,
    node: usize,
    /// Patch values per offset, row-major over (axis-0 offset, axis-1 offset).
    big_g: Vec<Mat>,
    a: Vec<Mat>,
    g: Vec<Mat>,
    a_center: Mat,
    spacing: [f64; 2],
}

impl<'a> Patch<'a> {
    fn new(state: &'a BundleState, node: usize) -> Result<Self> {
        let domain = &state.domain;
        let n = domain.dim;
        let nf = state.fiber_dim;
        let width = (2 * PATCH + 1) as usize;
        let idx = domain.node_multi_index(node);
        let rho = domain.holonomy_or_identity(nf);
        let rho_inv = rho.inverse().ok_or_else(|| Error::InvalidDomain("singular holonomy".into()))?;
        let count = if n == 1 { width } else { width * width };
        let (mut big_g, mut a, mut g) = (Vec::with_capacity(count), Vec::with_capacity(count), Vec::with_capacity(count));
        let second: Vec<isize> = if n == 1 { vec![0] } else { (-PATCH..=PATCH).collect() };
        for o0 in -PATCH..=PATCH {
            for &o1 in &second {
                let size0 = domain.sizes[0] as isize;
                let j0 = idx[0] as isize + o0;
                let wraps = j0.div_euclid(size0);
                let mut at = [j0.rem_euclid(size0) as usize, 0];
                if n == 2 {
                    at[1] = (idx[1] as isize + o1).rem_euclid(domain.sizes[1] as isize) as usize;
                }
                let k = domain.node_index(&at);
                let mut gv = state.fiber_metric[k];
                let mut av = state.connection.periodic[k];
                for _ in 0..wraps.unsigned_abs() {
                    gv = Signature::LowerLower.transport(&gv, &rho, &rho_inv, wraps > 0);
                    av = Signature::UpperRows.transport(&av, &rho, &rho_inv, wraps > 0);
                }
                big_g.push(gv);
                a.push(av);
                g.push(state.base_metric[k]);
            }
        }
        let center = if n == 1 { PATCH as usize } else { (PATCH as usize) * width + PATCH as usize };
        let a_center = a[center];
        let spacing = [domain.spacing(0), if n == 2 { domain.spacing(1) } else { 1.0 }];
        Ok(Patch { state, node, big_g, a, g, a_center, spacing })
    }

    fn weights(s: f64) -> [f64; 9] {
        let mut w = [1.0; 9];
        for (k, wk) in w.iter_mut().enumerate() {
            let xk = k as f64 - PATCH as f64;
            for m in 0..9 {
                if m != k {
                    let xm = m as f64 - PATCH as f64;
                    *wk *= (s - xm) / (xk - xm);
                }
            }
        }
        w
    }

    fn interpolate(&self, values: &[Mat], y: [f64; 2]) -> Mat {
        let n = self.state.base_dim();
        let w0 = Patch::weights(y[0] / self.spacing[0]);
        let proto = values[0];
        let mut out = Mat::zeros(proto.rows(), proto.cols());
        if n == 1 {
            for (k, w) in w0.iter().enumerate() {
                out += values[k] * *w;
            }
        } else {
            let w1 = Patch::weights(y[1] / self.spacing[1]);
            for (k0, a) in w0.iter().enumerate() {
                for (k1, b) in w1.iter().enumerate() {
                    out += values[k0 * 9 + k1] * (a * b);
                }
            }
        }
        out
    }
}

impl LocalFields for Patch<'_> {
    fn base_dim(&self) -> usize {
        self.state.base_dim()
    }

    fn fiber_dim(&self) -> usize {
        self.state.fiber_dim
    }

    fn fields(&self, y: [f64; 2]) -> Result<(Mat, Mat, Mat)> {
        let n = self.base_dim();
        for axis in 0..n {
            if y[axis].abs() > PATCH as f64 * self.spacing[axis] {
                return Err(Error::ProbeOutOfRange { node: self.node });
            }
        }
        let big_g = self.interpolate(&self.big_g, y);
        let mut a = self.interpolate(&self.a, y) - self.a_center;
        // Symmetric gauge for the background: A_β = ½ F_αβ y^α.
        let bg = &self.state.connection.background;
        for i in 0..self.fiber_dim() {
            for be in 0..n {
                for al in 0..n {
                    a[(i, be)] += 0.5 * two_form_component(bg, n, i, al, be) * y[al];
                }
            }
        }
        Ok((big_g, a, self.interpolate(&self.g, y)))
    }
}

/// Total-space curvature at `node`, built from a local interpolant of the state.
///
/// `probe_radius` is the finite-difference step of the nested derivatives;
/// the outermost probe point lies `6 · probe_radius` from the node and must stay
/// inside the interpolation patch of four grid spacings.
pub fn total_space_oracle(state: &BundleState, node: usize, probe_radius: f64) -> Result<OracleCurvature> {
    if !state.domain.is_grid() {
        return Err(Error::NotGridMode);
    }
    if node >= state.node_count() {
        return Err(Error::InvalidArgument(alloc::format!("node {node} out of range")));
    }
    if !(probe_radius > 0.0) || 6.0 * probe_radius > PATCH as f64 * state.domain.min_spacing() {
        return Err(Error::ProbeOutOfRange { node });
    }
    let patch = Patch::new(state, node)?;
    total_space_curvature(&patch, probe_radius)
}

/// Default probe radius: half the smallest grid spacing.
pub fn default_probe_radius(state: &BundleState) -> f64 {
    0.5 * state.domain.min_spacing()
}

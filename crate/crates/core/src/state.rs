//! Fields of the reduced flow and the conjugate-heat density.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{BaseDomain, Signature, StencilKind};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;

/// Number of independent components of a two-form on an `n`-dimensional base.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Column of the `(a, b)` component (with `a < b`) in the packed two-form layout.
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    // (0,1), (0,2), (1,2)
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

/// Reads `F^i_ab` from a packed `N × n(n-1)/2` matrix.
pub fn two_form_component(packed: &Mat, n: usize, i: usize, a: usize, b: usize) -> f64 {
    use core::cmp::Ordering::*;
    match a.cmp(&b) {
        Less => packed[(i, pair_index(n, a, b))],
        Greater => -packed[(i, pair_index(n, b, a))],
        Equal => 0.0,
    }
}

/// Connection `A^i = background + a^i`: the background is a fixed one-form with
/// constant curvature, only the periodic part is stored per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    /// Constant curvature of the background form, packed as `N × n(n-1)/2`.
    pub background: Mat,
    /// `a^i_α` per node as an `N × n` matrix.
    pub periodic: Vec<Mat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleState {
    pub domain: BaseDomain,
    pub fiber_dim: usize,
    pub t: f64,
    pub fiber_metric: Vec<Mat>,
    pub connection: Connection,
    /// In homogeneous mode this is a multiple of the identity in an orthonormal
    /// frame of the unit-curvature reference metric.
    pub base_metric: Vec<Mat>,
}

/// Pure diagnostic report; callers decide what counts as failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_fiber_eigenvalue: f64,
    pub min_fiber_eigenvalue_node: usize,
    pub min_base_eigenvalue: f64,
    pub min_base_eigenvalue_node: usize,
    pub max_curvature: f64,
    /// Relative mismatch between the transported last node and a one-sided
    /// extrapolation from the first nodes; `O(h⁵)` for seam-compatible data.
    pub seam_defect: f64,
    pub non_finite: usize,
    pub fiber_spd_violations: Vec<usize>,
    pub base_spd_violations: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.non_finite == 0 && self.fiber_spd_violations.is_empty() && self.base_spd_violations.is_empty()
    }
}

impl BundleState {
    pub fn new(
        domain: BaseDomain,
        fiber_dim: usize,
        t: f64,
        fiber_metric: Vec<Mat>,
        connection: Connection,
        base_metric: Vec<Mat>,
    ) -> Result<Self> {
        let state = BundleState { domain, fiber_dim, t, fiber_metric, connection, base_metric };
        state.check_shapes()?;
        Ok(state)
    }

    /// Product state `G = I`, `A = 0`, `g = I`.
    pub fn flat(domain: BaseDomain, fiber_dim: usize, t: f64) -> Result<Self> {
        let nodes = domain.node_count();
        let n = domain.dim;
        BundleState::new(
            domain,
            fiber_dim,
            t,
            vec![Mat::identity(fiber_dim); nodes],
            Connection {
                background: Mat::zeros(fiber_dim, pair_count(n)),
                periodic: vec![Mat::zeros(fiber_dim, n); nodes],
            },
            vec![Mat::identity(n); nodes],
        )
    }

    pub fn base_dim(&self) -> usize {
        self.domain.dim
    }

    pub fn node_count(&self) -> usize {
        self.domain.node_count()
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.domain.check()?;
        let nodes = self.domain.node_count();
        let (big_n, n) = (self.fiber_dim, self.domain.dim);
        if big_n > crate::linalg::MAX_DIM {
            return Err(Error::ShapeMismatch(format!("fiber dimension {big_n} exceeds 3")));
        }
        let shape_err = |what: &str| Err(Error::ShapeMismatch(format!("{what} has the wrong shape")));
        if self.fiber_metric.len() != nodes || self.fiber_metric.iter().any(|m| m.rows() != big_n || m.cols() != big_n) {
            return shape_err("fiber metric");
        }
        if self.base_metric.len() != nodes || self.base_metric.iter().any(|m| m.rows() != n || m.cols() != n) {
            return shape_err("base metric");
        }
        let c = &self.connection;
        if c.background.rows() != big_n || c.background.cols() != pair_count(n) {
            return shape_err("background curvature");
        }
        if c.periodic.len() != nodes || c.periodic.iter().any(|m| m.rows() != big_n || m.cols() != n) {
            return shape_err("periodic connection");
        }
        if let Some(rho) = &self.domain.holonomy {
            if rho.rows() != big_n {
                return shape_err("holonomy");
            }
        }
        if !self.domain.is_grid() && c.periodic.iter().any(|m| m.max_abs() != 0.0) {
            return Err(Error::InvalidState("homogeneous states carry no periodic connection".into()));
        }
        if !self.t.is_finite() {
            return Err(Error::InvalidState("time stamp is not finite".into()));
        }
        Ok(())
    }

    /// Total curvature `F = F_bg + da` per node, packed as `N × n(n-1)/2`.
    pub fn curvature_two_form(&self) -> Result<Vec<Mat>> {
        let n = self.base_dim();
        let nodes = self.node_count();
        let mut out = vec![self.connection.background; nodes];
        if !self.domain.is_grid() || n < 2 {
            return Ok(out);
        }
        let mut da = Vec::with_capacity(n);
        for axis in 0..n {
            da.push(self.domain.derive(&self.connection.periodic, Signature::UpperRows, axis, StencilKind::First)?);
        }
        for (node, f) in out.iter_mut().enumerate() {
            for a in 0..n {
                for b in (a + 1)..n {
                    let col = pair_index(n, a, b);
                    for i in 0..self.fiber_dim {
                        f[(i, col)] += da[a][node][(i, b)] - da[b][node][(i, a)];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn det_g_field(&self) -> Vec<f64> {
        self.fiber_metric.iter().map(Mat::det).collect()
    }

    /// `√det g` per node.
    pub fn volume_element(&self) -> Vec<f64> {
        self.base_metric.iter().map(|g| math::sqrt(g.det().max(0.0))).collect()
    }

    pub fn volume(&self) -> Result<f64> {
        let ones = vec![1.0; self.node_count()];
        self.domain.integrate_base(&ones, &self.volume_element())
    }

    pub fn integrate(&self, density: &[f64]) -> Result<f64> {
        self.domain.integrate_base(density, &self.volume_element())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport {
            min_fiber_eigenvalue: f64::INFINITY,
            min_fiber_eigenvalue_node: 0,
            min_base_eigenvalue: f64::INFINITY,
            min_base_eigenvalue_node: 0,
            max_curvature: 0.0,
            seam_defect: 0.0,
            non_finite: 0,
            fiber_spd_violations: Vec::new(),
            base_spd_violations: Vec::new(),
        };
        for (node, (big_g, g)) in self.fiber_metric.iter().zip(&self.base_metric).enumerate() {
            let a = &self.connection.periodic[node];
            if !big_g.is_finite() || !g.is_finite() || !a.is_finite() {
                report.non_finite += 1;
                continue;
            }
            if self.fiber_dim > 0 {
                let lam = big_g.min_eigenvalue();
                if lam < report.min_fiber_eigenvalue {
                    report.min_fiber_eigenvalue = lam;
                    report.min_fiber_eigenvalue_node = node;
                }
                if !(lam > 0.0) {
                    report.fiber_spd_violations.push(node);
                }
            }
            let lam = g.min_eigenvalue();
            if lam < report.min_base_eigenvalue {
                report.min_base_eigenvalue = lam;
                report.min_base_eigenvalue_node = node;
            }
            if !(lam > 0.0) {
                report.base_spd_violations.push(node);
            }
        }
        if report.non_finite == 0 {
            if let Ok(f) = self.curvature_two_form() {
                report.max_curvature = f.iter().map(Mat::max_abs).fold(0.0, f64::max);
            }
            report.seam_defect = self.seam_defect();
        }
        report
    }

    fn seam_defect(&self) -> f64 {
        if !self.domain.is_grid() || self.fiber_dim == 0 {
            return 0.0;
        }
        let size = self.domain.sizes[0];
        let lines = if self.base_dim() == 1 { 1 } else { self.domain.sizes[1] };
        let stride = if self.base_dim() == 1 { 1 } else { self.domain.sizes[1] };
        let rho = self.domain.holonomy_or_identity(self.fiber_dim);
        let Some(rho_inv) = rho.inverse() else {
            return f64::INFINITY;
        };
        // Quartic extrapolation from nodes 0..=4 to the position of node -1.
        const W: [f64; 5] = [5.0, -10.0, 10.0, -5.0, 1.0];
        let mut worst: f64 = 0.0;
        for line in 0..lines {
            let at = |i: usize| self.fiber_metric[i * stride + line];
            let mut extrap = Mat::zeros(self.fiber_dim, self.fiber_dim);
            for (k, w) in W.iter().enumerate() {
                extrap += at(k) * *w;
            }
            let carried = Signature::LowerLower.transport(&at(size - 1), &rho, &rho_inv, false);
            let scale = at(0).norm_frobenius().max(f64::MIN_POSITIVE);
            worst = worst.max((extrap - carried).norm_frobenius() / scale);
        }
        worst
    }
}

/// Normalization convention of a conjugate-heat density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Convention {
    /// Weight 1.
    Plain,
    /// Weight `(4πτ)^{-n/2}` with `τ = blowup_time - t`.
    Shrinker { blowup_time: f64 },
    /// Weight `(4πt)^{-n/2}`.
    Expander,
}

impl Convention {
    pub fn weight(&self, n: usize, t: f64) -> f64 {
        let half_n = n as f64 / 2.0;
        match *self {
            Convention::Plain => 1.0,
            Convention::Shrinker { blowup_time } => math::powf(4.0 * math::PI * (blowup_time - t), -half_n),
            Convention::Expander => math::powf(4.0 * math::PI * t, -half_n),
        }
    }
}

/// Positive density `u = e^{-f}` on the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub convention: Convention,
}

impl DensityField {
    /// Rescales `values` so the normalized mass under `convention` at `state.t` is 1.
    pub fn normalized(state: &BundleState, values: Vec<f64>, convention: Convention) -> Result<Self> {
        state.domain.check_field_len(values.len())?;
        if let Some(node) = values.iter().position(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::InvalidArgument(format!("density is not positive at node {node}")));
        }
        let raw = DensityField { values, convention };
        let mass = raw.mass(state)?;
        Ok(DensityField { values: raw.values.iter().map(|u| u / mass).collect(), convention })
    }

    pub fn uniform(state: &BundleState, convention: Convention) -> Result<Self> {
        DensityField::normalized(state, vec![1.0; state.node_count()], convention)
    }

    /// Density `e^{-f}` from a potential `f`, normalized.
    pub fn from_potential(state: &BundleState, f: &[f64], convention: Convention) -> Result<Self> {
        DensityField::normalized(state, f.iter().map(|v| math::exp(-v)).collect(), convention)
    }

    pub fn mass(&self, state: &BundleState) -> Result<f64> {
        Ok(self.convention.weight(state.base_dim(), state.t) * state.integrate(&self.values)?)
    }

    pub fn potential(&self) -> Vec<f64> {
        self.values.iter().map(|&u| -math::ln(u)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_layout() {
        assert_eq!(pair_index(2, 0, 1), 0);
        assert_eq!(pair_index(3, 0, 1), 0);
        assert_eq!(pair_index(3, 0, 2), 1);
        assert_eq!(pair_index(3, 1, 2), 2);
        assert_eq!(pair_count(1), 0);
    }

    #[test]
    fn uniform_density_has_unit_mass() {
        let d = BaseDomain::grid(&[16], &[3.0]).unwrap();
        let s = BundleState::flat(d, 1, 2.0).unwrap();
        for conv in [Convention::Plain, Convention::Expander, Convention::Shrinker { blowup_time: 5.0 }] {
            let u = DensityField::uniform(&s, conv).unwrap();
            assert!((u.mass(&s).unwrap() - 1.0).abs() < 1e-14);
        }
    }
}

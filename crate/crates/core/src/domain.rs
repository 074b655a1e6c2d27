//! Periodic structured grids over the base, central difference stencils,
//! quadrature and twisted seam transport of fiber-indexed fields.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Smallest number of grid points allowed per axis.
pub const MIN_GRID_POINTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainMode {
    Grid,
    /// Spatially constant fields over a constant-curvature base; no grid is stored.
    Homogeneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StencilKind {
    First,
    Second,
}

/// How a field's fiber indices transform when it is carried across the axis-0 seam.
///
/// The convention is `G(b + L) = ρᵀ G(b) ρ`: lower fiber indices pick up `ρᵀ`,
/// upper fiber indices pick up `ρ⁻¹`. Base indices never transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Signature {
    /// No fiber index (scalars and pure base tensors).
    Scalar,
    /// Two lower fiber indices, e.g. `G_ij`.
    LowerLower,
    /// Rows carry one upper fiber index, e.g. `A^i_α` stored as an `N × n` matrix.
    UpperRows,
    /// Rows carry one lower fiber index.
    LowerRows,
}

impl Signature {
    /// Value of the field one period further along axis 0 (`forward`) or one period back.
    pub fn transport(self, value: &Mat, rho: &Mat, rho_inv: &Mat, forward: bool) -> Mat {
        match (self, forward) {
            (Signature::Scalar, _) => *value,
            (Signature::LowerLower, true) => rho.transpose() * *value * *rho,
            (Signature::LowerLower, false) => rho_inv.transpose() * *value * *rho_inv,
            (Signature::UpperRows, true) => *rho_inv * *value,
            (Signature::UpperRows, false) => *rho * *value,
            (Signature::LowerRows, true) => rho.transpose() * *value,
            (Signature::LowerRows, false) => rho_inv.transpose() * *value,
        }
    }
}

/// A central finite-difference stencil on one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stencil {
    pub order: usize,
    pub axis: usize,
    pub kind: StencilKind,
}

const FIRST_2: [f64; 3] = [-0.5, 0.0, 0.5];
const FIRST_4: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
const FIRST_6: [f64; 7] = [-1.0 / 60.0, 3.0 / 20.0, -0.75, 0.0, 0.75, -3.0 / 20.0, 1.0 / 60.0];
const FIRST_8: [f64; 9] = [
    1.0 / 280.0,
    -4.0 / 105.0,
    0.2,
    -0.8,
    0.0,
    0.8,
    -0.2,
    4.0 / 105.0,
    -1.0 / 280.0,
];
const SECOND_2: [f64; 3] = [1.0, -2.0, 1.0];
const SECOND_4: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
const SECOND_6: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];
const SECOND_8: [f64; 9] = [
    -1.0 / 560.0,
    8.0 / 315.0,
    -0.2,
    1.6,
    -205.0 / 72.0,
    1.6,
    -0.2,
    8.0 / 315.0,
    -1.0 / 560.0,
];

impl Stencil {
    pub fn new(order: usize, axis: usize, kind: StencilKind) -> Result<Self> {
        if !matches!(order, 2 | 4 | 6 | 8) {
            return Err(Error::InvalidArgument(format!(
                "stencil order must be 2, 4, 6 or 8, got {order}"
            )));
        }
        Ok(Stencil { order, axis, kind })
    }

    /// Unscaled coefficients for offsets `-w..=w` (divide by `h` or `h²`).
    pub fn coefficients(&self) -> &'static [f64] {
        match (self.kind, self.order) {
            (StencilKind::First, 2) => &FIRST_2,
            (StencilKind::First, 4) => &FIRST_4,
            (StencilKind::First, 6) => &FIRST_6,
            (StencilKind::First, _) => &FIRST_8,
            (StencilKind::Second, 2) => &SECOND_2,
            (StencilKind::Second, 4) => &SECOND_4,
            (StencilKind::Second, 6) => &SECOND_6,
            (StencilKind::Second, _) => &SECOND_8,
        }
    }

    pub fn half_width(&self) -> usize {
        self.order / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseDomain {
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub periods: Vec<f64>,
    /// Holonomy along axis 0; `None` means untwisted.
    pub holonomy: Option<Mat>,
    pub mode: DomainMode,
    /// Sectional curvature of the unit reference metric (homogeneous mode only).
    pub homogeneous_curvature: f64,
    pub stencil_order: usize,
}

impl BaseDomain {
    pub fn grid(sizes: &[usize], periods: &[f64]) -> Result<Self> {
        let domain = BaseDomain {
            dim: sizes.len(),
            sizes: sizes.to_vec(),
            periods: periods.to_vec(),
            holonomy: None,
            mode: DomainMode::Grid,
            homogeneous_curvature: 0.0,
            stencil_order: 4,
        };
        domain.check()?;
        Ok(domain)
    }

    /// A single-node domain standing for a constant-curvature base of dimension `dim`.
    pub fn homogeneous(dim: usize, curvature: f64) -> Result<Self> {
        let domain = BaseDomain {
            dim,
            sizes: Vec::new(),
            periods: Vec::new(),
            holonomy: None,
            mode: DomainMode::Homogeneous,
            homogeneous_curvature: curvature,
            stencil_order: 4,
        };
        domain.check()?;
        Ok(domain)
    }

    pub fn with_holonomy(mut self, rho: Mat) -> Result<Self> {
        self.holonomy = Some(rho);
        self.check()?;
        Ok(self)
    }

    pub fn with_stencil_order(mut self, order: usize) -> Result<Self> {
        Stencil::new(order, 0, StencilKind::First)?;
        self.stencil_order = order;
        self.check()?;
        Ok(self)
    }

    /// Checks every domain invariant; used after construction and deserialization.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidDomain(msg));
        Stencil::new(self.stencil_order, 0, StencilKind::First)?;
        match self.mode {
            DomainMode::Grid => {
                if !(1..=2).contains(&self.dim) {
                    return bad(format!("grid dimension must be 1 or 2, got {}", self.dim));
                }
                if self.sizes.len() != self.dim || self.periods.len() != self.dim {
                    return bad(format!("expected {} sizes and periods", self.dim));
                }
                if let Some(s) = self.sizes.iter().find(|&&s| s < MIN_GRID_POINTS) {
                    return bad(format!("{s} grid points is below the minimum {MIN_GRID_POINTS}"));
                }
                if self.periods.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                    return bad(format!("periods must be positive, got {:?}", self.periods));
                }
            }
            DomainMode::Homogeneous => {
                if !(2..=3).contains(&self.dim) {
                    return bad(format!("homogeneous base dimension must be 2 or 3, got {}", self.dim));
                }
                if !self.sizes.is_empty() || !self.periods.is_empty() {
                    return bad("homogeneous domains carry no grid".into());
                }
                if self.holonomy.is_some() {
                    return bad("homogeneous domains carry no holonomy".into());
                }
                if !self.homogeneous_curvature.is_finite() {
                    return bad("homogeneous curvature must be finite".into());
                }
            }
        }
        if let Some(rho) = &self.holonomy {
            if !rho.is_square() || rho.rows() == 0 {
                return bad("holonomy must be a nonempty square matrix".into());
            }
            if (rho.det().abs() - 1.0).abs() > 1e-12 {
                return bad(format!("holonomy must have |det| = 1, got det = {}", rho.det()));
            }
            if self.dim != 1 && !is_identity(rho) {
                return bad("twisting is only supported over a one-dimensional base".into());
            }
        }
        Ok(())
    }

    pub fn is_grid(&self) -> bool {
        self.mode == DomainMode::Grid
    }

    pub fn node_count(&self) -> usize {
        match self.mode {
            DomainMode::Grid => self.sizes.iter().product(),
            DomainMode::Homogeneous => 1,
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.periods[axis] / self.sizes[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        match self.mode {
            DomainMode::Grid => (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min),
            DomainMode::Homogeneous => f64::INFINITY,
        }
    }

    /// Quadrature weight of one node.
    pub fn cell_measure(&self) -> f64 {
        match self.mode {
            DomainMode::Grid => (0..self.dim).map(|a| self.spacing(a)).product(),
            DomainMode::Homogeneous => 1.0,
        }
    }

    /// Row-major node index (the last axis varies fastest).
    pub fn node_index(&self, idx: &[usize]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.sizes[1] + idx[1],
        }
    }

    pub fn node_multi_index(&self, node: usize) -> [usize; 2] {
        match (self.mode, self.dim) {
            (DomainMode::Homogeneous, _) => [0, 0],
            (_, 1) => [node, 0],
            _ => [node / self.sizes[1], node % self.sizes[1]],
        }
    }

    /// Physical coordinates of a node.
    pub fn coords(&self, node: usize) -> [f64; 2] {
        if !self.is_grid() {
            return [0.0, 0.0];
        }
        let idx = self.node_multi_index(node);
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = idx[axis] as f64 * self.spacing(axis);
        }
        x
    }

    pub fn holonomy_or_identity(&self, n: usize) -> Mat {
        self.holonomy.unwrap_or_else(|| Mat::identity(n))
    }

    pub fn is_twisted(&self) -> bool {
        self.holonomy.as_ref().is_some_and(|r| !is_identity(r))
    }

    pub fn stencil(&self, axis: usize, kind: StencilKind) -> Stencil {
        Stencil { order: self.stencil_order, axis, kind }
    }

    /// Central difference of a matrix-valued field along `axis`.
    ///
    /// Stencil legs that cross the axis-0 seam first transport the value
    /// according to `sig`. Homogeneous domains return a zero field.
    pub fn derive(&self, field: &[Mat], sig: Signature, axis: usize, kind: StencilKind) -> Result<Vec<Mat>> {
        self.check_field_len(field.len())?;
        let Some(proto) = field.first() else {
            return Ok(Vec::new());
        };
        if !self.is_grid() {
            return Ok(vec![Mat::zeros(proto.rows(), proto.cols()); field.len()]);
        }
        if axis >= self.dim {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        let twisted = self.is_twisted() && sig != Signature::Scalar;
        if twisted && axis != 0 {
            return Err(Error::TwistedAxis(axis));
        }
        let (rho, rho_inv) = if twisted {
            let rho = self.holonomy.unwrap_or_else(|| Mat::identity(proto.rows()));
            if rho.rows() != proto.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "holonomy is {}x{} but the field has {} fiber rows",
                    rho.rows(),
                    rho.cols(),
                    proto.rows()
                )));
            }
            let inv = rho.inverse().ok_or_else(|| Error::InvalidDomain("singular holonomy".into()))?;
            (rho, inv)
        } else {
            (Mat::identity(1), Mat::identity(1))
        };

        let stencil = self.stencil(axis, kind);
        let coeffs = stencil.coefficients();
        let w = stencil.half_width() as isize;
        let h = self.spacing(axis);
        let scale = match kind {
            StencilKind::First => 1.0 / h,
            StencilKind::Second => 1.0 / (h * h),
        };
        let size = self.sizes[axis] as isize;
        let (stride, outer, inner) = self.axis_layout(axis);

        let mut out = vec![Mat::zeros(proto.rows(), proto.cols()); field.len()];
        for o in 0..outer {
            for inn in 0..inner {
                let base = o * size as usize * stride + inn;
                for i in 0..size {
                    let mut acc = Mat::zeros(proto.rows(), proto.cols());
                    for (leg, &c) in coeffs.iter().enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        let j = i + leg as isize - w;
                        let jj = if j < 0 {
                            (j + size) as usize
                        } else if j >= size {
                            (j - size) as usize
                        } else {
                            j as usize
                        };
                        let value = &field[base + jj * stride];
                        if twisted && j != jj as isize {
                            acc += sig.transport(value, &rho, &rho_inv, j >= size) * c;
                        } else {
                            acc += *value * c;
                        }
                    }
                    out[base + i as usize * stride] = acc * scale;
                }
            }
        }
        Ok(out)
    }

    /// Mixed or pure second derivative `∂_a ∂_b`; pure derivatives use the
    /// second-derivative stencil, mixed ones nest two first-derivative stencils.
    pub fn derive2(&self, field: &[Mat], sig: Signature, a: usize, b: usize) -> Result<Vec<Mat>> {
        if a == b {
            self.derive(field, sig, a, StencilKind::Second)
        } else {
            let inner = self.derive(field, sig, b, StencilKind::First)?;
            self.derive(&inner, sig, a, StencilKind::First)
        }
    }

    pub fn derive_scalar(&self, field: &[f64], axis: usize, kind: StencilKind) -> Result<Vec<f64>> {
        let wrapped: Vec<Mat> = field.iter().map(|&v| Mat::scalar(1, v)).collect();
        Ok(self
            .derive(&wrapped, Signature::Scalar, axis, kind)?
            .iter()
            .map(|m| m[(0, 0)])
            .collect())
    }

    /// Periodic trapezoidal quadrature `Σ density · volume_element · cell_measure`.
    pub fn integrate_base(&self, density: &[f64], volume_element: &[f64]) -> Result<f64> {
        self.check_field_len(density.len())?;
        self.check_field_len(volume_element.len())?;
        let mut sum = 0.0;
        for (node, (&d, &v)) in density.iter().zip(volume_element).enumerate() {
            if !(v > 0.0) {
                return Err(Error::NonpositiveVolume { node });
            }
            sum += d * v;
        }
        Ok(sum * self.cell_measure())
    }

    pub(crate) fn check_field_len(&self, len: usize) -> Result<()> {
        if len != self.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "field has {len} nodes, domain has {}",
                self.node_count()
            )));
        }
        Ok(())
    }

    /// (stride along axis, number of outer lines, number of inner lines).
    fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        match (self.dim, axis) {
            (1, _) => (1, 1, 1),
            (_, 0) => (self.sizes[1], 1, self.sizes[1]),
            _ => (1, self.sizes[0], 1),
        }
    }
}

fn is_identity(m: &Mat) -> bool {
    (*m - Mat::identity(m.rows())).max_abs() == 0.0
}

//! Small dense matrices (at most 3×3) used for per-node fiber and base tensors.

use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::math;

/// Largest supported matrix dimension (fiber rank and base dimension are both ≤ 3).
pub const MAX_DIM: usize = 3;

/// Row-major matrix with inline storage for up to `MAX_DIM × MAX_DIM` entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: u8,
    cols: u8,
    data: [f64; MAX_DIM * MAX_DIM],
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_DIM && cols <= MAX_DIM, "matrix dimension exceeds {MAX_DIM}");
        Mat {
            rows: rows as u8,
            cols: cols as u8,
            data: [0.0; MAX_DIM * MAX_DIM],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn scalar(n: usize, value: f64) -> Self {
        Mat::identity(n) * value
    }

    /// Builds a matrix from row-major entries; `entries.len()` must equal `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), rows * cols);
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = entries[r * cols + c];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows as usize
    }

    pub fn cols(&self) -> usize {
        self.cols as usize
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row_major(&self) -> impl Iterator<Item = f64> + '_ {
        let (r, c) = (self.rows(), self.cols());
        (0..r * c).map(move |k| self[(k / c, k % c)])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Mat::zeros(self.cols(), self.rows());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows().min(self.cols())).map(|i| self[(i, i)]).sum()
    }

    pub fn det(&self) -> f64 {
        debug_assert!(self.is_square());
        match self.rows() {
            0 => 1.0,
            1 => self[(0, 0)],
            2 => self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)],
            _ => {
                let m = |r, c| self[(r, c)];
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
                    - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            }
        }
    }

    /// Inverse via the adjugate; `None` when the determinant vanishes or is not finite.
    pub fn inverse(&self) -> Option<Self> {
        debug_assert!(self.is_square());
        let n = self.rows();
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let mut inv = Mat::zeros(n, n);
        match n {
            0 => {}
            1 => inv[(0, 0)] = 1.0 / d,
            2 => {
                inv[(0, 0)] = self[(1, 1)] / d;
                inv[(0, 1)] = -self[(0, 1)] / d;
                inv[(1, 0)] = -self[(1, 0)] / d;
                inv[(1, 1)] = self[(0, 0)] / d;
            }
            _ => {
                let m = |r, c| self[(r, c)];
                inv[(0, 0)] = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / d;
                inv[(0, 1)] = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / d;
                inv[(0, 2)] = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / d;
                inv[(1, 0)] = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / d;
                inv[(1, 1)] = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / d;
                inv[(1, 2)] = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / d;
                inv[(2, 0)] = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / d;
                inv[(2, 1)] = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / d;
                inv[(2, 2)] = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / d;
            }
        }
        Some(inv)
    }

    pub fn symmetrize(&self) -> Self {
        (*self + self.transpose()) * 0.5
    }

    /// Frobenius inner product `Σ a_ij b_ij`.
    pub fn dot(&self, other: &Mat) -> f64 {
        self.row_major().zip(other.row_major()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_frobenius(&self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn max_abs(&self) -> f64 {
        self.row_major().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn is_finite(&self) -> bool {
        self.row_major().all(f64::is_finite)
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Returns ascending eigenvalues and the matrix whose columns are the
    /// corresponding orthonormal eigenvectors.
    pub fn symmetric_eigen(&self) -> ([f64; MAX_DIM], Mat) {
        let n = self.rows();
        let mut a = self.symmetrize();
        let mut v = Mat::identity(n);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off <= 1e-30 * (1.0 + a.dot(&a)) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / math::sqrt(t * t + 1.0);
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order = [0usize, 1, 2];
        let mut vals = [0.0; MAX_DIM];
        for i in 0..n {
            vals[i] = a[(i, i)];
        }
        order[..n].sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(core::cmp::Ordering::Equal));
        let mut sorted = [0.0; MAX_DIM];
        let mut vecs = Mat::zeros(n, n);
        for (dst, &src) in order[..n].iter().enumerate() {
            sorted[dst] = vals[src];
            for k in 0..n {
                vecs[(k, dst)] = v[(k, src)];
            }
        }
        (sorted, vecs)
    }

    /// Smallest eigenvalue of the symmetric part (`+∞` for an empty matrix).
    pub fn min_eigenvalue(&self) -> f64 {
        if self.rows() == 0 {
            return f64::INFINITY;
        }
        self.symmetric_eigen().0[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        if self.rows() == 0 {
            return f64::NEG_INFINITY;
        }
        self.symmetric_eigen().0[self.rows() - 1]
    }

    /// Applies `func` to the eigenvalues of a symmetric matrix.
    pub fn map_symmetric(&self, func: impl Fn(f64) -> f64) -> Mat {
        let n = self.rows();
        let (vals, vecs) = self.symmetric_eigen();
        let mut d = Mat::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = func(vals[i]);
        }
        vecs * d * vecs.transpose()
    }

    pub fn exp_symmetric(&self) -> Mat {
        self.map_symmetric(math::exp)
    }

    pub fn sqrt_spd(&self) -> Mat {
        self.map_symmetric(math::sqrt)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows() && c < self.cols());
        &self.data[r * MAX_DIM + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows() && c < self.cols());
        &mut self.data[r * MAX_DIM + c]
    }
}

impl Add for Mat {
    type Output = Mat;

    #[inline]
    fn add(mut self, rhs: Mat) -> Mat {
        self += rhs;
        self
    }
}

impl AddAssign for Mat {
    #[inline]
    fn add_assign(&mut self, rhs: Mat) {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl Sub for Mat {
    type Output = Mat;

    #[inline]
    fn sub(mut self, rhs: Mat) -> Mat {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat {
    #[inline]
    fn sub_assign(&mut self, rhs: Mat) {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl Neg for Mat {
    type Output = Mat;

    fn neg(self) -> Mat {
        self * -1.0
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;

    #[inline]
    fn mul(mut self, rhs: f64) -> Mat {
        for a in self.data.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl Mul<Mat> for Mat {
    type Output = Mat;

    #[inline]
    fn mul(self, rhs: Mat) -> Mat {
        debug_assert_eq!(self.cols, rhs.rows);
        let mut out = Mat::zeros(self.rows(), rhs.cols());
        for r in 0..self.rows() {
            for c in 0..rhs.cols() {
                let mut acc = 0.0;
                for k in 0..self.cols() {
                    acc += self[(r, k)] * rhs[(k, c)];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip_3x3() {
        let m = Mat::from_row_major(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let prod = m * m.inverse().unwrap();
        assert!((prod - Mat::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Mat::from_row_major(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(m.inverse().is_none());
    }

    #[test]
    fn jacobi_reconstructs() {
        let m = Mat::from_row_major(3, 3, &[2.0, -1.0, 0.3, -1.0, 2.0, -1.0, 0.3, -1.0, 2.0]);
        let (vals, vecs) = m.symmetric_eigen();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let rebuilt = vecs * Mat::diag(&vals[..3]) * vecs.transpose();
        assert!((rebuilt - m).max_abs() < 1e-13);
    }

    #[test]
    fn exp_of_diagonal() {
        let x = Mat::diag(&[-2.0, 2.0]);
        let e = x.exp_symmetric();
        assert!((e[(0, 0)] - math::exp(-2.0)).abs() < 1e-14);
        assert!((e[(1, 1)] - math::exp(2.0)).abs() < 1e-12);
        assert!(e[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Mat::from_row_major(2, 2, &[3.0, 0.7, 0.7, 1.5]);
        let s = m.sqrt_spd();
        assert!((s * s - m).max_abs() < 1e-13);
    }
}

//! Reduced curvature of the invariant metric `G(dx+A)(dx+A) + g`.
//!
//! All dependence on the connection goes through its curvature `F` and the
//! covariant derivative `F_{αβ;γ}`, so the formulas are gauge independent and
//! hold at every node without choosing a section with `A = 0` there.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{BaseDomain, DomainMode, Signature, StencilKind};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::state::{pair_count, pair_index, BundleState};

pub type Arr3 = [[[f64; 3]; 3]; 3];
pub type Arr4 = [[[[f64; 3]; 3]; 3]; 3];

/// Christoffel symbols `Γ^σ_αβ` per node, indexed `[σ]` then `(α, β)`.
pub fn christoffel(g: &[Mat], domain: &BaseDomain) -> Result<Vec<[Mat; 3]>> {
    let n = domain.dim;
    let nodes = domain.node_count();
    domain.check_field_len(g.len())?;
    let mut out = vec![[Mat::zeros(n, n); 3]; nodes];
    if domain.mode == DomainMode::Homogeneous {
        return Ok(out);
    }
    let dg: Vec<Vec<Mat>> = (0..n)
        .map(|a| domain.derive(g, Signature::Scalar, a, StencilKind::First))
        .collect::<Result<_>>()?;
    for (node, gam) in out.iter_mut().enumerate() {
        let gi = g[node].inverse().ok_or(Error::SingularMetric { node })?;
        for (s, gam_s) in gam.iter_mut().enumerate().take(n) {
            for a in 0..n {
                for b in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += gi[(s, l)] * (dg[a][node][(l, b)] + dg[b][node][(l, a)] - dg[l][node][(a, b)]);
                    }
                    gam_s[(a, b)] = 0.5 * acc;
                }
            }
        }
    }
    Ok(out)
}

/// `G_{ij;αβ} = G_{ij,αβ} − Γ^σ_αβ G_{ij,σ}` per node, indexed `[α][β]`.
/// Fiber indices carry no connection correction.
pub fn covariant_hessian_g(big_g: &[Mat], gamma: &[[Mat; 3]], domain: &BaseDomain) -> Result<Vec<[[Mat; 3]; 3]>> {
    let n = domain.dim;
    let nf = big_g.first().map_or(0, Mat::rows);
    let nodes = domain.node_count();
    domain.check_field_len(big_g.len())?;
    domain.check_field_len(gamma.len())?;
    let mut out = vec![[[Mat::zeros(nf, nf); 3]; 3]; nodes];
    if domain.mode == DomainMode::Homogeneous {
        return Ok(out);
    }
    let d1: Vec<Vec<Mat>> = (0..n)
        .map(|a| domain.derive(big_g, Signature::LowerLower, a, StencilKind::First))
        .collect::<Result<_>>()?;
    for a in 0..n {
        for b in a..n {
            let d2 = if a == b {
                domain.derive(big_g, Signature::LowerLower, a, StencilKind::Second)?
            } else {
                domain.derive(&d1[b], Signature::LowerLower, a, StencilKind::First)?
            };
            for node in 0..nodes {
                let mut h = d2[node];
                for s in 0..n {
                    h -= d1[s][node] * gamma[node][s][(a, b)];
                }
                out[node][a][b] = h;
                out[node][b][a] = h;
            }
        }
    }
    Ok(out)
}

/// Derivative fields of a state shared by the curvature, flow and functional kernels.
pub struct Jets {
    pub n: usize,
    pub nf: usize,
    pub g: Vec<Mat>,
    pub gamma: Vec<[Mat; 3]>,
    /// `∂_c Γ^σ` indexed `[c][σ]`; empty unless the base is a 2D grid.
    pub d_gamma: Vec<[[Mat; 3]; 3]>,
    pub big_g: Vec<Mat>,
    pub d_big_g: Vec<[Mat; 3]>,
    pub hess: Vec<[[Mat; 3]; 3]>,
    /// Packed total curvature `N × n(n-1)/2`.
    pub two_form: Vec<Mat>,
    /// `∂_c` of the packed curvature, indexed `[c]`.
    pub d_two_form: Vec<[Mat; 3]>,
    pub homogeneous_curvature: Option<f64>,
}

impl Jets {
    pub fn new(state: &BundleState) -> Result<Self> {
        let domain = &state.domain;
        let n = state.base_dim();
        let nf = state.fiber_dim;
        let nodes = state.node_count();
        let gamma = christoffel(&state.base_metric, domain)?;
        let grid = domain.is_grid();

        let mut d_gamma = Vec::new();
        if grid && n >= 2 {
            d_gamma = vec![[[Mat::zeros(n, n); 3]; 3]; nodes];
            for s in 0..n {
                let field: Vec<Mat> = gamma.iter().map(|g| g[s]).collect();
                for c in 0..n {
                    let d = domain.derive(&field, Signature::Scalar, c, StencilKind::First)?;
                    for node in 0..nodes {
                        d_gamma[node][c][s] = d[node];
                    }
                }
            }
        }

        let mut d_big_g = vec![[Mat::zeros(nf, nf); 3]; nodes];
        if grid {
            for a in 0..n {
                let d = domain.derive(&state.fiber_metric, Signature::LowerLower, a, StencilKind::First)?;
                for node in 0..nodes {
                    d_big_g[node][a] = d[node];
                }
            }
        }
        let hess = covariant_hessian_g(&state.fiber_metric, &gamma, domain)?;

        let two_form = state.curvature_two_form()?;
        let p = pair_count(n);
        let mut d_two_form = vec![[Mat::zeros(nf, p); 3]; nodes];
        if grid && p > 0 {
            for c in 0..n {
                let d = domain.derive(&two_form, Signature::UpperRows, c, StencilKind::First)?;
                for node in 0..nodes {
                    d_two_form[node][c] = d[node];
                }
            }
        }

        let homogeneous_curvature = if grid {
            None
        } else {
            for g in &state.base_metric {
                let mu = g[(0, 0)];
                if (*g - Mat::scalar(n, mu)).max_abs() > 1e-12 * mu.abs() {
                    return Err(Error::InvalidState(
                        "homogeneous base metric must be a multiple of the reference metric".into(),
                    ));
                }
            }
            Some(domain.homogeneous_curvature)
        };

        Ok(Jets {
            n,
            nf,
            g: state.base_metric.clone(),
            gamma,
            d_gamma,
            big_g: state.fiber_metric.clone(),
            d_big_g,
            hess,
            two_form,
            d_two_form,
            homogeneous_curvature,
        })
    }

    pub fn node_count(&self) -> usize {
        self.g.len()
    }

    pub fn node(&self, node: usize) -> Result<NodeJet> {
        let (n, nf) = (self.n, self.nf);
        let g = self.g[node];
        let gi = g.inverse().filter(Mat::is_finite).ok_or(Error::SingularMetric { node })?;
        let big_g = self.big_g[node];
        let big_gi = big_g.inverse().filter(Mat::is_finite).ok_or(Error::SingularMetric { node })?;
        let gamma = self.gamma[node];

        let mut m = [Mat::zeros(nf, nf); 3];
        let mut trace_m = [0.0; 3];
        for a in 0..n {
            m[a] = big_gi * self.d_big_g[node][a];
            trace_m[a] = m[a].trace();
        }

        let mut f: Arr3 = [[[0.0; 3]; 3]; 3];
        let packed = &self.two_form[node];
        for i in 0..nf {
            for a in 0..n {
                for b in (a + 1)..n {
                    let v = packed[(i, pair_index(n, a, b))];
                    f[i][a][b] = v;
                    f[i][b][a] = -v;
                }
            }
        }
        let mut df: Arr4 = [[[[0.0; 3]; 3]; 3]; 3];
        for c in 0..n {
            let dp = &self.d_two_form[node][c];
            for i in 0..nf {
                for a in 0..n {
                    for b in 0..n {
                        let partial = if a < b {
                            dp[(i, pair_index(n, a, b))]
                        } else if a > b {
                            -dp[(i, pair_index(n, b, a))]
                        } else {
                            0.0
                        };
                        let mut conn = 0.0;
                        for s in 0..n {
                            conn += gamma[s][(c, a)] * f[i][s][b] + gamma[s][(c, b)] * f[i][a][s];
                        }
                        df[c][i][a][b] = partial - conn;
                    }
                }
            }
        }

        let (riemann, ricci_base) = match self.homogeneous_curvature {
            Some(kappa) => homogeneous_base_curvature(n, g[(0, 0)], kappa),
            None => grid_base_curvature(n, &g, &gamma, self.d_gamma.get(node)),
        };
        let scalar_base = gi.dot(&ricci_base);

        Ok(NodeJet {
            n,
            nf,
            g,
            gi,
            gamma,
            riemann,
            ricci_base,
            scalar_base,
            big_g,
            big_gi,
            d_big_g: self.d_big_g[node],
            hess: self.hess[node],
            m,
            trace_m,
            f,
            df,
        })
    }
}

fn homogeneous_base_curvature(n: usize, mu: f64, kappa: f64) -> ([f64; 81], Mat) {
    // Sectional curvature κ̂/μ for g = μ·(unit metric), in an orthonormal frame of the unit metric.
    let mut riem = [0.0; 81];
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for e in 0..n {
                    riem[idx4(a, b, c, e)] = kappa * mu * (d(a, c) * d(b, e) - d(a, e) * d(b, c));
                }
            }
        }
    }
    (riem, Mat::scalar(n, (n as f64 - 1.0) * kappa))
}

fn grid_base_curvature(n: usize, g: &Mat, gamma: &[Mat; 3], d_gamma: Option<&[[Mat; 3]; 3]>) -> ([f64; 81], Mat) {
    let mut riem = [0.0; 81];
    let mut ricci = Mat::zeros(n, n);
    let Some(dg) = d_gamma else {
        return (riem, ricci);
    };
    // R^ρ_σμν = ∂_μ Γ^ρ_νσ − ∂_ν Γ^ρ_μσ + Γ^ρ_μλ Γ^λ_νσ − Γ^ρ_νλ Γ^λ_μσ
    let mut up = [0.0; 81];
    for r in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let mut v = dg[mu][r][(nu, s)] - dg[nu][r][(mu, s)];
                    for l in 0..n {
                        v += gamma[r][(mu, l)] * gamma[l][(nu, s)] - gamma[r][(nu, l)] * gamma[l][(mu, s)];
                    }
                    up[idx4(r, s, mu, nu)] = v;
                }
            }
        }
    }
    for a in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let mut v = 0.0;
                    for r in 0..n {
                        v += g[(a, r)] * up[idx4(r, s, mu, nu)];
                    }
                    riem[idx4(a, s, mu, nu)] = v;
                }
            }
        }
    }
    for s in 0..n {
        for nu in 0..n {
            let mut v = 0.0;
            for r in 0..n {
                v += up[idx4(r, s, r, nu)];
            }
            ricci[(s, nu)] = v;
        }
    }
    (riem, ricci.symmetrize())
}

#[inline]
pub fn idx4(a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * 3 + b) * 3 + c) * 3 + d
}

/// Everything the reduced formulas need at one node.
#[derive(Clone, Debug)]
pub struct NodeJet {
    pub n: usize,
    pub nf: usize,
    pub g: Mat,
    pub gi: Mat,
    pub gamma: [Mat; 3],
    /// `R_αβγδ` flattened with [`idx4`].
    pub riemann: [f64; 81],
    pub ricci_base: Mat,
    pub scalar_base: f64,
    pub big_g: Mat,
    pub big_gi: Mat,
    pub d_big_g: [Mat; 3],
    pub hess: [[Mat; 3]; 3],
    /// `G⁻¹ ∂_α G`.
    pub m: [Mat; 3],
    pub trace_m: [f64; 3],
    /// `F^i_αβ`, indexed `[i][α][β]`.
    pub f: Arr3,
    /// `F^i_{αβ;γ}`, indexed `[γ][i][α][β]`.
    pub df: Arr4,
}

impl NodeJet {
    /// `g^{αβ} tr(G⁻¹G_α G⁻¹G_β)`.
    pub fn fiber_energy(&self) -> f64 {
        let mut e = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                e += self.gi[(a, b)] * (self.m[a] * self.m[b]).trace();
            }
        }
        e
    }

    /// `(GF)_{iαβ} = G_ik F^k_αβ`.
    fn lowered_f(&self) -> Arr3 {
        let mut out: Arr3 = [[[0.0; 3]; 3]; 3];
        for i in 0..self.nf {
            for a in 0..self.n {
                for b in 0..self.n {
                    let mut v = 0.0;
                    for k in 0..self.nf {
                        v += self.big_g[(i, k)] * self.f[k][a][b];
                    }
                    out[i][a][b] = v;
                }
            }
        }
        out
    }

    /// `g^{αγ} g^{βδ} (GF)_{iαβ} (GF)_{jγδ}` as an `N × N` matrix.
    pub fn f_fiber_square(&self) -> Mat {
        let gf = self.lowered_f();
        let mut out = Mat::zeros(self.nf, self.nf);
        for i in 0..self.nf {
            for j in 0..self.nf {
                out[(i, j)] = self.contract_pairs(&gf[i], &gf[j]);
            }
        }
        out
    }

    fn contract_pairs(&self, x: &[[f64; 3]; 3], y: &[[f64; 3]; 3]) -> f64 {
        let n = self.n;
        let mut v = 0.0;
        for a in 0..n {
            for b in 0..n {
                if x[a][b] == 0.0 {
                    continue;
                }
                for c in 0..n {
                    for d in 0..n {
                        v += self.gi[(a, c)] * self.gi[(b, d)] * x[a][b] * y[c][d];
                    }
                }
            }
        }
        v
    }

    /// `|F|² = g^{αγ} g^{βδ} G_ij F^i_αβ F^j_γδ`.
    pub fn f_norm2(&self) -> f64 {
        (self.big_gi * self.f_fiber_square()).trace()
    }

    /// `g^{γδ} G_ij F^i_αγ F^j_βδ` as an `n × n` matrix.
    pub fn f_base_square(&self) -> Mat {
        let gf = self.lowered_f();
        let n = self.n;
        let mut out = Mat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut v = 0.0;
                for i in 0..self.nf {
                    for c in 0..n {
                        for d in 0..n {
                            v += self.gi[(c, d)] * gf[i][a][c] * self.f[i][b][d];
                        }
                    }
                }
                out[(a, b)] = v;
            }
        }
        out
    }

    /// `tr(G⁻¹G_α G⁻¹G_β)` as an `n × n` matrix.
    pub fn dirichlet_tensor(&self) -> Mat {
        let mut out = Mat::zeros(self.n, self.n);
        for a in 0..self.n {
            for b in 0..self.n {
                out[(a, b)] = (self.m[a] * self.m[b]).trace();
            }
        }
        out
    }

    fn contract_base(&self, t: &[[Mat; 3]; 3]) -> Mat {
        let mut out = Mat::zeros(self.nf, self.nf);
        for a in 0..self.n {
            for b in 0..self.n {
                out += t[a][b] * self.gi[(a, b)];
            }
        }
        out
    }

    /// `g^{αβ} G_α G⁻¹ G_β`.
    fn gradient_square(&self) -> Mat {
        let mut out = Mat::zeros(self.nf, self.nf);
        for a in 0..self.n {
            for b in 0..self.n {
                out += self.d_big_g[a] * self.big_gi * self.d_big_g[b] * self.gi[(a, b)];
            }
        }
        out
    }

    pub fn ricci_fiber(&self) -> Mat {
        let mut tg = Mat::zeros(self.nf, self.nf);
        for a in 0..self.n {
            for b in 0..self.n {
                tg += self.d_big_g[b] * (self.gi[(a, b)] * self.trace_m[a]);
            }
        }
        let r = self.contract_base(&self.hess) * -0.5 - tg * 0.25 + self.gradient_square() * 0.5
            + self.f_fiber_square() * 0.25;
        r.symmetrize()
    }

    /// `R̄_iα` as an `N × n` matrix.
    pub fn ricci_mixed(&self) -> Mat {
        let (n, nf) = (self.n, self.nf);
        let mut out = Mat::zeros(nf, n);
        for i in 0..nf {
            for a in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for d in 0..n {
                        let gcd = self.gi[(c, d)];
                        if gcd == 0.0 {
                            continue;
                        }
                        for k in 0..nf {
                            v += 0.5 * gcd * self.big_g[(i, k)] * self.df[d][k][a][c];
                            v += 0.5 * gcd * self.d_big_g[c][(i, k)] * self.f[k][a][d];
                            v += 0.25 * gcd * self.trace_m[c] * self.big_g[(i, k)] * self.f[k][a][d];
                        }
                    }
                }
                out[(i, a)] = v;
            }
        }
        out
    }

    pub fn ricci_basecomp(&self) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n, n);
        let ff = self.f_base_square();
        for a in 0..n {
            for b in 0..n {
                out[(a, b)] = self.ricci_base[(a, b)] - 0.5 * (self.big_gi * self.hess[a][b]).trace()
                    + 0.25 * (self.m[a] * self.m[b]).trace()
                    - 0.5 * ff[(a, b)];
            }
        }
        out.symmetrize()
    }

    pub fn scalar_total(&self) -> f64 {
        let n = self.n;
        let mut v = self.scalar_base;
        for a in 0..n {
            for b in 0..n {
                let gab = self.gi[(a, b)];
                v += gab
                    * (-(self.big_gi * self.hess[a][b]).trace() + 0.75 * (self.m[a] * self.m[b]).trace()
                        - 0.25 * self.trace_m[a] * self.trace_m[b]);
            }
        }
        v - 0.25 * self.f_norm2()
    }

    /// Right-hand side of the fiber-metric equation of the reduced flow.
    pub fn rhs_fiber(&self) -> Mat {
        (self.contract_base(&self.hess) - self.gradient_square() - self.f_fiber_square() * 0.5).symmetrize()
    }

    /// Right-hand side of the connection equation, an `N × n` matrix.
    pub fn rhs_connection(&self) -> Mat {
        let (n, nf) = (self.n, self.nf);
        let mut out = Mat::zeros(nf, n);
        for i in 0..nf {
            for a in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    for d in 0..n {
                        let gcd = self.gi[(c, d)];
                        if gcd == 0.0 {
                            continue;
                        }
                        v -= gcd * self.df[d][i][a][c];
                        for k in 0..nf {
                            v -= gcd * self.m[c][(i, k)] * self.f[k][a][d];
                        }
                    }
                }
                out[(i, a)] = v;
            }
        }
        out
    }

    /// Right-hand side of the base-metric equation.
    pub fn rhs_base(&self) -> Mat {
        (self.ricci_base * -2.0 + self.dirichlet_tensor() * 0.5 + self.f_base_square()).symmetrize()
    }

    pub fn curvature(&self) -> NodeCurvature {
        let n = self.n;
        let p = pair_count(n);
        let pack = |arr: &Arr3| {
            let mut m = Mat::zeros(self.nf, p);
            for i in 0..self.nf {
                for a in 0..n {
                    for b in (a + 1)..n {
                        m[(i, pair_index(n, a, b))] = arr[i][a][b];
                    }
                }
            }
            m
        };
        let mut two_form_cov = [Mat::zeros(self.nf, p); 3];
        for (c, slot) in two_form_cov.iter_mut().enumerate().take(n) {
            *slot = pack(&self.df[c]);
        }
        NodeCurvature {
            christoffel: self.gamma,
            hessian_g: self.hess,
            two_form: pack(&self.f),
            two_form_cov,
            riemann_base: self.riemann,
            ricci_base: self.ricci_base,
            scalar_base: self.scalar_base,
            ricci_fiber: self.ricci_fiber(),
            ricci_mixed: self.ricci_mixed(),
            ricci_basecomp: self.ricci_basecomp(),
            scalar_total: self.scalar_total(),
        }
    }
}

/// Reduced curvature quantities at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCurvature {
    /// `Γ^σ_αβ` indexed `[σ]` then `(α, β)`.
    pub christoffel: [Mat; 3],
    /// `G_{ij;αβ}` indexed `[α][β]`.
    pub hessian_g: [[Mat; 3]; 3],
    /// Packed `F^i_αβ`.
    pub two_form: Mat,
    /// Packed `F^i_{αβ;γ}` indexed `[γ]`.
    pub two_form_cov: [Mat; 3],
    /// `R_αβγδ` flattened with [`idx4`].
    pub riemann_base: [f64; 81],
    pub ricci_base: Mat,
    pub scalar_base: f64,
    pub ricci_fiber: Mat,
    pub ricci_mixed: Mat,
    pub ricci_basecomp: Mat,
    pub scalar_total: f64,
}

impl NodeCurvature {
    /// `R̄ − (g^{αβ} R̄_αβ + G^{ij} R̄_ij)`.
    pub fn trace_defect(&self, g: &Mat, big_g: &Mat) -> f64 {
        let gi = g.inverse().unwrap_or_else(|| Mat::zeros(g.rows(), g.cols()));
        let big_gi = big_g.inverse().unwrap_or_else(|| Mat::zeros(big_g.rows(), big_g.cols()));
        self.scalar_total - gi.dot(&self.ricci_basecomp) - big_gi.dot(&self.ricci_fiber)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvaturePackage {
    pub nodes: Vec<NodeCurvature>,
}

impl CurvaturePackage {
    pub fn scalar_total(&self) -> Vec<f64> {
        self.nodes.iter().map(|c| c.scalar_total).collect()
    }
}

pub fn curvature_package(state: &BundleState) -> Result<CurvaturePackage> {
    let jets = Jets::new(state)?;
    let nodes = (0..jets.node_count())
        .map(|node| jets.node(node).map(|j| j.curvature()))
        .collect::<Result<_>>()?;
    Ok(CurvaturePackage { nodes })
}

/// Nodal scalar curvature `R̄` without building the full package.
pub fn scalar_total_field(state: &BundleState) -> Result<Vec<f64>> {
    let jets = Jets::new(state)?;
    (0..jets.node_count()).map(|node| jets.node(node).map(|j| j.scalar_total())).collect()
}

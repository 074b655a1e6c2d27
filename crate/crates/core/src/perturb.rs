//! Seeded, band-limited perturbations of the fiber metric.
//!
//! The perturbation acts as `G' = Eᵀ K^{1/2} exp(εS) K^{1/2} E`, where
//! `E(x) = exp(x log ρ / P)` absorbs the holonomy so that `K = E⁻ᵀ G E⁻¹` is
//! periodic. `S` is a zero-mean combination of the lowest four Fourier modes,
//! traceless when `N ≥ 2` (so `det G` is unchanged), scaled to `max |S| = 1`.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::math;
use crate::domain::BaseDomain;
use crate::state::BundleState;

/// Wave vectors used on 1D and 2D grids.
fn wave_vectors(dim: usize) -> Result<Vec<[i32; 2]>> {
    match dim {
        1 => Ok((1..=4).map(|k| [k, 0]).collect()),
        2 => Ok(alloc::vec![[1, 0], [0, 1], [1, 1], [1, -1]]),
        _ => Err(Error::InvalidArgument(format!("perturbations need a 1D or 2D grid, got dim {dim}"))),
    }
}

fn random_symmetric<R: Rng>(rng: &mut R, nf: usize) -> Mat {
    let mut m = Mat::zeros(nf, nf);
    for i in 0..nf {
        for j in i..nf {
            let v: f64 = rng.gen_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if nf >= 2 {
        let tr = m.trace() / nf as f64;
        m -= Mat::scalar(nf, tr);
    }
    m
}

/// The normalized mode field `S` for `state`'s grid.
pub fn mode_field(state: &BundleState, seed: u64) -> Result<Vec<Mat>> {
    let domain = &state.domain;
    if !domain.is_grid() {
        return Err(Error::NotGridMode);
    }
    let nf = state.fiber_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves = wave_vectors(domain.dim)?;
    let coeffs: Vec<(Mat, Mat)> =
        waves.iter().map(|_| (random_symmetric(&mut rng, nf), random_symmetric(&mut rng, nf))).collect();
    let mut field: Vec<Mat> = (0..state.node_count())
        .map(|node| {
            let x = domain.coords(node);
            let mut s = Mat::zeros(nf, nf);
            for (k, (c, d)) in waves.iter().zip(&coeffs) {
                let mut phase = 0.0;
                for a in 0..domain.dim {
                    phase += 2.0 * math::PI * k[a] as f64 * x[a] / domain.periods[a];
                }
                s += *c * math::cos(phase) + *d * math::sin(phase);
            }
            s
        })
        .collect();
    let peak = field.iter().map(Mat::max_abs).fold(0.0, f64::max);
    if peak > 0.0 {
        for s in &mut field {
            *s = *s * (1.0 / peak);
        }
    }
    Ok(field)
}

/// Holonomy-absorbing frame `E(x) = exp(x log ρ / P)` along axis 0.
fn holonomy_frame(state: &BundleState) -> Result<Vec<Mat>> {
    let domain = &state.domain;
    let nf = state.fiber_dim;
    let Some(rho) = domain.holonomy else {
        return Ok(alloc::vec![Mat::identity(nf); state.node_count()]);
    };
    let sym = (rho - rho.transpose()).max_abs() <= 1e-12 * (1.0 + rho.max_abs());
    if !sym || rho.min_eigenvalue() <= 0.0 {
        return Err(Error::InvalidArgument("perturbation needs a symmetric positive holonomy".into()));
    }
    let log_rho = rho.symmetrize().map_symmetric(math::ln);
    let period = domain.periods[0];
    Ok((0..state.node_count())
        .map(|node| (log_rho * (domain.coords(node)[0] / period)).exp_symmetric())
        .collect())
}

/// Perturbs the fiber metric with amplitude `epsilon`. The base metric and the
/// connection are left untouched.
pub fn perturb_fiber(state: &BundleState, epsilon: f64, seed: u64) -> Result<BundleState> {
    if !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("perturbation amplitude must be finite, got {epsilon}")));
    }
    let s = mode_field(state, seed)?;
    let frame = holonomy_frame(state)?;
    let mut out = state.clone();
    for node in 0..state.node_count() {
        let e = frame[node];
        let ei = e.inverse().ok_or(Error::SingularMetric { node })?;
        let k = (ei.transpose() * state.fiber_metric[node] * ei).symmetrize();
        let root = k.sqrt_spd();
        let kp = root * (s[node] * epsilon).exp_symmetric() * root;
        out.fiber_metric[node] = (e.transpose() * kp * e).symmetrize();
    }
    Ok(out)
}

/// Smooth seeded state on `domain`: every field is a band-limited analytic
/// function with relative amplitude about `amplitude`, the fiber metric carries
/// the domain's holonomy, and in 2D the connection has a random background
/// curvature.
pub fn analytic_state(domain: BaseDomain, fiber_dim: usize, seed: u64, amplitude: f64) -> Result<BundleState> {
    domain.check()?;
    let n = domain.dim;
    let flat = BundleState::flat(domain, fiber_dim, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1e1d);
    let mut field_seed = || rng.gen::<u64>();
    let frame = holonomy_frame(&flat)?;
    let s_fiber = mode_field_full(&flat, fiber_dim, field_seed())?;
    let s_base = mode_field_full(&flat, n, field_seed())?;
    let mut out = flat.clone();
    let nf = fiber_dim;
    let conn_modes: Vec<Vec<Mat>> = (0..n).map(|_| mode_field_full(&flat, nf, field_seed())).collect::<Result<_>>()?;
    for node in 0..flat.node_count() {
        let e = frame[node];
        let k = (s_fiber[node] * amplitude).exp_symmetric();
        out.fiber_metric[node] = (e.transpose() * k * e).symmetrize();
        out.base_metric[node] = (s_base[node] * amplitude).exp_symmetric();
        let mut a = Mat::zeros(nf, n);
        for (alpha, modes) in conn_modes.iter().enumerate() {
            let m = modes[node];
            for i in 0..nf {
                a[(i, alpha)] = amplitude * m[(i, 0)];
            }
        }
        // A(x + P) = ρ⁻¹ A(x) on a twisted axis.
        out.connection.periodic[node] = e.inverse().ok_or(Error::SingularMetric { node })? * a;
    }
    if n >= 2 {
        for i in 0..nf {
            for p in 0..crate::state::pair_count(n) {
                out.connection.background[(i, p)] = amplitude * rng.gen_range(-1.0..1.0);
            }
        }
    }
    out.check_shapes()?;
    Ok(out)
}

/// Smooth seeded scalar field with zero-mode `0` and peak about `amplitude`.
pub fn smooth_scalar(state: &BundleState, seed: u64, amplitude: f64) -> Result<Vec<f64>> {
    Ok(mode_field_full(state, 1, seed)?.iter().map(|m| amplitude * m[(0, 0)]).collect())
}

/// Like [`mode_field`] but for an arbitrary square size and without the
/// traceless projection.
fn mode_field_full(state: &BundleState, size: usize, seed: u64) -> Result<Vec<Mat>> {
    let domain = &state.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves = wave_vectors(domain.dim)?;
    let mut sym = || {
        let mut m = Mat::zeros(size, size);
        for i in 0..size {
            for j in i..size {
                let v: f64 = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    let coeffs: Vec<(Mat, Mat, Mat)> = waves.iter().map(|_| (sym(), sym(), sym())).collect();
    let base = coeffs[0].2;
    Ok((0..state.node_count())
        .map(|node| {
            let x = domain.coords(node);
            let mut s = base * 0.5;
            for (k, (c, d, _)) in waves.iter().zip(&coeffs).take(3) {
                let mut phase = 0.0;
                for a in 0..domain.dim {
                    phase += 2.0 * math::PI * k[a] as f64 * x[a] / domain.periods[a];
                }
                s += *c * math::cos(phase) + *d * math::sin(phase);
            }
            s * 0.5
        })
        .collect())
}

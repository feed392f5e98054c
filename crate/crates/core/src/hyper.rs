//! Hyper-parameter learning: activity rate, slab variances and off-grid offsets.
//!
//! The off-grid step minimises, axis by axis,
//! `J(x) = (1/L)·Σ_l ‖m^g_l − W(ω)·m^h_l‖² + Σ_c σ^h_c·‖W(ω)_{:,c}‖²`,
//! which is exactly quadratic in the offsets `x` of one axis: `J = const + xᵀΞx − 2χᵀx`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::config::{Axis, GridSpec, OffGridParams};
use crate::dictionary::{DictionarySet, LinearOperator, OperatorMode};
use crate::error::{shape_err, Error, Result};
use crate::{CMat, C64};

/// Bounds for the activity rate.
pub const RHO_MIN: f64 = 1e-6;
pub const RHO_MAX: f64 = 1.0 - 1e-6;

/// Mean activity, clamped to `[RHO_MIN, RHO_MAX]`.
pub fn update_rho(zeta: &[f64]) -> f64 {
    if zeta.is_empty() {
        return RHO_MIN;
    }
    let m = zeta.iter().sum::<f64>() / zeta.len() as f64;
    m.clamp(RHO_MIN, RHO_MAX)
}

/// Per-grid-point second moment averaged over the subband columns.
///
/// `mu_h` and `tau_h` are `ncols × L`.
pub fn update_sigma(mu_h: &CMat, tau_h: &DMatrix<f64>) -> Vec<f64> {
    let l = mu_h.ncols().max(1) as f64;
    (0..mu_h.nrows())
        .map(|c| {
            (0..mu_h.ncols())
                .map(|j| mu_h[(c, j)].norm_sqr() + tau_h[(c, j)])
                .sum::<f64>()
                / l
        })
        .collect()
}

/// Posterior moments that enter the off-grid objective.
#[derive(Debug, Clone)]
pub struct OffGridMoments {
    /// Posterior means of the observation-domain channel, `nrows × L`.
    pub m_g: CMat,
    /// Posterior means of the grid coefficients, `ncols × L`.
    pub m_h: CMat,
    /// Diagonal of `Σ^h`: `(1/L)·Σ_l τ^h_{c,l}`.
    pub sigma_h: Vec<f64>,
}

impl OffGridMoments {
    fn check(&self, dict: &DictionarySet) -> Result<()> {
        let (nr, nc) = (dict.nrows(), dict.ncols());
        if self.m_g.nrows() != nr || self.m_h.nrows() != nc || self.sigma_h.len() != nc {
            return Err(shape_err(
                format!("m_g {nr} rows, m_h and sigma_h {nc} rows"),
                format!(
                    "m_g {} rows, m_h {} rows, sigma_h {}",
                    self.m_g.nrows(),
                    self.m_h.nrows(),
                    self.sigma_h.len()
                ),
            ));
        }
        if self.m_g.ncols() != self.m_h.ncols() {
            return Err(shape_err(
                format!("{} columns in m_h", self.m_g.ncols()),
                format!("{}", self.m_h.ncols()),
            ));
        }
        Ok(())
    }

    fn l(&self) -> f64 {
        self.m_h.ncols().max(1) as f64
    }
}

/// `J(x)` evaluated with a dense `W(ω)` whose `axis` offsets are replaced by `x`.
pub fn em_offgrid_objective(
    dict: &DictionarySet,
    omega: &OffGridParams,
    axis: Axis,
    x: &[f64],
    mom: &OffGridMoments,
) -> Result<f64> {
    mom.check(dict)?;
    let mut w_om = omega.clone();
    if x.len() != w_om.axis(axis).len() {
        return Err(shape_err(
            format!("{} offsets", w_om.axis(axis).len()),
            format!("{}", x.len()),
        ));
    }
    w_om.axis_mut(axis).copy_from_slice(x);
    let w = dict.compose_dense(&w_om)?;
    let resid = &mom.m_g - &w * &mom.m_h;
    let fit = resid.iter().map(|v| v.norm_sqr()).sum::<f64>() / mom.l();
    let trace: f64 = (0..w.ncols())
        .map(|c| mom.sigma_h[c] * w.column(c).iter().map(|v| v.norm_sqr()).sum::<f64>())
        .sum();
    Ok(fit + trace)
}

/// `J(x) = const + xᵀΞx − 2χᵀx` for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub xi: DMatrix<f64>,
    pub chi: DVector<f64>,
}

impl QuadraticForm {
    /// `xᵀΞx − 2χᵀx`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        (x.transpose() * &self.xi * &x)[(0, 0)] - 2.0 * self.chi.dot(&x)
    }
}

/// `m^g − W_{\x}·m^h`, where `W_{\x}` is `W(ω)` with the offsets of `axis` set to zero.
fn residual_without_axis(
    dict: &DictionarySet,
    omega: &OffGridParams,
    axis: Axis,
    mom: &OffGridMoments,
) -> Result<CMat> {
    let mut om = omega.clone();
    om.axis_mut(axis).iter_mut().for_each(|v| *v = 0.0);
    let op = dict.compose(&om, OperatorMode::Kron)?;
    Ok(&mom.m_g - op.apply(&mom.m_h)?)
}

/// Per-axis-index sums of `Σ^h` and the cross-axis trace term of `χ`.
fn trace_terms(
    dict: &DictionarySet,
    omega: &OffGridParams,
    axis: Axis,
    mom: &OffGridMoments,
) -> (Vec<f64>, Vec<f64>) {
    let n_x = dict.grid.len(axis);
    let gram = dict.row_coef_gram();
    let x = axis.index();
    let rmap = dict.r_map(axis);
    let others: Vec<(f64, Vec<f64>)> = Axis::ALL
        .iter()
        .filter(|&&y| y != axis)
        .map(|&y| (gram[x][y.index()], dict.replicate(y, omega.axis(y))))
        .collect();
    let mut diag = vec![0.0; n_x];
    let mut chi2 = vec![0.0; n_x];
    for (c, &i) in rmap.iter().enumerate() {
        let s = mom.sigma_h[c];
        diag[i] += gram[x][x] * s;
        let cross: f64 = others.iter().map(|(g, o)| g * o[c]).sum();
        chi2[i] -= s * cross;
    }
    (diag, chi2)
}

/// `(1/L)·Σ_l Re(conj(m^h_l) ⊙ Ẇ_x^H e_l)` summed per axis index.
fn chi_data_term(dict: &DictionarySet, axis: Axis, mom: &OffGridMoments, e: &CMat) -> Vec<f64> {
    let rmap = dict.r_map(axis);
    let mut chi = vec![0.0; dict.grid.len(axis)];
    for l in 0..e.ncols() {
        let v = dict.adjoint_wdot_vec(axis, e.column(l).as_slice());
        for (c, &i) in rmap.iter().enumerate() {
            chi[i] += (mom.m_h[(c, l)].conj() * v[c]).re;
        }
    }
    let inv_l = 1.0 / mom.l();
    chi.iter_mut().for_each(|v| *v *= inv_l);
    chi
}

/// Exact `Ξ_x`, `χ_x` built from the columns `Ẇ_x·(m^h_l restricted to axis index i)`.
pub fn build_quadratic_exact(
    dict: &DictionarySet,
    omega: &OffGridParams,
    axis: Axis,
    mom: &OffGridMoments,
) -> Result<QuadraticForm> {
    mom.check(dict)?;
    omega.check_shape(&dict.grid)?;
    let n_x = dict.grid.len(axis);
    let rmap = dict.r_map(axis);
    let e = residual_without_axis(dict, omega, axis, mom)?;
    let inv_l = 1.0 / mom.l();
    let mut xi = DMatrix::<f64>::zeros(n_x, n_x);
    let mut chi = DVector::<f64>::zeros(n_x);
    for l in 0..mom.m_h.ncols() {
        let a: Vec<Vec<C64>> = (0..n_x)
            .map(|i| {
                let masked: Vec<C64> = rmap
                    .iter()
                    .enumerate()
                    .map(|(c, &ic)| if ic == i { mom.m_h[(c, l)] } else { C64::new(0.0, 0.0) })
                    .collect();
                dict.apply_wdot_vec(axis, &masked)
            })
            .collect();
        let el = e.column(l);
        for i in 0..n_x {
            chi[i] += inv_l * a[i].iter().zip(el.iter()).map(|(p, q)| (p.conj() * q).re).sum::<f64>();
            for j in i..n_x {
                let s: f64 = a[i].iter().zip(a[j].iter()).map(|(p, q)| (p.conj() * q).re).sum();
                xi[(i, j)] += inv_l * s;
                if j != i {
                    xi[(j, i)] += inv_l * s;
                }
            }
        }
    }
    let (diag, chi2) = trace_terms(dict, omega, axis, mom);
    for i in 0..n_x {
        xi[(i, i)] += diag[i];
        chi[i] += chi2[i];
    }
    Ok(QuadraticForm { xi, chi })
}

/// Low-complexity `Ξ_x`, `χ_x` that replace the Grams of the non-target factors by
/// scaled identities, keeping the Doppler Gram at the current `η̂` for the
/// delay and angle axes.
///
/// Requires a square grid on delay and both angle axes.
pub fn build_quadratic_fast(
    dict: &DictionarySet,
    omega: &OffGridParams,
    axis: Axis,
    mom: &OffGridMoments,
) -> Result<QuadraticForm> {
    mom.check(dict)?;
    omega.check_shape(&dict.grid)?;
    let g = &dict.grid;
    let [n, mv, mh, _] = dict.obs_dims;
    if g.n_delay != n || g.n_elev != mv || g.n_azim != mh {
        return Err(Error::InvalidArgument(format!(
            "fast off-grid builder needs a square delay/angle grid, got {}x{}x{} for {}x{}x{}",
            g.n_delay, g.n_elev, g.n_azim, n, mv, mh
        )));
    }
    let dims = g.dims();
    let n_x = dims[axis.index()];
    let n_k = dims[3];
    let inv_l = 1.0 / mom.l();
    let fdot = dict.factor_dot(axis);
    let ff = fdot.adjoint() * &fdot;
    let mut xi = DMatrix::<f64>::zeros(n_x, n_x);
    let n_cols = dict.ncols();
    let coords: Vec<[usize; 4]> = (0..n_cols).map(|c| g.col_coords(c)).collect();

    if axis == Axis::Doppler {
        // Ξ_η[k,k'] = N·M·Re{conj(Ḋ^HḊ)[k,k'] · U^η[k,k']}.
        let mut u = DMatrix::<C64>::zeros(n_k, n_k);
        let n_other = n_cols / n_k;
        for o in 0..n_other {
            for l in 0..mom.m_h.ncols() {
                for k in 0..n_k {
                    let a = mom.m_h[(o * n_k + k, l)];
                    for k2 in 0..n_k {
                        u[(k, k2)] += a * mom.m_h[(o * n_k + k2, l)].conj() * inv_l;
                    }
                }
            }
            for k in 0..n_k {
                u[(k, k)] += C64::new(mom.sigma_h[o * n_k + k], 0.0);
            }
        }
        let s = (n * mv * mh) as f64;
        for k in 0..n_k {
            for k2 in 0..n_k {
                xi[(k, k2)] = s * (ff[(k, k2)].conj() * u[(k, k2)]).re;
            }
        }
    } else {
        // Ξ_x[i,i'] = S_x·Σ_{k,k'} Re{conj(Ḟ^HḞ)[i,i'] · conj(D(η̂)^H D(η̂))[k,k'] · U^x[(i,k),(i',k')]}.
        let d = dict.factor_at(Axis::Doppler, omega.axis(Axis::Doppler));
        let dd = d.adjoint() * &d;
        let s = (n * mv * mh) as f64 / dict.obs_dims[axis.index()] as f64;
        // Columns grouped by the two remaining non-Doppler indices.
        let ax = axis.index();
        let other_axes: Vec<usize> = (0..3).filter(|&a| a != ax).collect();
        let n_o = dims[other_axes[0]] * dims[other_axes[1]];
        let mut groups: Vec<Vec<usize>> = vec![vec![usize::MAX; n_x * n_k]; n_o];
        for (c, co) in coords.iter().enumerate() {
            let o = co[other_axes[0]] * dims[other_axes[1]] + co[other_axes[1]];
            groups[o][co[ax] * n_k + co[3]] = c;
        }
        let dim = n_x * n_k;
        let mut u = DMatrix::<C64>::zeros(dim, dim);
        for grp in &groups {
            for l in 0..mom.m_h.ncols() {
                for p in 0..dim {
                    let a = mom.m_h[(grp[p], l)] * inv_l;
                    if a.re == 0.0 && a.im == 0.0 {
                        continue;
                    }
                    for q in 0..dim {
                        u[(p, q)] += a * mom.m_h[(grp[q], l)].conj();
                    }
                }
            }
            for p in 0..dim {
                u[(p, p)] += C64::new(mom.sigma_h[grp[p]], 0.0);
            }
        }
        for i in 0..n_x {
            for i2 in 0..n_x {
                let fc = ff[(i, i2)].conj();
                let mut acc = 0.0;
                for k in 0..n_k {
                    for k2 in 0..n_k {
                        acc += (fc * dd[(k, k2)].conj() * u[(i * n_k + k, i2 * n_k + k2)]).re;
                    }
                }
                xi[(i, i2)] = s * acc;
            }
        }
    }
    let e = residual_without_axis(dict, omega, axis, mom)?;
    let chi1 = chi_data_term(dict, axis, mom, &e);
    let (_, chi2) = trace_terms(dict, omega, axis, mom);
    let chi = DVector::from_iterator(n_x, chi1.iter().zip(chi2.iter()).map(|(a, b)| a + b));
    let xi = (&xi + xi.transpose()) * 0.5;
    Ok(QuadraticForm { xi, chi })
}

/// Relative ridge of [`solve_offgrid_axis`]: `λ = 10⁻⁸·tr(Ξ)/dim`.
pub const TIKHONOV_REL: f64 = 1e-8;

/// Minimiser of the quadratic, Tikhonov-regularised and kept within half a grid
/// spacing of `axis`.
///
/// When the unconstrained minimiser leaves the box the whole vector is scaled back
/// onto it, which keeps `xᵀΞx − 2χᵀx ≤ 0`, the value at `x = 0`.
pub fn solve_offgrid_axis(qf: &QuadraticForm, grid: &GridSpec, axis: Axis) -> Result<Vec<f64>> {
    solve_offgrid_axis_ridge(qf, grid, axis, TIKHONOV_REL)
}

/// [`solve_offgrid_axis`] with ridge `λ = ridge_rel·tr(Ξ)/dim`. A larger ridge pulls
/// grid slices that carry little energy towards zero offset.
pub fn solve_offgrid_axis_ridge(qf: &QuadraticForm, grid: &GridSpec, axis: Axis, ridge_rel: f64) -> Result<Vec<f64>> {
    let x = solve_ridge(qf, ridge_rel)?;
    let bound = 0.5 * grid.spacing(axis);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let t = if peak > bound { bound / peak } else { 1.0 };
    let scaled: Vec<f64> = x.iter().map(|v| (v * t).clamp(-bound, bound)).collect();
    Ok(scaled)
}

/// `(Ξ + λI)⁻¹χ` with `λ = 10⁻⁸·tr(Ξ)/dim`; zero when `Ξ` carries no energy.
pub fn solve_unclamped(qf: &QuadraticForm) -> Result<Vec<f64>> {
    solve_ridge(qf, TIKHONOV_REL)
}

/// `(Ξ + λI)⁻¹χ` with `λ = rel·tr(Ξ)/dim`.
pub fn solve_ridge(qf: &QuadraticForm, rel: f64) -> Result<Vec<f64>> {
    let dim = qf.chi.len();
    if qf.xi.nrows() != dim || qf.xi.ncols() != dim {
        return Err(shape_err(format!("{dim}x{dim} Xi"), format!("{}x{}", qf.xi.nrows(), qf.xi.ncols())));
    }
    if qf.xi.iter().chain(qf.chi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite quadratic form".into()));
    }
    let tr = qf.xi.trace();
    if dim == 0 || tr <= 0.0 || qf.chi.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; dim]);
    }
    let lambda = rel * tr / dim as f64;
    let mut m = qf.xi.clone();
    for i in 0..dim {
        m[(i, i)] += lambda;
    }
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&qf.chi),
        None => m
            .lu()
            .solve(&qf.chi)
            .ok_or_else(|| Error::InvalidArgument("singular off-grid system".into()))?,
    };
    Ok(sol.iter().copied().collect())
}

/// Which off-grid builder to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffGridMode {
    #[default]
    Exact,
    Fast,
}

/// One sweep over the four axes in the order delay, elevation, azimuth, Doppler.
/// Each axis sees the offsets already updated for the axes before it.
pub fn update_offgrid(
    dict: &DictionarySet,
    omega: &OffGridParams,
    mom: &OffGridMoments,
    mode: OffGridMode,
) -> Result<OffGridParams> {
    update_offgrid_ridge(dict, omega, mom, mode, TIKHONOV_REL)
}

/// [`update_offgrid`] with the ridge of [`solve_offgrid_axis_ridge`].
pub fn update_offgrid_ridge(
    dict: &DictionarySet,
    omega: &OffGridParams,
    mom: &OffGridMoments,
    mode: OffGridMode,
    ridge_rel: f64,
) -> Result<OffGridParams> {
    let mut om = omega.clone();
    for axis in Axis::ALL {
        let qf = match mode {
            OffGridMode::Exact => build_quadratic_exact(dict, &om, axis, mom)?,
            OffGridMode::Fast => build_quadratic_fast(dict, &om, axis, mom)?,
        };
        let x = solve_offgrid_axis_ridge(&qf, &dict.grid, axis, ridge_rel)?;
        om.axis_mut(axis).copy_from_slice(&x);
    }
    om.clamp(&dict.grid);
    Ok(om)
}

//! Reference estimators on the on-grid dictionary: greedy pursuit (OMP, SOMP) and
//! EM-BG-AMP in its single- and multi-column forms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ReceivedSignal;
use crate::config::Axis;
use crate::dictionary::DictionarySet;
use crate::error::{shape_err, Error, Result};
use crate::hmp::{EstimateResult, HmpEngine, HmpOptions};
use crate::{CMat, C64};

/// Output of a greedy pursuit.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    /// Selected grid columns, in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients, `|support| × L`.
    pub coefficients: CMat,
    /// Frobenius norm of the residual after each selection.
    pub residual_norms: Vec<f64>,
    /// Atoms rejected because they were (numerically) in the span of the support.
    pub dropped: Vec<usize>,
}

impl GreedyResult {
    /// Coefficients scattered onto the full grid.
    pub fn to_dense(&self, ncols: usize) -> CMat {
        let l = self.coefficients.ncols();
        let mut h = CMat::zeros(ncols, l);
        for (i, &c) in self.support.iter().enumerate() {
            for j in 0..l {
                h[(c, j)] = self.coefficients[(i, j)];
            }
        }
        h
    }
}

/// Column `c` of the zero-offset `W`.
pub fn atom(dict: &DictionarySet, c: usize) -> Vec<C64> {
    let [i0, i1, i2, i3] = dict.grid.col_coords(c);
    let [n, mv, mh, k] = dict.obs_dims;
    let mut out = Vec::with_capacity(n * mv * mh * k);
    for a in 0..n {
        let fa = dict.factor(Axis::Delay)[(a, i0)];
        for b in 0..mv {
            let fb = fa * dict.factor(Axis::Elevation)[(b, i1)];
            for h in 0..mh {
                let fh = fb * dict.factor(Axis::Azimuth)[(h, i2)];
                for t in 0..k {
                    out.push(fh * dict.factor(Axis::Doppler)[(t, i3)]);
                }
            }
        }
    }
    out
}

fn pilot_free(dict: &DictionarySet, rx: &ReceivedSignal) -> Result<CMat> {
    let nr = dict.nrows();
    if rx.y.nrows() != nr || rx.pilots.len() != nr {
        return Err(shape_err(
            format!("{nr} rows"),
            format!("{} rows, {} pilots", rx.y.nrows(), rx.pilots.len()),
        ));
    }
    Ok(CMat::from_fn(nr, rx.y.ncols(), |r, j| rx.pilots[r].conj() * rx.y[(r, j)]))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Cholesky factor of a Hermitian positive definite matrix, `None` when not PD
/// to working precision.
fn cholesky(g: &CMat) -> Option<CMat> {
    let n = g.nrows();
    let mut l = CMat::zeros(n, n);
    let scale = (0..n).map(|i| g[(i, i)].re).fold(0.0, f64::max).max(1e-300);
    for j in 0..n {
        let mut d = g[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 1e-10 * scale) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L·L^H·x = b` column by column.
fn chol_solve(l: &CMat, b: &CMat) -> CMat {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// Simultaneous OMP on the pilot-free data `ys` (`nrows × L`): the score of an atom is
/// `Σ_l |⟨w_c, r_l⟩|²`; ties go to the lowest index.
fn pursuit(dict: &DictionarySet, ys: &CMat, k: usize) -> Result<GreedyResult> {
    let (nr, l) = (ys.nrows(), ys.ncols());
    if k > nr {
        return Err(Error::InvalidArgument(format!("sparsity {k} exceeds {nr} observations")));
    }
    let nc = dict.ncols();
    let mut resid = ys.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut atoms: Vec<Vec<C64>> = Vec::new();
    let mut excluded = vec![false; nc];
    let mut dropped = Vec::new();
    let mut norms = Vec::new();
    let mut coef = CMat::zeros(0, l);
    let y_norm = ys.norm();
    while support.len() < k {
        let r_norm = resid.norm();
        if r_norm <= 1e-14 * y_norm || r_norm == 0.0 {
            break;
        }
        let mut score = vec![0.0; nc];
        for j in 0..l {
            let corr = dict.adjoint_w_vec(resid.column(j).as_slice());
            for (s, v) in score.iter_mut().zip(corr) {
                *s += v.norm_sqr();
            }
        }
        let mut best: Option<usize> = None;
        for c in 0..nc {
            if excluded[c] {
                continue;
            }
            if best.is_none_or(|b| score[c] > score[b]) {
                best = Some(c);
            }
        }
        let Some(c) = best else { break };
        excluded[c] = true;
        atoms.push(atom(dict, c));
        let n_s = atoms.len();
        let gram = CMat::from_fn(n_s, n_s, |a, b| dot(&atoms[a], &atoms[b]));
        let Some(ch) = cholesky(&gram) else {
            atoms.pop();
            dropped.push(c);
            continue;
        };
        support.push(c);
        let rhs = CMat::from_fn(n_s, l, |a, j| dot(&atoms[a], ys.column(j).as_slice()));
        coef = chol_solve(&ch, &rhs);
        resid = ys.clone();
        for (a, w) in atoms.iter().enumerate() {
            for j in 0..l {
                let x = coef[(a, j)];
                for (r, wv) in w.iter().enumerate() {
                    resid[(r, j)] -= wv * x;
                }
            }
        }
        norms.push(resid.norm());
    }
    Ok(GreedyResult {
        support,
        coefficients: coef,
        residual_norms: norms,
        dropped,
    })
}

/// OMP on subband column `l` of `rx`.
pub fn omp(dict: &DictionarySet, rx: &ReceivedSignal, l: usize, k: usize) -> Result<GreedyResult> {
    let ys = pilot_free(dict, rx)?;
    if l >= ys.ncols() {
        return Err(Error::InvalidArgument(format!("column {l} out of range")));
    }
    pursuit(dict, &ys.columns(l, 1).into_owned(), k)
}

/// SOMP over all subband columns with a joint support.
pub fn somp(dict: &DictionarySet, rx: &ReceivedSignal, k: usize) -> Result<GreedyResult> {
    pursuit(dict, &pilot_free(dict, rx)?, k)
}

/// OMP run independently on every column, assembled into one grid estimate.
pub fn omp_all_columns(dict: &DictionarySet, rx: &ReceivedSignal, k: usize) -> Result<CMat> {
    let ys = pilot_free(dict, rx)?;
    let mut h = CMat::zeros(dict.ncols(), ys.ncols());
    for j in 0..ys.ncols() {
        let g = pursuit(dict, &ys.columns(j, 1).into_owned(), k)?;
        h.set_column(j, &g.to_dense(dict.ncols()).column(0));
    }
    Ok(h)
}

/// EM-BG-AMP: the message-passing engine with off-grid learning and the `1/(NMK)`
/// corrections disabled.
///
/// With `mmv` the columns share support, activity and slab variances; without it each
/// column is estimated on its own and the merged `llr` is the per-point maximum.
pub fn em_bg_amp(
    dict: &DictionarySet,
    rx: &ReceivedSignal,
    opts: &HmpOptions,
    mmv: bool,
) -> Result<EstimateResult> {
    let opts = HmpOptions {
        offgrid: None,
        nmk_correction: false,
        ..opts.clone()
    };
    if mmv || rx.y.ncols() == 1 {
        return HmpEngine::new(dict, rx, opts)?.run_recorded();
    }
    let mut parts = Vec::with_capacity(rx.y.ncols());
    for j in 0..rx.y.ncols() {
        let col = ReceivedSignal {
            y: rx.y.columns(j, 1).into_owned(),
            pilots: rx.pilots.clone(),
            noise_var: rx.noise_var,
        };
        parts.push(HmpEngine::new(dict, &col, opts.clone())?.run_recorded()?);
    }
    let nc = dict.ncols();
    let mut merged = parts[0].clone();
    merged.h_hat = CMat::zeros(nc, parts.len());
    merged.g_hat = CMat::zeros(dict.nrows(), parts.len());
    merged.iterations = 0;
    for (j, p) in parts.iter().enumerate() {
        merged.h_hat.set_column(j, &p.h_hat.column(0));
        merged.g_hat.set_column(j, &p.g_hat.column(0));
        merged.iterations = merged.iterations.max(p.iterations);
        for c in 0..nc {
            merged.llr[c] = merged.llr[c].max(p.llr[c]);
            merged.active_mask[c] |= p.active_mask[c];
            merged.zeta[c] = merged.zeta[c].max(p.zeta[c]);
        }
        merged.counters.tau_r_clamped += if j > 0 { p.counters.tau_r_clamped } else { 0 };
        merged.counters.beta_fallback += if j > 0 { p.counters.beta_fallback } else { 0 };
        if merged.divergence.is_none() {
            merged.divergence = p.divergence.clone();
        }
    }
    Ok(merged)
}

pub mod reference {
    //! Dense generalized AMP with a Bernoulli-Gaussian input channel and EM updates,
    //! written directly against an explicit sensing matrix. It serves as an
    //! independent cross-check of the message-passing engine in its degenerate mode.

    use super::*;

    const FLOOR: f64 = 1e-12;

    /// State in conventional GAMP notation.
    #[derive(Debug, Clone)]
    pub struct BgAmp {
        a: CMat,
        a2: nalgebra::DMatrix<f64>,
        y: CMat,
        noise: f64,
        kappa: f64,
        mmv: bool,
        warmup: usize,
        steps: usize,
        /// Entries still in the model; cleared once their slab variance collapses.
        pub alive: Vec<bool>,
        /// Signal estimate and variance, `n × L`.
        pub x: CMat,
        pub tau_x: nalgebra::DMatrix<f64>,
        /// Damped input precision `1/τ_x`.
        pub prec_x: nalgebra::DMatrix<f64>,
        /// Scaled output residual.
        pub s: CMat,
        /// Posterior activity, per entry (columns identical in the MMV form).
        pub pi: nalgebra::DMatrix<f64>,
        /// Activity rate per column.
        pub lambda: Vec<f64>,
        /// Slab variance per entry.
        pub theta: nalgebra::DMatrix<f64>,
        pub log_odds: nalgebra::DMatrix<f64>,
    }

    impl BgAmp {
        /// `a`: sensing matrix (without pilots), `y`: measurements, `pilots`:
        /// unit-modulus per-row pilots, `noise`: noise variance, `kappa`: damping,
        /// `warmup`: steps before the EM updates start.
        pub fn new(a: CMat, y: &CMat, pilots: &[C64], noise: f64, kappa: f64, mmv: bool, warmup: usize) -> Self {
            let (m, n) = a.shape();
            let l = y.ncols();
            let y = CMat::from_fn(m, l, |r, j| pilots[r].conj() * y[(r, j)]);
            let a2 = a.map(|v| v.norm_sqr());
            Self {
                a,
                a2,
                y,
                noise,
                kappa,
                mmv,
                warmup,
                steps: 0,
                alive: vec![true; n * l],
                x: CMat::zeros(n, l),
                tau_x: nalgebra::DMatrix::from_element(n, l, 1.0),
                prec_x: nalgebra::DMatrix::from_element(n, l, 1.0),
                s: CMat::zeros(m, l),
                pi: nalgebra::DMatrix::from_element(n, l, 0.5),
                lambda: vec![0.2; l],
                theta: nalgebra::DMatrix::from_element(n, l, 1.0),
                log_odds: nalgebra::DMatrix::zeros(n, l),
            }
        }

        pub fn step(&mut self) {
            let (m, n) = self.a.shape();
            let l = self.y.ncols();
            let k = self.kappa;
            let mut var_x = self.prec_x.map(|p| 1.0 / p);
            for i in 0..n * l {
                if !self.alive[i] {
                    var_x[i] = 0.0;
                }
            }
            let tau_p = (&self.a2 * &var_x).map(|v| v.max(FLOOR));
            let ax = &self.a * &self.x;
            let mut tau_s = nalgebra::DMatrix::<f64>::zeros(m, l);
            for i in 0..m * l {
                let p = ax[i] - self.s[i] * tau_p[i];
                let tz = tau_p[i] * self.noise / (tau_p[i] + self.noise);
                let z = (p / tau_p[i] + self.y[i] / self.noise) * tz;
                self.s[i] = (z - p) / tau_p[i];
                tau_s[i] = (1.0 - tz / tau_p[i]) / tau_p[i];
            }
            let tau_r = (self.a2.transpose() * &tau_s).map(|v| (1.0 / v).max(FLOOR));
            let r = &self.x + (self.a.adjoint() * &self.s).component_mul(&tau_r.map(|v| C64::new(v, 0.0)));
            self.prec_x = self.tau_x.map(|v| k / v) + &self.prec_x * (1.0 - k);
            let mut x_new = CMat::zeros(n, l);
            for i in 0..n * l {
                if !self.alive[i] {
                    self.tau_x[i] = FLOOR;
                    continue;
                }
                let g = self.theta[i] / (self.theta[i] + tau_r[i]);
                let mean = r[i] * g;
                let var = g * tau_r[i];
                x_new[i] = mean * self.pi[i];
                self.tau_x[i] = (self.pi[i] * (mean.norm_sqr() + var) - x_new[i].norm_sqr()).max(FLOOR);
            }
            self.x = x_new * C64::new(k, 0.0) + &self.x * C64::new(1.0 - k, 0.0);

            let alive = self.alive.clone();
            let dead = |c: usize, j: usize| !alive[j * n + c];
            // Activity: evidence pooled over columns in the MMV form.
            let evidence = |c: usize, j: usize| {
                let (t, th) = (tau_r[(c, j)], self.theta[(c, j)]);
                (t / (t + th)).ln() + r[(c, j)].norm_sqr() * th / (t * (t + th))
            };
            for c in 0..n {
                if self.mmv {
                    let lam = self.lambda[0];
                    let e: f64 = (0..l).map(|j| evidence(c, j)).sum();
                    let lo = if dead(c, 0) { -40.0 } else { ((lam / (1.0 - lam)).ln() + e).clamp(-40.0, 40.0) };
                    for j in 0..l {
                        self.log_odds[(c, j)] = lo;
                        self.pi[(c, j)] = if dead(c, j) { 0.0 } else { 1.0 / (1.0 + (-lo).exp()) };
                    }
                } else {
                    for j in 0..l {
                        let lam = self.lambda[j];
                        let lo = if dead(c, j) {
                            -40.0
                        } else {
                            ((lam / (1.0 - lam)).ln() + evidence(c, j)).clamp(-40.0, 40.0)
                        };
                        self.log_odds[(c, j)] = lo;
                        self.pi[(c, j)] = if dead(c, j) { 0.0 } else { 1.0 / (1.0 + (-lo).exp()) };
                    }
                }
            }

            // EM updates, with entries whose slab collapses to the floor removed first.
            self.steps += 1;
            if self.steps <= self.warmup {
                return;
            }
            let mut th = nalgebra::DMatrix::<f64>::zeros(n, l);
            for c in 0..n {
                if self.mmv {
                    let v = (0..l).map(|j| self.x[(c, j)].norm_sqr() + self.tau_x[(c, j)]).sum::<f64>() / l as f64;
                    th.row_mut(c).fill(v);
                } else {
                    for j in 0..l {
                        th[(c, j)] = self.x[(c, j)].norm_sqr() + self.tau_x[(c, j)];
                    }
                }
            }
            for i in 0..n * l {
                if self.alive[i] && !(th[i] > 2.0 * FLOOR) {
                    self.alive[i] = false;
                    self.x[i] = C64::new(0.0, 0.0);
                    self.pi[i] = 0.0;
                    self.log_odds[i] = -40.0;
                }
            }
            let clamp = |v: f64| v.clamp(1e-6, 1.0 - 1e-6);
            if self.mmv {
                let lam = clamp(self.pi.column(0).sum() / n as f64);
                self.lambda.iter_mut().for_each(|v| *v = lam);
            } else {
                for j in 0..l {
                    self.lambda[j] = clamp(self.pi.column(j).sum() / n as f64);
                }
            }
            self.theta = th.map(|v| v.max(FLOOR));
        }
    }
}

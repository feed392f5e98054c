//! Hybrid message passing over the Bernoulli-Gaussian grid coefficients with
//! EM-learned activity, slab variances and off-grid offsets.
//!
//! All subband columns share one support belief per grid point: the LLR sums the
//! evidence of the `L` columns, and `ζ`, `σ̂`, `ω̂` are common to all of them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ReceivedSignal;
use crate::config::OffGridParams;
use crate::dictionary::{ComposedOperator, DictionarySet, LinearOperator, OperatorMode};
use crate::error::{shape_err, Error, Result};
use crate::hyper::{self, OffGridMode, OffGridMoments};
use crate::{CMat, RMat, C64};

/// LLRs are clamped to this magnitude before exponentiation.
pub const LLR_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HmpOptions {
    pub t_out: usize,
    pub t_in: usize,
    /// Weight of the fresh value in the convex combination applied to `μ_h` and `β_h`.
    pub damping: f64,
    /// Grid points with `LLR > llr_threshold` are kept in the final estimate.
    pub llr_threshold: f64,
    pub variance_floor: f64,
    /// `None` disables off-grid learning.
    pub offgrid: Option<OffGridMode>,
    /// Ridge of the off-grid solves relative to the mean diagonal of `Ξ`.
    pub offgrid_ridge: f64,
    /// Keep the `1/(NMK)` self-feedback corrections in `τ_r` and `β_h`.
    pub nmk_correction: bool,
    /// Stop the inner loop once `‖Δμ_h‖/‖μ_h‖` drops below this.
    pub early_exit_tol: Option<f64>,
    pub operator_mode: OperatorMode,
    /// Residual growth beyond this multiple of `‖Y‖` counts as divergence.
    pub divergence_factor: f64,
    pub learn_rho: bool,
    pub learn_sigma: bool,
    /// When `ρ̂` is re-estimated.
    pub rho_cadence: Cadence,
    /// When `σ̂` is re-estimated.
    pub sigma_cadence: Cadence,
    /// Drop grid points with `LLR ≤ llr_threshold` at the end of each outer round,
    /// and points whose `σ̂` has fallen to the variance floor at any time. Later
    /// iterations run on the remaining columns only.
    pub prune: bool,
    /// Inner iterations, counted across rounds, during which `ρ̂` and `σ̂` stay at
    /// their initial values.
    pub hyper_warmup: usize,
    pub rho_init: f64,
    pub sigma_init: f64,
    /// Lower bound on the noise variance relative to the mean received power,
    /// used when the supplied variance is zero.
    pub noise_floor_rel: f64,
}

impl Default for HmpOptions {
    fn default() -> Self {
        Self {
            t_out: 5,
            t_in: 30,
            damping: 0.5,
            llr_threshold: 0.0,
            variance_floor: 1e-12,
            offgrid: Some(OffGridMode::Exact),
            offgrid_ridge: hyper::TIKHONOV_REL,
            nmk_correction: true,
            early_exit_tol: None,
            operator_mode: OperatorMode::Kron,
            divergence_factor: 1e3,
            learn_rho: true,
            learn_sigma: true,
            rho_cadence: Cadence::Inner,
            sigma_cadence: Cadence::Inner,
            prune: true,
            hyper_warmup: 10,
            rho_init: 0.2,
            sigma_init: 1.0,
            noise_floor_rel: 1e-7,
        }
    }
}

impl HmpOptions {
    /// Off-grid learning off and the `1/(NMK)` corrections dropped: plain EM-BG-AMP-MMV.
    pub fn degenerate() -> Self {
        Self {
            offgrid: None,
            nmk_correction: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::InvalidConfig("variance_floor must be positive".into()));
        }
        if !(self.rho_init > 0.0 && self.rho_init < 1.0) {
            return Err(Error::InvalidConfig("rho_init must lie in (0, 1)".into()));
        }
        if !(self.sigma_init > 0.0) {
            return Err(Error::InvalidConfig("sigma_init must be positive".into()));
        }
        if !(self.offgrid_ridge >= 0.0 && self.offgrid_ridge.is_finite()) {
            return Err(Error::InvalidConfig("offgrid_ridge must be non-negative".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidConfig("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Schedule of a hyper-parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cadence {
    /// After every inner iteration.
    #[default]
    Inner,
    /// Once per outer round, after its inner iterations.
    Outer,
}

/// Product of the likelihood `CN(s·g; y, σ_z)` and the prior message `CN(g; μ_q, τ_q)`.
///
/// An infinite `σ_z` or `τ_q` selects the corresponding limit.
pub fn gaussian_output_posterior(y: C64, s: C64, mu_q: C64, tau_q: f64, sigma_z: f64) -> Result<(C64, f64)> {
    if !(tau_q > 0.0) || !(sigma_z > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "output posterior needs positive variances, got tau_q={tau_q}, sigma_z={sigma_z}"
        )));
    }
    let ys = s.conj() * y;
    Ok(match (tau_q.is_infinite(), sigma_z.is_infinite()) {
        (_, true) => (mu_q, tau_q),
        (true, false) => (ys, sigma_z),
        (false, false) => {
            let tau_g = tau_q * sigma_z / (tau_q + sigma_z);
            (C64::from(tau_g) * (mu_q / tau_q + ys / sigma_z), tau_g)
        }
    })
}

/// Spike-slab posterior `ζ·p'(h) + (1 − ζ)·δ(h)` with `p' ∝ CN(h; 0, σ̂)·CN(h; μ_r, τ_r)`.
pub fn bg_input_posterior(mu_r: C64, tau_r: f64, sigma: f64, zeta: f64) -> Result<(C64, f64)> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::InvalidArgument(format!("activity {zeta} outside [0, 1]")));
    }
    if !(tau_r > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "input posterior needs positive variances, got tau_r={tau_r}, sigma={sigma}"
        )));
    }
    let v = sigma * tau_r / (sigma + tau_r);
    let m = mu_r * (v / tau_r);
    let mu = m * zeta;
    let tau = zeta * (m.norm_sqr() + v) - mu.norm_sqr();
    Ok((mu, tau.max(0.0)))
}

/// `1/(1 + e^{−x})` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Support LLR of one grid point from its per-subband pseudo-observations.
///
/// Returns the clamped LLR and `ζ = sigmoid(LLR)`.
pub fn llr_update(mu_r: &[C64], tau_r: &[f64], sigma: f64, rho: f64) -> (f64, f64) {
    let mut llr = (rho / (1.0 - rho)).ln();
    for (m, &t) in mu_r.iter().zip(tau_r) {
        let ts = t + sigma;
        llr += (t / ts).ln() + m.norm_sqr() * sigma / (t * ts);
    }
    let llr = if llr.is_nan() { -LLR_CLAMP } else { llr.clamp(-LLR_CLAMP, LLR_CLAMP) };
    (llr, sigmoid(llr))
}

/// How often numerical guards fired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuardCounters {
    /// `τ_r` was non-positive and got clamped to the floor.
    pub tau_r_clamped: usize,
    /// `β_h` was non-positive and fell back to `1/τ_h`.
    pub beta_fallback: usize,
}

/// Full message-passing state of one estimation run.
#[derive(Debug, Clone)]
pub struct HmpState {
    pub mu_h: CMat,
    pub tau_h: RMat,
    pub alpha_g: CMat,
    pub beta_h: RMat,
    pub zeta: Vec<f64>,
    pub llr: Vec<f64>,
    pub rho: f64,
    pub sigma: Vec<f64>,
    pub omega: OffGridParams,
    pub mu_q: CMat,
    pub tau_q: RMat,
    pub mu_g: CMat,
    pub tau_g: RMat,
    pub eps: RMat,
    pub mu_r: CMat,
    pub tau_r: RMat,
    pub counters: GuardCounters,
    /// Columns still in play; pruned ones hold `μ_h = 0` and `ζ = 0`.
    pub keep: Vec<bool>,
}

impl HmpState {
    /// The initial state: `μ_h = 0`, `τ_h = 1`, `α_g = 0`, `β_h = 1`, `ζ = 0.5`, `ω = 0`.
    pub fn init(dict: &DictionarySet, l: usize, opts: &HmpOptions) -> Self {
        let (nr, nc) = (dict.nrows(), dict.ncols());
        Self {
            mu_h: CMat::zeros(nc, l),
            tau_h: RMat::from_element(nc, l, 1.0),
            alpha_g: CMat::zeros(nr, l),
            beta_h: RMat::from_element(nc, l, 1.0),
            zeta: vec![0.5; nc],
            llr: vec![0.0; nc],
            rho: opts.rho_init,
            sigma: vec![opts.sigma_init; nc],
            omega: OffGridParams::zeros(&dict.grid),
            mu_q: CMat::zeros(nr, l),
            tau_q: RMat::zeros(nr, l),
            mu_g: CMat::zeros(nr, l),
            tau_g: RMat::zeros(nr, l),
            eps: RMat::zeros(nr, l),
            mu_r: CMat::zeros(nc, l),
            tau_r: RMat::zeros(nc, l),
            counters: GuardCounters::default(),
            keep: vec![true; nc],
        }
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    pub inner: usize,
    /// `‖Y_s − W(ω̂)μ_h‖/‖Y_s‖` for the `μ_h` entering the iteration.
    pub residual_rel: f64,
    /// NMSE of `W(ω̂)μ_h` against the supplied truth, in dB.
    pub nmse_db: Option<f64>,
    pub rho: f64,
    /// Grid points with `LLR > threshold` after the iteration.
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// Gated grid estimate, `ncols × L`.
    pub h_hat: CMat,
    pub llr: Vec<f64>,
    pub active_mask: Vec<bool>,
    /// `W(ω̂)·ĥ`, `nrows × L`.
    pub g_hat: CMat,
    pub omega: OffGridParams,
    pub zeta: Vec<f64>,
    pub rho: f64,
    pub sigma: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub counters: GuardCounters,
    /// Set when the run stopped on divergence; the estimate then comes from the last
    /// finite state.
    pub divergence: Option<Error>,
}

/// Estimator for one received block.
pub struct HmpEngine<'a> {
    dict: &'a DictionarySet,
    opts: HmpOptions,
    /// `conj(s) ⊙ y`, which removes the unit-modulus pilots.
    y_s: CMat,
    y_norm: f64,
    sigma_z: f64,
    op: ComposedOperator,
    truth: Option<CMat>,
    pub state: HmpState,
    last_good: Option<HmpState>,
    trace: Vec<TraceRow>,
    iterations: usize,
    outer: usize,
}

fn zeros_like_sum(a: &CMat) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

impl<'a> HmpEngine<'a> {
    pub fn new(dict: &'a DictionarySet, rx: &ReceivedSignal, opts: HmpOptions) -> Result<Self> {
        opts.validate()?;
        let (nr, l) = (rx.y.nrows(), rx.y.ncols());
        if nr != dict.nrows() || rx.pilots.len() != nr {
            return Err(shape_err(
                format!("{} observation rows and pilots", dict.nrows()),
                format!("{} rows, {} pilots", nr, rx.pilots.len()),
            ));
        }
        if l == 0 {
            return Err(Error::InvalidArgument("no subband columns".into()));
        }
        if rx.pilots.iter().any(|s| (s.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidArgument("pilots must have unit modulus".into()));
        }
        if !(rx.noise_var >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        let y_s = CMat::from_fn(nr, l, |r, j| rx.pilots[r].conj() * rx.y[(r, j)]);
        let energy = zeros_like_sum(&y_s);
        let floor = opts.noise_floor_rel * energy / (nr * l) as f64;
        let sigma_z = rx.noise_var.max(floor).max(opts.variance_floor);
        let state = HmpState::init(dict, l, &opts);
        let op = dict.compose(&state.omega, opts.operator_mode)?;
        Ok(Self {
            dict,
            opts,
            y_s,
            y_norm: energy.sqrt(),
            sigma_z,
            op,
            truth: None,
            state,
            last_good: None,
            trace: Vec::new(),
            iterations: 0,
            outer: 0,
        })
    }

    /// Supplies the true observation-domain channel for NMSE tracing.
    pub fn with_truth(mut self, g: &CMat) -> Result<Self> {
        if g.shape() != self.y_s.shape() {
            return Err(shape_err(
                format!("{:?}", self.y_s.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        self.truth = Some(g.clone());
        Ok(self)
    }

    pub fn noise_var(&self) -> f64 {
        self.sigma_z
    }

    pub fn options(&self) -> &HmpOptions {
        &self.opts
    }

    fn diverged(&self, inner: usize, reason: String) -> Error {
        Error::Diverged {
            outer: self.outer,
            inner,
            reason,
        }
    }

    /// One pass of the message updates followed by the activity and slab-variance
    /// updates. Returns the relative change of `μ_h`.
    pub fn inner_iteration(&mut self, inner: usize) -> Result<f64> {
        let floor = self.opts.variance_floor;
        let kappa = self.opts.damping;
        let corr = if self.opts.nmk_correction {
            1.0 / self.dict.nrows() as f64
        } else {
            0.0
        };
        let (nr, nc, l) = (self.dict.nrows(), self.dict.ncols(), self.y_s.ncols());
        let st = &mut self.state;

        // Output side.
        let mut inv_beta = st.beta_h.map(|b| 1.0 / b);
        for c in (0..nc).filter(|&c| !st.keep[c]) {
            inv_beta.row_mut(c).fill(0.0);
        }
        let tau_q = self.op.abs2_apply(&inv_beta)?.map(|v| v.max(floor));
        let p = self.op.apply(&st.mu_h)?;
        let resid = (&self.y_s - &p).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if !resid.is_finite() || resid > self.opts.divergence_factor * self.y_norm.max(1e-300) {
            return Err(Error::Diverged {
                outer: self.outer,
                inner,
                reason: format!("residual {resid:.3e} against data norm {:.3e}", self.y_norm),
            });
        }
        let nmse_db = self.truth.as_ref().map(|g| {
            let e: f64 = (g - &p).iter().map(|v| v.norm_sqr()).sum();
            crate::predict::ratio_db(e, zeros_like_sum(g))
        });
        let mut mu_q = CMat::zeros(nr, l);
        let mut mu_g = CMat::zeros(nr, l);
        let mut tau_g = RMat::zeros(nr, l);
        let mut eps = RMat::zeros(nr, l);
        let mut alpha = CMat::zeros(nr, l);
        let one = C64::new(1.0, 0.0);
        for i in 0..nr * l {
            let tq = tau_q[i];
            let mq = -st.alpha_g[i] * tq + p[i];
            let (mg, tg) = gaussian_output_posterior(self.y_s[i], one, mq, tq, self.sigma_z)?;
            mu_q[i] = mq;
            mu_g[i] = mg;
            tau_g[i] = tg.max(floor);
            eps[i] = (1.0 / tq - tg / (tq * tq)).max(0.0);
            alpha[i] = (mg - mq) / tq;
        }

        // Input side.
        let sum_eps = self.op.abs2_apply_adjoint(&eps)?;
        let back = self.op.apply_adjoint(&alpha)?;
        let mut tau_r = RMat::zeros(nc, l);
        let mut mu_r = CMat::zeros(nc, l);
        let mut mu_h = CMat::zeros(nc, l);
        let mut tau_h = RMat::zeros(nc, l);
        let mut beta_h = RMat::zeros(nc, l);
        for i in 0..nc * l {
            let mut tr = 1.0 / sum_eps[i] - corr / st.beta_h[i];
            if !(tr > floor) {
                tr = floor;
                st.counters.tau_r_clamped += 1;
            }
            let mut bf = 1.0 / st.tau_h[i] - corr / tr;
            if !(bf > 0.0 && bf.is_finite()) {
                bf = 1.0 / st.tau_h[i];
                st.counters.beta_fallback += 1;
            }
            beta_h[i] = kappa * bf + (1.0 - kappa) * st.beta_h[i];
            tau_r[i] = tr;
            mu_r[i] = st.mu_h[i] + back[i] * tr;
        }
        for c in 0..nc {
            if !st.keep[c] {
                tau_h.row_mut(c).fill(floor);
                continue;
            }
            for j in 0..l {
                let (m, t) = bg_input_posterior(mu_r[(c, j)], tau_r[(c, j)], st.sigma[c], st.zeta[c])?;
                mu_h[(c, j)] = m * kappa + st.mu_h[(c, j)] * (1.0 - kappa);
                tau_h[(c, j)] = t.max(floor);
            }
        }
        let mut mr = vec![C64::new(0.0, 0.0); l];
        let mut tr = vec![0.0; l];
        for c in 0..nc {
            if !st.keep[c] {
                st.llr[c] = -LLR_CLAMP;
                st.zeta[c] = 0.0;
                continue;
            }
            for j in 0..l {
                mr[j] = mu_r[(c, j)];
                tr[j] = tau_r[(c, j)];
            }
            let (llr, z) = llr_update(&mr, &tr, st.sigma[c], st.rho);
            st.llr[c] = llr;
            st.zeta[c] = z;
        }

        let change: f64 = (&mu_h - &st.mu_h).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let norm = zeros_like_sum(&mu_h).sqrt();
        st.mu_q = mu_q;
        st.tau_q = tau_q;
        st.mu_g = mu_g;
        st.tau_g = tau_g;
        st.eps = eps;
        st.alpha_g = alpha;
        st.tau_r = tau_r;
        st.mu_r = mu_r;
        st.beta_h = beta_h;
        st.mu_h = mu_h;
        st.tau_h = tau_h;

        self.hyper_update(Cadence::Inner);
        let st = &mut self.state;
        let finite = st.mu_h.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && st.tau_h.iter().all(|v| v.is_finite())
            && st.beta_h.iter().all(|v| v.is_finite());
        if !finite {
            return Err(self.diverged(inner, "non-finite posterior".into()));
        }
        let thr = self.opts.llr_threshold;
        self.trace.push(TraceRow {
            outer: self.outer,
            inner,
            residual_rel: resid / self.y_norm.max(1e-300),
            nmse_db,
            rho: self.state.rho,
            active: self.state.llr.iter().filter(|&&v| v > thr).count(),
        });
        self.iterations += 1;
        self.last_good = Some(self.state.clone());
        Ok(if norm > 0.0 { change / norm } else { change })
    }

    /// Re-estimates `ρ̂` and `σ̂` if their cadence is `when`.
    fn hyper_update(&mut self, when: Cadence) {
        if self.iterations < self.opts.hyper_warmup {
            return;
        }
        let floor = self.opts.variance_floor;
        let st = &mut self.state;
        let fresh = (self.opts.learn_sigma && self.opts.sigma_cadence == when).then(|| {
            hyper::update_sigma(&st.mu_h, &st.tau_h)
        });
        if let (true, Some(fresh)) = (self.opts.prune, &fresh) {
            // A slab within a factor two of the floor is numerically a point mass at
            // zero, so both hypotheses coincide; such points leave the model before
            // the activity average is formed.
            for (c, v) in fresh.iter().enumerate() {
                if st.keep[c] && !(*v > 2.0 * floor) {
                    st.keep[c] = false;
                    st.zeta[c] = 0.0;
                    st.llr[c] = -LLR_CLAMP;
                    st.mu_h.row_mut(c).fill(C64::new(0.0, 0.0));
                }
            }
        }
        if self.opts.learn_rho && self.opts.rho_cadence == when {
            st.rho = hyper::update_rho(&st.zeta);
        }
        if let Some(fresh) = fresh {
            st.sigma = fresh.into_iter().map(|v| v.max(floor)).collect();
        }
    }

    /// Outer-cadence hyper-parameter updates followed by the off-grid step.
    pub fn finish_outer_round(&mut self) -> Result<()> {
        self.hyper_update(Cadence::Outer);
        if self.opts.prune {
            let thr = self.opts.llr_threshold;
            let st = &mut self.state;
            for c in 0..st.keep.len() {
                if st.keep[c] && st.llr[c] <= thr {
                    st.keep[c] = false;
                    st.zeta[c] = 0.0;
                    st.llr[c] = -LLR_CLAMP;
                    st.mu_h.row_mut(c).fill(C64::new(0.0, 0.0));
                }
            }
        }
        self.offgrid_update()?;
        self.outer += 1;
        Ok(())
    }

    /// Diagnostics collected so far.
    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    /// The EM off-grid step from the current posterior moments; recomposes `W(ω̂)`.
    pub fn offgrid_update(&mut self) -> Result<()> {
        let Some(mode) = self.opts.offgrid else {
            return Ok(());
        };
        let st = &self.state;
        let l = st.mu_h.ncols() as f64;
        let mom = OffGridMoments {
            m_g: st.mu_g.clone(),
            m_h: st.mu_h.clone(),
            sigma_h: (0..st.tau_h.nrows())
                .map(|c| st.tau_h.row(c).iter().sum::<f64>() / l)
                .collect(),
        };
        let omega = hyper::update_offgrid_ridge(self.dict, &st.omega, &mom, mode, self.opts.offgrid_ridge)?;
        self.op = self.dict.compose(&omega, self.opts.operator_mode)?;
        self.state.omega = omega;
        Ok(())
    }

    fn run_loops(&mut self) -> Result<()> {
        for _ in 0..self.opts.t_out {
            if self.opts.t_in == 0 {
                continue;
            }
            for t_in in 0..self.opts.t_in {
                let change = self.inner_iteration(t_in)?;
                if let Some(tol) = self.opts.early_exit_tol {
                    if change < tol {
                        break;
                    }
                }
            }
            self.finish_outer_round()?;
        }
        Ok(())
    }

    /// Gated estimate from `state`.
    fn estimate_from(&self, st: &HmpState, divergence: Option<Error>) -> Result<EstimateResult> {
        let thr = self.opts.llr_threshold;
        let active_mask: Vec<bool> = st.llr.iter().map(|&v| v > thr).collect();
        let mut h_hat = st.mu_h.clone();
        for (c, &on) in active_mask.iter().enumerate() {
            if !on {
                h_hat.row_mut(c).fill(C64::new(0.0, 0.0));
            }
        }
        let op = self.dict.compose(&st.omega, self.opts.operator_mode)?;
        let g_hat = op.apply(&h_hat)?;
        Ok(EstimateResult {
            h_hat,
            llr: st.llr.clone(),
            active_mask,
            g_hat,
            omega: st.omega.clone(),
            zeta: st.zeta.clone(),
            rho: st.rho,
            sigma: st.sigma.clone(),
            iterations: self.iterations,
            trace: self.trace.clone(),
            counters: st.counters,
            divergence,
        })
    }

    /// Runs all rounds; divergence is an error.
    pub fn run(mut self) -> Result<EstimateResult> {
        self.run_loops()?;
        self.estimate_from(&self.state, None)
    }

    /// Runs all rounds; on divergence returns the estimate of the last finite state
    /// with the error attached.
    pub fn run_recorded(mut self) -> Result<EstimateResult> {
        match self.run_loops() {
            Ok(()) => self.estimate_from(&self.state, None),
            Err(e @ Error::Diverged { .. }) => {
                let st = self
                    .last_good
                    .clone()
                    .unwrap_or_else(|| HmpState::init(self.dict, self.y_s.ncols(), &self.opts));
                self.estimate_from(&st, Some(e))
            }
            Err(e) => Err(e),
        }
    }
}

/// Convenience wrapper: builds an engine and runs it.
pub fn run(dict: &DictionarySet, rx: &ReceivedSignal, opts: HmpOptions) -> Result<EstimateResult> {
    HmpEngine::new(dict, rx, opts)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn output_posterior_examples() {
        let one = C64::new(1.0, 0.0);
        let (m, t) = gaussian_output_posterior(C64::new(2.0, 0.0), one, C64::new(0.0, 0.0), 1.0, 1.0).unwrap();
        assert!(close(m.re, 1.0) && close(m.im, 0.0) && close(t, 0.5));
        let mq = C64::new(0.3, -0.2);
        let (m, t) = gaussian_output_posterior(C64::new(5.0, 1.0), one, mq, 2.0, f64::INFINITY).unwrap();
        assert_eq!((m, t), (mq, 2.0));
        let s = C64::new(0.0, 1.0);
        let y = C64::new(1.0, 2.0);
        let (m, t) = gaussian_output_posterior(y, s, mq, f64::INFINITY, 0.25).unwrap();
        assert_eq!((m, t), (s.conj() * y, 0.25));
        assert!(gaussian_output_posterior(y, s, mq, 0.0, 1.0).is_err());
        assert!(gaussian_output_posterior(y, s, mq, 1.0, -1.0).is_err());
    }

    #[test]
    fn input_posterior_examples() {
        let (m, t) = bg_input_posterior(C64::new(1.0, 0.0), 1.0, 1.0, 0.5).unwrap();
        assert!(close(m.re, 0.25) && close(t, 0.3125));
        let (m, t) = bg_input_posterior(C64::new(3.0, 1.0), 0.5, 2.0, 0.0).unwrap();
        assert_eq!(m, C64::new(0.0, 0.0));
        assert_eq!(t, 0.0);
        // Pure slab: product of two Gaussians.
        let (m, t) = bg_input_posterior(C64::new(3.0, 1.0), 0.5, 2.0, 1.0).unwrap();
        let v = 2.0 * 0.5 / 2.5;
        assert!(close(t, v));
        assert!((m - C64::new(3.0, 1.0) * (v / 0.5)).norm() < 1e-12);
        assert!(bg_input_posterior(C64::new(0.0, 0.0), 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn llr_examples() {
        let (llr, z) = llr_update(&[C64::new(0.0, 0.0)], &[1.0], 1.0, 0.5);
        assert!((llr + 2f64.ln()).abs() < 1e-12);
        assert!((z - 1.0 / 3.0).abs() < 1e-12);
        let (llr, z) = llr_update(&[C64::new(0.3, 0.1)], &[1.0], 1e-14, 0.5);
        assert!(llr.abs() < 1e-12 && (z - 0.5).abs() < 1e-12);
        let mut last = f64::NEG_INFINITY;
        for a in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let (llr, _) = llr_update(&[C64::new(a, 0.0), C64::new(0.0, a)], &[1.0, 1.0], 1.0, 0.2);
            assert!(llr > last);
            last = llr;
        }
        let (llr, z) = llr_update(&[C64::new(1e6, 0.0)], &[1e-3], 1.0, 0.5);
        assert_eq!(llr, LLR_CLAMP);
        assert!(z > 0.999_999 && z <= 1.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}

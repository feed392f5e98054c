//! Synthetic multipath channels and frequency-hopped received signals.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Axis, GridSpec, SystemConfig};
use crate::error::{shape_err, Error, Result};
use crate::seed::{self, Stream};
use crate::steering::{cis, steering_delay, steering_space, subband_phase};
use crate::{CMat, C64};

/// Multipath statistics of one synthetic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Resolvable (virtual) paths P.
    pub n_paths: usize,
    /// Largest path delay in seconds.
    pub delay_spread: f64,
    /// Largest Doppler magnitude in Hz.
    pub doppler_max: f64,
    /// Place every path exactly on a distinct grid point.
    pub on_grid: bool,
    /// Sub-paths merged into each virtual path (1 = a single specular path).
    pub subpaths: usize,
    /// Half-width of the uniform Doppler spread of sub-paths around their path, in Hz.
    pub subpath_doppler_spread: f64,
}

impl Scenario {
    /// Off-grid scenario at `speed_mps` with delays spread over half the unambiguous range.
    pub fn new(n_paths: usize, cfg: &SystemConfig, speed_mps: f64) -> Self {
        Self {
            n_paths,
            delay_spread: 0.5 / cfg.delta_f(),
            doppler_max: cfg.doppler_for_speed(speed_mps),
            on_grid: false,
            subpaths: 1,
            subpath_doppler_spread: 0.0,
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("scenario needs at least one path".into()));
        }
        if self.subpaths == 0 {
            return Err(Error::InvalidConfig("subpaths must be at least 1".into()));
        }
        if !(self.delay_spread >= 0.0 && self.delay_spread < 1.0 / cfg.delta_f()) {
            return Err(Error::InvalidConfig(format!(
                "delay_spread must lie in [0, 1/Δf) = [0, {:.4e}) s",
                1.0 / cfg.delta_f()
            )));
        }
        let reach = self.doppler_max + self.subpath_doppler_spread;
        if !(self.doppler_max >= 0.0 && self.subpath_doppler_spread >= 0.0)
            || reach >= cfg.doppler_limit()
        {
            return Err(Error::InvalidConfig(format!(
                "Doppler reach {reach:.3} Hz must stay below 1/(2ΔT) = {:.3} Hz",
                cfg.doppler_limit()
            )));
        }
        Ok(())
    }
}

/// One propagation path: delay, directional cosines, Doppler and complex gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub delay: f64,
    pub elev_cos: f64,
    pub azim_cos: f64,
    pub doppler: f64,
    pub gain: C64,
}

/// Paths driving a synthesis; sub-paths of one virtual path appear as separate entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Union of two path sets.
    pub fn union(&self, other: &PathSet) -> PathSet {
        let mut paths = self.paths.clone();
        paths.extend_from_slice(&other.paths);
        PathSet { paths }
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Grid indices admissible under the scenario's delay and Doppler limits.
fn admissible(grid: &GridSpec, sc: &Scenario) -> [Vec<usize>; 4] {
    let tol = 1e-9;
    let delays = (0..grid.n_delay)
        .filter(|&n| grid.delay(n) <= sc.delay_spread * (1.0 + tol))
        .collect();
    let dopplers = (0..grid.n_doppler)
        .filter(|&k| grid.doppler(k).abs() <= sc.doppler_max * (1.0 + tol) + 1e-12)
        .collect();
    [
        delays,
        (0..grid.n_elev).collect(),
        (0..grid.n_azim).collect(),
        dopplers,
    ]
}

/// Draws a scenario realisation; gains are `CN(0, 1/P)` so `E‖g_l‖² = NMK`.
pub fn sample_paths(sc: &Scenario, grid: &GridSpec, cfg: &SystemConfig, seed: u64) -> Result<PathSet> {
    sc.validate(cfg)?;
    let mut rng = seed::rng(seed);
    let p = sc.n_paths;
    let mut centres: Vec<[f64; 4]> = Vec::with_capacity(p);
    if sc.on_grid {
        let adm = admissible(grid, sc);
        let available: usize = adm.iter().map(|a| a.len()).product();
        if p > available {
            return Err(Error::TooManyPaths {
                requested: p,
                available,
            });
        }
        let mut used = BTreeSet::new();
        while centres.len() < p {
            let idx: [usize; 4] = [
                adm[0][rng.random_range(0..adm[0].len())],
                adm[1][rng.random_range(0..adm[1].len())],
                adm[2][rng.random_range(0..adm[2].len())],
                adm[3][rng.random_range(0..adm[3].len())],
            ];
            if used.insert(idx) {
                centres.push([
                    grid.delay(idx[0]),
                    grid.elev_cos(idx[1]),
                    grid.azim_cos(idx[2]),
                    grid.doppler(idx[3]),
                ]);
            }
        }
    } else {
        for _ in 0..p {
            centres.push([
                rng.random::<f64>() * sc.delay_spread,
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0,
                (2.0 * rng.random::<f64>() - 1.0) * sc.doppler_max,
            ]);
        }
    }
    let mut paths = Vec::with_capacity(p * sc.subpaths);
    // A cluster carries the power of one path, split over independent sub-path gains.
    let sub_var = 1.0 / (p * sc.subpaths) as f64;
    for c in centres {
        for _ in 0..sc.subpaths {
            let spread = if sc.subpaths > 1 {
                (2.0 * rng.random::<f64>() - 1.0) * sc.subpath_doppler_spread
            } else {
                0.0
            };
            paths.push(Path {
                delay: c[0],
                elev_cos: c[1],
                azim_cos: c[2],
                doppler: c[3] + spread,
                gain: complex_normal(&mut rng, sub_var),
            });
        }
    }
    Ok(PathSet { paths })
}

/// Frequency-space-time responses: rows `n·M·T + m·T + t` with `m = m_v·M_h + m_h`,
/// one column per hop `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub g: CMat,
    /// `[N, M_v, M_h, T]`.
    pub dims: [usize; 4],
}

impl ChannelTensor {
    pub fn row_index(&self, n: usize, m: usize, t: usize) -> usize {
        let m_total = self.dims[1] * self.dims[2];
        (n * m_total + m) * self.dims[3] + t
    }

    pub fn energy(&self) -> f64 {
        self.g.norm_squared()
    }
}

/// Channel at arbitrary sounding instants `times` (seconds since the first sounding).
///
/// Hop `l` adds `l·Δt` to every instant through the subband phase.
pub fn synth_at_times(paths: &PathSet, cfg: &SystemConfig, times: &[f64]) -> ChannelTensor {
    let (n, mv, mh, l_count) = (cfg.srs_len, cfg.m_v, cfg.m_h, cfg.n_subbands);
    let t_count = times.len();
    let rows = n * mv * mh * t_count;
    let mut g = CMat::zeros(rows, l_count);
    let df = cfg.delta_f();
    for p in &paths.paths {
        let b = steering_delay(p.delay, n, df);
        let cv = steering_space(p.elev_cos, mv);
        let ch = steering_space(p.azim_cos, mh);
        let d: Vec<C64> = times
            .iter()
            .map(|&t| cis(2.0 * PI * t * p.doppler))
            .collect();
        let mut v = Vec::with_capacity(rows);
        for bn in &b {
            for cvm in &cv {
                for chm in &ch {
                    let s = bn * cvm * chm * p.gain;
                    for dt in &d {
                        v.push(s * dt);
                    }
                }
            }
        }
        for l in 0..l_count {
            let psi = subband_phase(l, p.delay, p.doppler, cfg);
            let col = &mut g.as_mut_slice()[l * rows..(l + 1) * rows];
            for (dst, src) in col.iter_mut().zip(&v) {
                *dst += src * psi;
            }
        }
    }
    ChannelTensor {
        g,
        dims: [n, mv, mh, t_count],
    }
}

/// Sounding instants `k·ΔT`, `k = 0..K`.
pub fn sounding_times(cfg: &SystemConfig) -> Vec<f64> {
    (0..cfg.n_soundings)
        .map(|k| k as f64 * cfg.delta_big_t)
        .collect()
}

/// Channel observed by the `K` fullband soundings.
pub fn synth_fst_channel(paths: &PathSet, cfg: &SystemConfig) -> ChannelTensor {
    synth_at_times(paths, cfg, &sounding_times(cfg))
}

/// Unit-modulus QPSK pilot sequence.
pub fn qpsk_pilots(len: usize, seed: u64) -> Vec<C64> {
    let mut rng = seed::rng(seed);
    (0..len)
        .map(|_| {
            let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            C64::new(re, im)
        })
        .collect()
}

/// Received pilots on every hop: `y_l = diag(s)·g_l + z_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: CMat,
    pub pilots: Vec<C64>,
    pub noise_var: f64,
}

/// Noise variance giving `snr_db` under `SNR = ‖G‖²/(NMKL·σ_z)`.
pub fn noise_var_for_snr(g: &CMat, snr_db: f64) -> Result<f64> {
    let energy = g.norm_squared();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(energy / (g.len() as f64 * 10f64.powf(snr_db / 10.0)))
}

/// Adds `CN(0, σ_z)` noise to the piloted channel. `snr_db = +∞` gives a noiseless signal.
pub fn synth_received(g: &ChannelTensor, pilots: &[C64], snr_db: f64, seed: u64) -> Result<ReceivedSignal> {
    let rows = g.g.nrows();
    if pilots.len() != rows {
        return Err(shape_err(format!("{rows} pilots"), format!("{}", pilots.len())));
    }
    if pilots.iter().any(|s| (s.norm() - 1.0).abs() > 1e-9) {
        return Err(Error::InvalidArgument("pilots must have unit modulus".into()));
    }
    let sigma = noise_var_for_snr(&g.g, snr_db)?;
    let mut rng = seed::rng(seed);
    let mut y = g.g.clone();
    for l in 0..y.ncols() {
        for r in 0..rows {
            let z = if sigma > 0.0 {
                complex_normal(&mut rng, sigma)
            } else {
                C64::new(0.0, 0.0)
            };
            y[(r, l)] = pilots[r] * y[(r, l)] + z;
        }
    }
    Ok(ReceivedSignal {
        y,
        pilots: pilots.to_vec(),
        noise_var: sigma,
    })
}

/// Monte-Carlo moments of the per-hop channels.
#[derive(Debug, Clone)]
pub struct SubbandStats {
    pub trials: usize,
    /// Sample covariance `E[g_l g_l^H]` of every hop.
    pub cov: Vec<CMat>,
    /// Standard error of each entry of `cov[l] − cov[0]` (index 0 is all zero).
    pub cov_diff_se: Vec<nalgebra::DMatrix<f64>>,
    /// Per-row cross-correlations `E[g_{r,l} g*_{r,l'}]` for every pair `l < l'`.
    pub cross: Vec<CrossCorrelation>,
}

#[derive(Debug, Clone)]
pub struct CrossCorrelation {
    pub l: usize,
    pub l2: usize,
    pub mean: Vec<C64>,
    /// Standard error of each entry of `mean`.
    pub se: Vec<f64>,
    /// Same-hop power `E|g_{r,l}|²` per row, for scale.
    pub power: Vec<f64>,
}

/// Estimates per-hop covariances and cross-hop correlations over independent draws.
pub fn empirical_subband_stats(
    trials: usize,
    sc: &Scenario,
    grid: &GridSpec,
    cfg: &SystemConfig,
    master_seed: u64,
) -> Result<SubbandStats> {
    if trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are required".into()));
    }
    sc.validate(cfg)?;
    let rows = cfg.n_rows();
    let lc = cfg.n_subbands;
    let mut cov = vec![CMat::zeros(rows, rows); lc];
    let mut diff_sq = vec![nalgebra::DMatrix::<f64>::zeros(rows, rows); lc];
    let pairs: Vec<(usize, usize)> = (0..lc)
        .flat_map(|a| (a + 1..lc).map(move |b| (a, b)))
        .collect();
    let mut cross_sum = vec![vec![C64::new(0.0, 0.0); rows]; pairs.len()];
    let mut cross_sq = vec![vec![0.0; rows]; pairs.len()];
    let mut power = vec![vec![0.0; rows]; lc];
    for t in 0..trials {
        let trial_seed = seed::derive(master_seed, &[t as u64]);
        let paths = sample_paths(sc, grid, cfg, seed::substream(trial_seed, Stream::Paths))?;
        let g = synth_fst_channel(&paths, cfg).g;
        let col = |l: usize| &g.as_slice()[l * rows..(l + 1) * rows];
        let g0 = col(0);
        for l in 0..lc {
            let gl = col(l);
            let c = &mut cov[l];
            for j in 0..rows {
                let gj = gl[j].conj();
                let g0j = g0[j].conj();
                for i in 0..=j {
                    let v = gl[i] * gj;
                    c[(i, j)] += v;
                    if l > 0 {
                        let dv = v - g0[i] * g0j;
                        diff_sq[l][(i, j)] += dv.norm_sqr();
                    }
                }
            }
            for r in 0..rows {
                power[l][r] += gl[r].norm_sqr();
            }
        }
        for (pi, &(a, b)) in pairs.iter().enumerate() {
            let (ga, gb) = (col(a), col(b));
            for r in 0..rows {
                let v = ga[r] * gb[r].conj();
                cross_sum[pi][r] += v;
                cross_sq[pi][r] += v.norm_sqr();
            }
        }
    }
    let n = trials as f64;
    let mut cov_diff_se = Vec::with_capacity(lc);
    for l in 0..lc {
        for j in 0..rows {
            for i in 0..=j {
                let v = cov[l][(i, j)] / n;
                cov[l][(i, j)] = v;
                cov[l][(j, i)] = v.conj();
            }
        }
    }
    for l in 0..lc {
        let mut se = nalgebra::DMatrix::<f64>::zeros(rows, rows);
        if l > 0 {
            for j in 0..rows {
                for i in 0..=j {
                    let mean = cov[l][(i, j)] - cov[0][(i, j)];
                    let var = (diff_sq[l][(i, j)] / n - mean.norm_sqr()).max(0.0) * n / (n - 1.0);
                    let s = (var / n).sqrt();
                    se[(i, j)] = s;
                    se[(j, i)] = s;
                }
            }
        }
        cov_diff_se.push(se);
    }
    let cross = pairs
        .iter()
        .enumerate()
        .map(|(pi, &(a, b))| {
            let mean: Vec<C64> = cross_sum[pi].iter().map(|v| v / n).collect();
            let se = cross_sq[pi]
                .iter()
                .zip(&mean)
                .map(|(sq, m)| ((sq / n - m.norm_sqr()).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect();
            CrossCorrelation {
                l: a,
                l2: b,
                mean,
                se,
                power: power[a].iter().map(|p| p / n).collect(),
            }
        })
        .collect();
    Ok(SubbandStats {
        trials,
        cov,
        cov_diff_se,
        cross,
    })
}

/// Nearest grid coordinates and signed offsets of a path (delay, cosines, Doppler).
pub fn grid_offsets(p: &Path, grid: &GridSpec) -> ([usize; 4], [f64; 4]) {
    let vals = [p.delay, p.elev_cos, p.azim_cos, p.doppler];
    let mut idx = [0; 4];
    let mut off = [0.0; 4];
    for axis in Axis::ALL {
        let (i, o) = grid.nearest(axis, vals[axis.index()]);
        idx[axis.index()] = i;
        off[axis.index()] = o;
    }
    (idx, off)
}

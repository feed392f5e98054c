//! Sounding geometry, sampling grids and off-grid offsets.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};

/// Normal cyclic-prefix overhead relative to the useful symbol (144/2048).
const NORMAL_CP_RATIO: f64 = 144.0 / 2048.0;
/// OFDM symbols per slot with normal cyclic prefix.
pub const SYMBOLS_PER_SLOT: f64 = 14.0;

/// OFDM symbol duration including the normal cyclic prefix, in seconds.
pub fn symbol_duration(subcarrier_spacing: f64) -> f64 {
    (1.0 + NORMAL_CP_RATIO) / subcarrier_spacing
}

/// Slot duration (14 symbols) in seconds.
pub fn slot_duration(subcarrier_spacing: f64) -> f64 {
    SYMBOLS_PER_SLOT * symbol_duration(subcarrier_spacing)
}

/// All scalars describing the frequency-hopping sounding geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_fft: usize,
    pub n_sc: usize,
    /// Subcarrier spacing Δφ in Hz.
    pub subcarrier_spacing: f64,
    pub n_subbands: usize,
    pub n_comb: usize,
    /// Pilot subcarriers per transmission (N = N_SC / (L·N_TC)).
    pub srs_len: usize,
    pub m_v: usize,
    pub m_h: usize,
    /// Fullband soundings K.
    pub n_soundings: usize,
    pub doppler_oversample: usize,
    /// Interval between consecutive SRS transmissions, seconds.
    pub delta_t: f64,
    /// Interval between fullband soundings, seconds.
    pub delta_big_t: f64,
    /// Subband index sounded by the l-th hop.
    pub hop_schedule: Vec<usize>,
    pub noise_var: f64,
    pub carrier_freq: f64,
}

impl SystemConfig {
    /// Full-size parameters of the reference 3.5 GHz / 100 MHz deployment.
    pub fn paper() -> Self {
        let scs = 30e3;
        Self {
            n_fft: 4096,
            n_sc: 3264,
            subcarrier_spacing: scs,
            n_subbands: 4,
            n_comb: 4,
            srs_len: 204,
            m_v: 4,
            m_h: 8,
            n_soundings: 10,
            doppler_oversample: 3,
            delta_t: symbol_duration(scs),
            delta_big_t: 4.0 * slot_duration(scs),
            hop_schedule: (0..4).collect(),
            noise_var: 1.0,
            carrier_freq: 3.5e9,
        }
    }

    /// Reduced geometry used for dense desk-scale experiments
    /// (N=16, M=2x4, K=4, 1536 dictionary columns, 512 observations per subband).
    pub fn desk() -> Self {
        let scs = 30e3;
        Self {
            n_fft: 512,
            n_sc: 256,
            subcarrier_spacing: scs,
            n_subbands: 4,
            n_comb: 4,
            srs_len: 16,
            m_v: 2,
            m_h: 4,
            n_soundings: 4,
            doppler_oversample: 3,
            delta_t: symbol_duration(scs),
            delta_big_t: 4.0 * slot_duration(scs),
            hop_schedule: (0..4).collect(),
            noise_var: 1.0,
            carrier_freq: 3.5e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_fft", self.n_fft),
            ("n_sc", self.n_sc),
            ("n_subbands", self.n_subbands),
            ("n_comb", self.n_comb),
            ("srs_len", self.srs_len),
            ("m_v", self.m_v),
            ("m_h", self.m_h),
            ("n_soundings", self.n_soundings),
            ("doppler_oversample", self.doppler_oversample),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.srs_len * self.n_subbands * self.n_comb != self.n_sc {
            return Err(Error::InvalidConfig(format!(
                "srs_len*n_subbands*n_comb = {} but n_sc = {}",
                self.srs_len * self.n_subbands * self.n_comb,
                self.n_sc
            )));
        }
        if self.n_sc > self.n_fft {
            return Err(Error::InvalidConfig("n_sc exceeds n_fft".into()));
        }
        for (name, v) in [
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("delta_t", self.delta_t),
            ("delta_big_t", self.delta_big_t),
            ("carrier_freq", self.carrier_freq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig("noise_var must be non-negative".into()));
        }
        if self.hop_schedule.len() != self.n_subbands {
            return Err(Error::InvalidConfig(format!(
                "hop_schedule has {} entries, expected {}",
                self.hop_schedule.len(),
                self.n_subbands
            )));
        }
        let mut seen = vec![false; self.n_subbands];
        for &q in &self.hop_schedule {
            if q >= self.n_subbands || seen[q] {
                return Err(Error::InvalidConfig(
                    "hop_schedule must be a permutation of 0..n_subbands".into(),
                ));
            }
            seen[q] = true;
        }
        Ok(())
    }

    /// Antennas M = M_v·M_h.
    pub fn m(&self) -> usize {
        self.m_v * self.m_h
    }

    /// Pilot subcarrier spacing Δf = N_TC·Δφ.
    pub fn delta_f(&self) -> f64 {
        self.n_comb as f64 * self.subcarrier_spacing
    }

    /// Subband spacing ΔF = N_SC·Δφ/L.
    pub fn subband_spacing(&self) -> f64 {
        self.n_sc as f64 * self.subcarrier_spacing / self.n_subbands as f64
    }

    /// Observations per subband, N·M·K.
    pub fn n_rows(&self) -> usize {
        self.srs_len * self.m() * self.n_soundings
    }

    /// Doppler grid size K̃ = S_ν·K.
    pub fn n_doppler_grid(&self) -> usize {
        self.doppler_oversample * self.n_soundings
    }

    /// Largest unaliased Doppler magnitude 1/(2ΔT).
    pub fn doppler_limit(&self) -> f64 {
        0.5 / self.delta_big_t
    }

    /// Doppler shift for a UE speed in m/s: v·f_c/c.
    pub fn doppler_for_speed(&self, speed_mps: f64) -> f64 {
        speed_mps * self.carrier_freq / SPEED_OF_LIGHT
    }
}

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sampling grids of the delay / directional-cosine / Doppler domains.
///
/// Delay grid `n/(Ñ·Δf)` on `[0, 1/Δf)`, cosine grids `2m/M̃ − 1` on `[−1, 1)`,
/// Doppler grid `(k − K̃/2)/(K̃·ΔT)` on `[−1/(2ΔT), 1/(2ΔT))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub n_delay: usize,
    pub n_elev: usize,
    pub n_azim: usize,
    pub n_doppler: usize,
    pub delta_f: f64,
    pub delta_big_t: f64,
}

impl GridSpec {
    /// Grid matched to the observation sizes (Ñ=N, M̃=M, K̃=S_ν·K).
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            n_delay: cfg.srs_len,
            n_elev: cfg.m_v,
            n_azim: cfg.m_h,
            n_doppler: cfg.n_doppler_grid(),
            delta_f: cfg.delta_f(),
            delta_big_t: cfg.delta_big_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_delay == 0 || self.n_elev == 0 || self.n_azim == 0 || self.n_doppler == 0 {
            return Err(Error::InvalidConfig("grid sizes must be at least 1".into()));
        }
        if !(self.delta_f > 0.0 && self.delta_big_t > 0.0) {
            return Err(Error::InvalidConfig("grid spacings must be positive".into()));
        }
        Ok(())
    }

    /// Checks that the grid refers to the same Δf and ΔT as `cfg`.
    pub fn check_against(&self, cfg: &SystemConfig) -> Result<()> {
        self.validate()?;
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if !rel(self.delta_f, cfg.delta_f()) || !rel(self.delta_big_t, cfg.delta_big_t) {
            return Err(Error::InvalidConfig(
                "grid spacing does not match the system configuration".into(),
            ));
        }
        Ok(())
    }

    /// True when Ñ=N, M̃_v=M_v and M̃_h=M_h.
    pub fn is_square_for(&self, cfg: &SystemConfig) -> bool {
        self.n_delay == cfg.srs_len && self.n_elev == cfg.m_v && self.n_azim == cfg.m_h
    }

    pub fn n_cols(&self) -> usize {
        self.n_delay * self.n_elev * self.n_azim * self.n_doppler
    }

    pub fn len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Delay => self.n_delay,
            Axis::Elevation => self.n_elev,
            Axis::Azimuth => self.n_azim,
            Axis::Doppler => self.n_doppler,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n_delay, self.n_elev, self.n_azim, self.n_doppler]
    }

    pub fn delay(&self, n: usize) -> f64 {
        n as f64 / (self.n_delay as f64 * self.delta_f)
    }

    pub fn elev_cos(&self, m: usize) -> f64 {
        2.0 * m as f64 / self.n_elev as f64 - 1.0
    }

    pub fn azim_cos(&self, m: usize) -> f64 {
        2.0 * m as f64 / self.n_azim as f64 - 1.0
    }

    pub fn doppler(&self, k: usize) -> f64 {
        (k as f64 - self.n_doppler as f64 / 2.0) / (self.n_doppler as f64 * self.delta_big_t)
    }

    /// Grid value of `axis` at index `i`.
    pub fn value(&self, axis: Axis, i: usize) -> f64 {
        match axis {
            Axis::Delay => self.delay(i),
            Axis::Elevation => self.elev_cos(i),
            Axis::Azimuth => self.azim_cos(i),
            Axis::Doppler => self.doppler(i),
        }
    }

    pub fn values(&self, axis: Axis) -> Vec<f64> {
        (0..self.len(axis)).map(|i| self.value(axis, i)).collect()
    }

    /// Spacing between adjacent grid points on `axis`.
    pub fn spacing(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Delay => 1.0 / (self.n_delay as f64 * self.delta_f),
            Axis::Elevation => 2.0 / self.n_elev as f64,
            Axis::Azimuth => 2.0 / self.n_azim as f64,
            Axis::Doppler => 1.0 / (self.n_doppler as f64 * self.delta_big_t),
        }
    }

    /// Period of the steering phase along `axis` (the grid wraps after one period).
    pub fn period(&self, axis: Axis) -> f64 {
        self.spacing(axis) * self.len(axis) as f64
    }

    /// Column index of grid point `(n, m_v, m_h, k)`.
    pub fn col_index(&self, n: usize, mv: usize, mh: usize, k: usize) -> usize {
        ((n * self.n_elev + mv) * self.n_azim + mh) * self.n_doppler + k
    }

    /// Inverse of [`GridSpec::col_index`].
    pub fn col_coords(&self, c: usize) -> [usize; 4] {
        let k = c % self.n_doppler;
        let rest = c / self.n_doppler;
        let mh = rest % self.n_azim;
        let rest = rest / self.n_azim;
        let mv = rest % self.n_elev;
        let n = rest / self.n_elev;
        [n, mv, mh, k]
    }

    /// Nearest grid index and signed offset of `value` on `axis`, accounting for
    /// the periodicity of the steering phase.
    pub fn nearest(&self, axis: Axis, value: f64) -> (usize, f64) {
        let spacing = self.spacing(axis);
        let origin = self.value(axis, 0);
        let pos = (value - origin) / spacing;
        let idx = pos.round();
        let offset = (pos - idx) * spacing;
        let len = self.len(axis) as i64;
        let wrapped = (idx as i64).rem_euclid(len) as usize;
        (wrapped, offset)
    }
}

/// One of the four off-grid axes; the order is the column-index nesting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Delay,
    Elevation,
    Azimuth,
    Doppler,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Delay, Axis::Elevation, Axis::Azimuth, Axis::Doppler];

    pub fn index(self) -> usize {
        match self {
            Axis::Delay => 0,
            Axis::Elevation => 1,
            Axis::Azimuth => 2,
            Axis::Doppler => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Delay => "delay",
            Axis::Elevation => "elevation",
            Axis::Azimuth => "azimuth",
            Axis::Doppler => "doppler",
        }
    }
}

/// Off-grid offsets ω = [α; β; γ; η], one per grid index of each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct OffGridParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
}

impl OffGridParams {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            alpha: vec![0.0; grid.n_delay],
            beta: vec![0.0; grid.n_elev],
            gamma: vec![0.0; grid.n_azim],
            eta: vec![0.0; grid.n_doppler],
        }
    }

    pub fn axis(&self, axis: Axis) -> &[f64] {
        match axis {
            Axis::Delay => &self.alpha,
            Axis::Elevation => &self.beta,
            Axis::Azimuth => &self.gamma,
            Axis::Doppler => &self.eta,
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut Vec<f64> {
        match axis {
            Axis::Delay => &mut self.alpha,
            Axis::Elevation => &mut self.beta,
            Axis::Azimuth => &mut self.gamma,
            Axis::Doppler => &mut self.eta,
        }
    }

    pub fn is_zero(&self) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| self.axis(a).iter().all(|&v| v == 0.0))
    }

    pub fn check_shape(&self, grid: &GridSpec) -> Result<()> {
        for axis in Axis::ALL {
            if self.axis(axis).len() != grid.len(axis) {
                return Err(crate::error::shape_err(
                    format!("{} offsets of length {}", axis.name(), grid.len(axis)),
                    format!("{}", self.axis(axis).len()),
                ));
            }
        }
        Ok(())
    }

    /// Clamps every offset to half the local grid spacing.
    pub fn clamp(&mut self, grid: &GridSpec) {
        for axis in Axis::ALL {
            let bound = 0.5 * grid.spacing(axis);
            for v in self.axis_mut(axis).iter_mut() {
                *v = v.clamp(-bound, bound);
            }
        }
    }

    pub fn within_bounds(&self, grid: &GridSpec) -> bool {
        Axis::ALL.iter().all(|&axis| {
            let bound = 0.5 * grid.spacing(axis) * (1.0 + 1e-12);
            self.axis(axis).iter().all(|v| v.abs() <= bound)
        })
    }

    /// Every offset multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * t).collect();
        Self {
            alpha: s(&self.alpha),
            beta: s(&self.beta),
            gamma: s(&self.gamma),
            eta: s(&self.eta),
        }
    }

    /// Offsets normalised by the grid spacing of their axis.
    pub fn normalized_norm(&self, grid: &GridSpec) -> f64 {
        let mut acc = 0.0;
        for axis in Axis::ALL {
            let sp = grid.spacing(axis);
            acc += self.axis(axis).iter().map(|v| (v / sp) * (v / sp)).sum::<f64>();
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        SystemConfig::paper().validate().unwrap();
        SystemConfig::desk().validate().unwrap();
        let p = SystemConfig::paper();
        assert_eq!(p.m(), 32);
        assert!((p.delta_f() - 120e3).abs() < 1e-6);
        assert!((p.subband_spacing() - 24.48e6).abs() < 1e-3);
    }

    #[test]
    fn rejects_inconsistent_counts_and_schedules() {
        let mut c = SystemConfig::desk();
        c.srs_len = 15;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::desk();
        c.hop_schedule = alloc::vec![0, 0, 1, 2];
        assert!(c.validate().is_err());
        let mut c = SystemConfig::desk();
        c.m_v = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_values_and_ranges() {
        let cfg = SystemConfig::desk();
        let g = GridSpec::from_config(&cfg);
        assert_eq!(g.n_cols(), 16 * 8 * 12);
        assert_eq!(g.delay(0), 0.0);
        assert!(g.delay(g.n_delay - 1) < 1.0 / cfg.delta_f());
        assert_eq!(g.elev_cos(0), -1.0);
        assert_eq!(g.doppler(g.n_doppler / 2), 0.0);
        assert!((g.doppler(0) + cfg.doppler_limit()).abs() < 1e-9);
        for c in [0, 17, 1000, g.n_cols() - 1] {
            let [n, mv, mh, k] = g.col_coords(c);
            assert_eq!(g.col_index(n, mv, mh, k), c);
        }
    }

    #[test]
    fn nearest_wraps_cosines() {
        let cfg = SystemConfig::desk();
        let g = GridSpec::from_config(&cfg);
        let (i, off) = g.nearest(Axis::Azimuth, 0.99);
        assert_eq!(i, 0);
        assert!((off + 0.01).abs() < 1e-12);
        let (i, off) = g.nearest(Axis::Delay, g.delay(3) + 0.2 * g.spacing(Axis::Delay));
        assert_eq!(i, 3);
        assert!((off - 0.2 * g.spacing(Axis::Delay)).abs() < 1e-20);
    }

    #[test]
    fn clamp_enforces_half_spacing() {
        let cfg = SystemConfig::desk();
        let g = GridSpec::from_config(&cfg);
        let mut w = OffGridParams::zeros(&g);
        w.alpha[0] = 1.0;
        w.eta[3] = -1e9;
        w.clamp(&g);
        assert!(w.within_bounds(&g));
        assert_eq!(w.alpha[0], 0.5 * g.spacing(Axis::Delay));
    }
}

//! Doppler-domain extrapolation of an estimate and the NMSE metric.
//!
//! The estimate `ĝ = W(ω̂)·ĥ` evaluates the first-order model at the sounding
//! instants `kΔT`. Prediction evaluates the same model at a continuous time `t`:
//! the Doppler entry of grid point `k` becomes `exp(j2π·t·ν̄_k)·(1 + j2π·t·η̂_k)`,
//! which coincides with the sounding rows at `t = kΔT`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::channel::ChannelTensor;
use crate::config::{Axis, OffGridParams, SystemConfig};
use crate::dictionary::DictionarySet;
use crate::error::{shape_err, Error, Result};
use crate::steering::cis;
use crate::{CMat, C64};

/// Reported in place of `−∞` dB.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `10·log10(err/energy)`, floored at [`NMSE_FLOOR_DB`].
pub fn ratio_db(err: f64, energy: f64) -> f64 {
    if err <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * (err / energy).log10()).max(NMSE_FLOOR_DB)
}

/// `10·log10(‖Ĝ − G‖²/‖G‖²)`.
pub fn nmse_db(g_true: &CMat, g_hat: &CMat) -> Result<f64> {
    if g_true.shape() != g_hat.shape() {
        return Err(shape_err(
            format!("{:?}", g_true.shape()),
            format!("{:?}", g_hat.shape()),
        ));
    }
    let energy: f64 = g_true.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let err: f64 = g_true.iter().zip(g_hat.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(ratio_db(err, energy))
}

/// Mean of dB values taken on the linear scale: `10·log10(mean(10^{v/10}))`.
///
/// Non-finite entries are skipped; `None` when nothing is left.
pub fn aggregate_db(values_db: &[f64]) -> Option<f64> {
    let lin: Vec<f64> = values_db
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| 10f64.powf(v / 10.0))
        .collect();
    if lin.is_empty() {
        return None;
    }
    Some(ratio_db(lin.iter().sum::<f64>() / lin.len() as f64, 1.0))
}

/// Future instants, as offsets in seconds after the last sounding.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub horizon_times: Vec<f64>,
}

impl PredictionRequest {
    /// `count` instants evenly spaced over `(0, ΔT]`, i.e. from just after the last
    /// sounding up to the next one.
    pub fn next_interval(cfg: &SystemConfig, count: usize) -> Self {
        let dt = cfg.delta_big_t;
        Self {
            horizon_times: (1..=count).map(|j| dt * j as f64 / count as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_times.is_empty() {
            return Err(Error::InvalidArgument("empty prediction horizon".into()));
        }
        let mut last = 0.0;
        for (i, &t) in self.horizon_times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || (i > 0 && t <= last) {
                return Err(Error::InvalidArgument(
                    "horizon times must be non-negative, finite and strictly increasing".into(),
                ));
            }
            last = t;
        }
        Ok(())
    }

    /// Instants measured from the first sounding.
    pub fn absolute_times(&self, cfg: &SystemConfig) -> Vec<f64> {
        let last = (cfg.n_soundings as f64 - 1.0) * cfg.delta_big_t;
        self.horizon_times.iter().map(|t| last + t).collect()
    }
}

/// Evaluates the first-order model of `h_hat` (grid coefficients, `ncols × L`) at
/// the absolute instants `times`. The result has the row layout of
/// [`crate::channel::synth_at_times`].
pub fn evaluate_at_times(
    dict: &DictionarySet,
    h_hat: &CMat,
    omega: &OffGridParams,
    times: &[f64],
) -> Result<ChannelTensor> {
    omega.check_shape(&dict.grid)?;
    if h_hat.nrows() != dict.ncols() {
        return Err(shape_err(
            format!("{} grid rows", dict.ncols()),
            format!("{}", h_hat.nrows()),
        ));
    }
    let grid = &dict.grid;
    let [n, mv, mh, _] = dict.obs_dims;
    let t_count = times.len();
    let rows = n * mv * mh * t_count;
    let l_count = h_hat.ncols();
    let mut g = CMat::zeros(rows, l_count);
    let a = &dict.row_coef;
    for c in 0..dict.ncols() {
        if h_hat.row(c).iter().all(|v| v.re == 0.0 && v.im == 0.0) {
            continue;
        }
        let [i0, i1, i2, i3] = grid.col_coords(c);
        let (alpha, beta, gamma) = (
            omega.axis(Axis::Delay)[i0],
            omega.axis(Axis::Elevation)[i1],
            omega.axis(Axis::Azimuth)[i2],
        );
        let eta = omega.axis(Axis::Doppler)[i3];
        let nu = grid.doppler(i3);
        let doppler: Vec<(C64, f64)> = times
            .iter()
            .map(|&t| (cis(2.0 * PI * t * nu), 2.0 * PI * t * eta))
            .collect();
        let mut row = 0;
        for nn in 0..n {
            let bn = dict.b[(nn, i0)];
            let sn = a[0][nn] * alpha;
            for v in 0..mv {
                let bv = bn * dict.cv[(v, i1)];
                let sv = sn + a[1][v] * beta;
                for h in 0..mh {
                    let bh = bv * dict.ch[(h, i2)];
                    let sh = sv + a[2][h] * gamma;
                    for &(d, sd) in &doppler {
                        let w = bh * d * C64::new(1.0, sh + sd);
                        for l in 0..l_count {
                            g[(row, l)] += w * h_hat[(c, l)];
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    Ok(ChannelTensor {
        g,
        dims: [n, mv, mh, t_count],
    })
}

/// Predicted channel at the instants of `req`.
pub fn extrapolate(
    dict: &DictionarySet,
    h_hat: &CMat,
    omega: &OffGridParams,
    cfg: &SystemConfig,
    req: &PredictionRequest,
) -> Result<ChannelTensor> {
    req.validate()?;
    evaluate_at_times(dict, h_hat, omega, &req.absolute_times(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn nmse_examples() {
        let g = CMat::from_fn(4, 2, |r, c| C64::new(r as f64 + 1.0, c as f64));
        assert_eq!(nmse_db(&g, &g).unwrap(), NMSE_FLOOR_DB);
        assert!(nmse_db(&g, &CMat::zeros(4, 2)).unwrap().abs() < 1e-12);
        let e = g.map(|v| v * 0.1);
        assert!((nmse_db(&g, &(&g + e)).unwrap() + 20.0).abs() < 1e-9);
        assert_eq!(nmse_db(&CMat::zeros(4, 2), &g), Err(Error::ZeroEnergy));
        assert!(nmse_db(&g, &CMat::zeros(2, 2)).is_err());
    }

    #[test]
    fn aggregation_is_linear() {
        let m = aggregate_db(&[-10.0, -20.0]).unwrap();
        assert!((m - 10.0 * (0.055f64).log10()).abs() < 1e-12);
        assert!((m + 12.596).abs() < 1e-3);
        assert_eq!(aggregate_db(&[-7.0]), Some(-7.0));
        assert_eq!(aggregate_db(&[]), None);
    }

    #[test]
    fn horizons() {
        let cfg = SystemConfig::desk();
        let req = PredictionRequest::next_interval(&cfg, 8);
        req.validate().unwrap();
        assert_eq!(req.horizon_times.len(), 8);
        assert!((req.horizon_times[7] - cfg.delta_big_t).abs() < 1e-18);
        assert!(PredictionRequest { horizon_times: vec![] }.validate().is_err());
        assert!(PredictionRequest { horizon_times: vec![2.0, 1.0] }.validate().is_err());
    }
}

//! Steering vectors, subband phase and the Dirichlet (Sinc) sampling kernel.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;


use crate::config::SystemConfig;
use crate::C64;

/// Below this `|sin(πx)|` the kernel switches to its analytic limit.
const SINC_SINGULARITY: f64 = 1e-12;

#[inline]
pub(crate) fn cis(phase: f64) -> C64 {
    C64::new(phase.cos(), phase.sin())
}

/// Delay steering vector, entry `n` = `exp(−j2π·n·Δf·τ)`.
pub fn steering_delay(tau: f64, n_entries: usize, delta_f: f64) -> Vec<C64> {
    (0..n_entries)
        .map(|n| cis(-2.0 * PI * n as f64 * delta_f * tau))
        .collect()
}

/// Half-wavelength array steering vector in directional cosine `u`,
/// entry `n` = `exp(−jπ·n·u)`. Used for both UPA axes.
pub fn steering_space(u: f64, n_entries: usize) -> Vec<C64> {
    (0..n_entries).map(|n| cis(-PI * n as f64 * u)).collect()
}

/// Doppler steering vector, entry `n` = `exp(+j2π·n·ΔT·ν)`.
pub fn steering_doppler(nu: f64, n_entries: usize, delta_big_t: f64) -> Vec<C64> {
    (0..n_entries)
        .map(|n| cis(2.0 * PI * n as f64 * delta_big_t * nu))
        .collect()
}

/// Phase of hop `l`: `exp(j2π(l·Δt·ν − q_l·ΔF·τ))`.
pub fn subband_phase(l: usize, tau: f64, nu: f64, cfg: &SystemConfig) -> C64 {
    let q = cfg.hop_schedule[l] as f64;
    cis(2.0 * PI * (l as f64 * cfg.delta_t * nu - q * cfg.subband_spacing() * tau))
}

/// Normalised Dirichlet kernel
/// `f_N(x) = N^{-1/2}·exp(−jπ(N−1)x)·sin(πNx)/sin(πx)`,
/// continuous at integer `x` where it equals `√N·exp(−jπ(N−1)x)`.
pub fn sinc_kernel(x: f64, n: usize) -> C64 {
    let nf = n as f64;
    let phase = cis(-PI * (nf - 1.0) * x);
    let den = (PI * x).sin();
    if den.abs() < SINC_SINGULARITY {
        // At integer m, sin(πNx)/sin(πx) -> N·(−1)^{m(N−1)}.
        let m = x.round();
        let ratio = nf * (PI * m * (nf - 1.0)).cos();
        return phase * (ratio / nf.sqrt());
    }
    phase * ((PI * nf * x).sin() / den / nf.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Axis, GridSpec};

    fn geometric_sum(x: f64, n: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            acc += cis(-2.0 * PI * i as f64 * x);
        }
        acc / (n as f64).sqrt()
    }

    #[test]
    fn delay_steering_examples() {
        let df = 120e3;
        assert!(steering_delay(0.0, 8, df)
            .iter()
            .all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let n = 204;
        let tau1 = 1.0 / (n as f64 * df);
        let b = steering_delay(tau1, n, df);
        for (i, z) in b.iter().enumerate() {
            let want = cis(-2.0 * PI * i as f64 / n as f64);
            assert!((z - want).norm() < 1e-12);
        }
        let tau2 = 2.0 * tau1;
        assert!((tau2 - 8.1699e-8).abs() < 1e-11);
        let b2 = steering_delay(tau2, n, df);
        assert!((b2[1] - cis(-4.0 * PI / 204.0)).norm() < 1e-12);
        let norm2: f64 = b2.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm2 - n as f64).abs() < 1e-9);
    }

    #[test]
    fn space_and_doppler_steering_examples() {
        assert!(steering_space(0.0, 4)
            .iter()
            .all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let c = steering_space(1.0, 3);
        assert!((c[2] - C64::new(1.0, 0.0)).norm() < 1e-12);
        let mv = 4;
        let c = steering_space(2.0 / mv as f64, mv);
        for (n, z) in c.iter().enumerate() {
            assert!((z - cis(-2.0 * PI * n as f64 / mv as f64)).norm() < 1e-12);
        }
        let dt = 2e-3;
        let k = 10;
        let d = steering_doppler(1.0 / (k as f64 * dt), k, dt);
        for (n, z) in d.iter().enumerate() {
            assert!((z - cis(2.0 * PI * n as f64 / k as f64)).norm() < 1e-12);
        }
        assert!(steering_doppler(0.0, 5, dt)
            .iter()
            .all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn doppler_grid_centre_is_static() {
        let cfg = SystemConfig::desk();
        let g = GridSpec::from_config(&cfg);
        let nu = g.value(Axis::Doppler, g.n_doppler / 2);
        assert_eq!(nu, 0.0);
        let d = steering_doppler(nu, cfg.n_soundings, cfg.delta_big_t);
        assert!(d.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn subband_phase_examples() {
        let mut cfg = SystemConfig::paper();
        assert!((subband_phase(0, 3e-7, 150.0, &cfg) - C64::new(1.0, 0.0)).norm() < 1e-15);
        for l in 0..cfg.n_subbands {
            assert!((subband_phase(l, 0.0, 0.0, &cfg) - C64::new(1.0, 0.0)).norm() < 1e-15);
        }
        // Δt of one unit, ν=100 Hz, q_1=1, ΔF=3264·30 kHz/4, τ=1e-7 s.
        cfg.delta_t = 1.0;
        let got = subband_phase(1, 1e-7, 100.0, &cfg);
        let want = cis(2.0 * PI * (100.0 - 2.448));
        assert!((got - want).norm() < 1e-9);
        assert!((got.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sinc_kernel_examples() {
        assert!((sinc_kernel(0.0, 9) - C64::new(3.0, 0.0)).norm() < 1e-14);
        for m in 1..16 {
            assert!(sinc_kernel(m as f64 / 16.0, 16).norm() < 1e-12);
        }
        let got = sinc_kernel(0.125, 4);
        let want = cis(-3.0 * PI / 8.0) * 1.306_562_964_876_376_6;
        assert!((got - want).norm() < 1e-12);
        assert!((got - geometric_sum(0.125, 4)).norm() < 1e-12);
    }

    #[test]
    fn sinc_kernel_limits_at_integers() {
        for n in [1usize, 2, 3, 4, 7, 16] {
            for m in -3i32..=3 {
                let x = m as f64;
                let got = sinc_kernel(x, n);
                let want = geometric_sum(x, n);
                assert!((got - want).norm() < 1e-9, "n={n} m={m}");
                assert!((got.norm() - (n as f64).sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lemma_one_on_grid_is_one_hot() {
        let n = 204;
        let df = 120e3;
        for m in [0usize, 2, 101, 203] {
            let tau = m as f64 / (n as f64 * df);
            for idx in 0..n {
                let v = sinc_kernel(df * tau - idx as f64 / n as f64, n);
                if idx == m {
                    assert!((v.norm() - (n as f64).sqrt()).abs() < 1e-9);
                } else {
                    assert!(v.norm() < 1e-10);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn sinc_matches_geometric_sum(x in -2.0f64..2.0, n in 1usize..40) {
            let got = sinc_kernel(x, n);
            let want = geometric_sum(x, n);
            proptest::prop_assert!((got - want).norm() < 1e-8 * (n as f64));
            proptest::prop_assert!(got.norm() <= (n as f64).sqrt() + 1e-9);
        }

        #[test]
        fn steering_vectors_are_unit_modulus(tau in 0.0f64..1e-5, u in -1.0f64..1.0, nu in -300.0f64..300.0) {
            for z in steering_delay(tau, 16, 120e3) { proptest::prop_assert!((z.norm() - 1.0).abs() < 1e-12); }
            for z in steering_space(u, 8) { proptest::prop_assert!((z.norm() - 1.0).abs() < 1e-12); }
            for z in steering_doppler(nu, 10, 2e-3) { proptest::prop_assert!((z.norm() - 1.0).abs() < 1e-12); }
        }
    }
}

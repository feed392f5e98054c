use jcep_core::channel::{qpsk_pilots, sample_paths, synth_fst_channel, synth_received, ReceivedSignal, Scenario};
use jcep_core::dictionary::DictionarySet;
use jcep_core::hmp::{llr_update, HmpEngine, HmpOptions};
use jcep_core::predict::{aggregate_db, nmse_db};
use jcep_core::seed::{derive, substream, Stream};
use jcep_core::{CMat, GridSpec, SystemConfig, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn dict() -> &'static (SystemConfig, DictionarySet) {
    static D: OnceLock<(SystemConfig, DictionarySet)> = OnceLock::new();
    D.get_or_init(|| {
        let cfg = SystemConfig::desk();
        let grid = GridSpec::from_config(&cfg);
        let dict = DictionarySet::new(&grid, &cfg).unwrap();
        (cfg, dict)
    })
}

/// Received block for scenario `sc` at `snr_db`, seeded like the experiment harness.
fn scenario_block(sc: &Scenario, seed: u64, snr_db: f64) -> (ReceivedSignal, CMat, Vec<usize>) {
    let (cfg, dict) = dict();
    let paths = sample_paths(sc, &dict.grid, cfg, substream(seed, Stream::Paths)).unwrap();
    let g = synth_fst_channel(&paths, cfg);
    let pilots = qpsk_pilots(dict.nrows(), substream(seed, Stream::Pilots));
    let rx = synth_received(&g, &pilots, snr_db, substream(seed, Stream::Noise)).unwrap();
    let support = paths
        .paths
        .iter()
        .map(|p| {
            let (i, _) = jcep_core::channel::grid_offsets(p, &dict.grid);
            dict.grid.col_index(i[0], i[1], i[2], i[3])
        })
        .collect();
    (rx, g.g, support)
}

fn short() -> HmpOptions {
    HmpOptions { t_out: 2, t_in: 12, ..HmpOptions::default() }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den.max(1e-300)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn subband_permutation_permutes_estimate(seed in 0u64..1000, shift in 1usize..4) {
        let (cfg, dict) = dict();
        let mut sc = Scenario::new(3, cfg, 60.0 / 3.6);
        sc.on_grid = seed % 2 == 0;
        let (rx, _, _) = scenario_block(&sc, derive(seed, &[1]), 10.0);
        let l = rx.y.ncols();
        let perm: Vec<usize> = (0..l).map(|j| (j + shift) % l).collect();
        let mut rx_p = rx.clone();
        for (j, &src) in perm.iter().enumerate() {
            rx_p.y.set_column(j, &rx.y.column(src));
        }
        let a = HmpEngine::new(dict, &rx, short()).unwrap().run().unwrap();
        let b = HmpEngine::new(dict, &rx_p, short()).unwrap().run().unwrap();
        prop_assert!(rel(&a.llr, &b.llr) < 1e-9);
        prop_assert!(rel(&a.zeta, &b.zeta) < 1e-9);
        prop_assert!(rel(&a.sigma, &b.sigma) < 1e-9);
        prop_assert!((a.rho - b.rho).abs() < 1e-9 * a.rho);
        for ax in jcep_core::Axis::ALL {
            let tol = 1e-9 * dict.grid.spacing(ax);
            for (x, y) in a.omega.axis(ax).iter().zip(b.omega.axis(ax)) {
                prop_assert!((x - y).abs() <= tol);
            }
        }
        for (j, &src) in perm.iter().enumerate() {
            let d = (a.h_hat.column(src) - b.h_hat.column(j)).norm();
            prop_assert!(d <= 1e-9 * a.h_hat.norm().max(1e-300));
        }
    }

    #[test]
    fn subband_phase_rotates_estimate(seed in 0u64..1000, col in 0usize..4, phi in 0.0f64..6.2) {
        let (cfg, dict) = dict();
        let sc = Scenario::new(3, cfg, 60.0 / 3.6);
        let (rx, _, _) = scenario_block(&sc, derive(seed, &[2]), 10.0);
        let rot = C64::from_polar(1.0, phi);
        let mut rx_r = rx.clone();
        let rotated = rx.y.column(col) * rot;
        rx_r.y.set_column(col, &rotated);
        let a = HmpEngine::new(dict, &rx, short()).unwrap().run().unwrap();
        let b = HmpEngine::new(dict, &rx_r, short()).unwrap().run().unwrap();
        prop_assert!(rel(&a.llr, &b.llr) < 1e-9);
        let want = a.h_hat.column(col) * rot;
        prop_assert!((want - b.h_hat.column(col)).norm() <= 1e-9 * a.h_hat.norm().max(1e-300));
    }
}

proptest! {
    #[test]
    fn llr_is_monotone_in_evidence(
        mags in proptest::collection::vec(0.0f64..3.0, 1..5),
        bump in 0.0f64..2.0,
        which in 0usize..4,
        tau in 0.01f64..2.0,
        sigma in 0.01f64..5.0,
        rho in 0.01f64..0.99,
    ) {
        let l = mags.len();
        let mu: Vec<C64> = mags.iter().map(|&m| C64::new(m, 0.0)).collect();
        let taus = vec![tau; l];
        let (base, _) = llr_update(&mu, &taus, sigma, rho);
        let mut more = mu.clone();
        more[which % l] = C64::from_polar(mags[which % l] + bump, 0.7);
        let (up, _) = llr_update(&more, &taus, sigma, rho);
        prop_assert!(up >= base - 1e-12);
    }
}

#[test]
fn zero_noise_on_grid_truth_is_a_fixed_point() {
    let (_, dict) = dict();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let l = 4;
    let support = [100usize, 700, 1300];
    let mut h = CMat::zeros(dict.ncols(), l);
    for &c in &support {
        for j in 0..l {
            h[(c, j)] = C64::from_polar(0.5 + r.random::<f64>(), r.random::<f64>() * 6.28);
        }
    }
    let mut y = CMat::zeros(dict.nrows(), l);
    for j in 0..l {
        y.set_column(j, &nalgebra::DVector::from_vec(dict.apply_w_vec(h.column(j).as_slice())));
    }
    let rx = ReceivedSignal { y, pilots: vec![C64::new(1.0, 0.0); dict.nrows()], noise_var: 0.0 };
    let opts = HmpOptions { hyper_warmup: 0, ..HmpOptions::default() };
    let floor = opts.variance_floor;
    let mut eng = HmpEngine::new(dict, &rx, opts).unwrap();
    {
        let st = &mut eng.state;
        st.mu_h = h.clone();
        st.tau_h.fill(floor);
        st.beta_h.fill(1.0 / floor);
        for c in 0..dict.ncols() {
            let on = support.contains(&c);
            st.zeta[c] = if on { 1.0 } else { 0.0 };
            st.sigma[c] = if on { h.row(c).iter().map(|v| v.norm_sqr()).sum::<f64>() / l as f64 } else { floor };
        }
        st.rho = support.len() as f64 / dict.ncols() as f64;
    }
    for it in 0..3 {
        eng.inner_iteration(it).unwrap();
    }
    let st = &eng.state;
    let err = (&st.mu_h - &h).norm() / h.norm();
    assert!(err < 1e-6, "drift {err:.3e}");
    for &c in &support {
        assert!(st.zeta[c] > 0.99);
    }
}

#[test]
fn on_grid_twenty_db_estimation() {
    let (cfg, dict) = dict();
    let mut sc = Scenario::new(3, cfg, 60.0 / 3.6);
    sc.on_grid = true;
    let mut v = Vec::new();
    for t in 0..10 {
        let (rx, g, _) = scenario_block(&sc, derive(21, &[t]), 20.0);
        let res = HmpEngine::new(dict, &rx, HmpOptions::default()).unwrap().run().unwrap();
        v.push(nmse_db(&g, &res.g_hat).unwrap());
    }
    let m = aggregate_db(&v).unwrap();
    assert!(m <= -25.0, "mean NMSE {m:.2} dB");
}

#[test]
fn offgrid_learning_lowers_nmse() {
    let (cfg, dict) = dict();
    let sc = Scenario::new(6, cfg, 60.0 / 3.6);
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for t in 0..50 {
        let (rx, g, _) = scenario_block(&sc, derive(31, &[t]), 10.0);
        let a = HmpEngine::new(dict, &rx, HmpOptions::default()).unwrap().run().unwrap();
        let b = HmpEngine::new(dict, &rx, HmpOptions { offgrid: None, ..HmpOptions::default() })
            .unwrap()
            .run()
            .unwrap();
        on.push(nmse_db(&g, &a.g_hat).unwrap());
        off.push(nmse_db(&g, &b.g_hat).unwrap());
    }
    let (a, b) = (aggregate_db(&on).unwrap(), aggregate_db(&off).unwrap());
    assert!(a < b, "enabled {a:.3} dB, disabled {b:.3} dB");
}

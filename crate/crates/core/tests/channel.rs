use drsma_core::channel::{
    channel_statistics, geo_beam_gain, leo_gamma, phase_error_correlation, realize_channels, realize_phase_error,
    sample_geometry, sample_rician, sample_scenario, LinkPath,
};
use drsma_core::linalg::{hermitian_eigen, is_hermitian, outer, trace_re, CMat, CVec, C64};
use drsma_core::ScenarioConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn deg2(x: f64) -> f64 {
    x * (std::f64::consts::PI / 180.0).powi(2)
}

#[test]
fn phase_correlation_matches_monte_carlo() {
    let sigma2 = deg2(25.0);
    let dim = 4;
    let corr = phase_error_correlation(sigma2, dim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ones = CVec::from_element(dim, C64::new(1.0, 0.0));
    let mut acc = CMat::zeros(dim, dim);
    let n = 1_000_000;
    for _ in 0..n {
        acc += outer(&realize_phase_error(&ones, sigma2, &mut rng));
    }
    acc /= C64::new(n as f64, 0.0);
    assert!((acc - &corr.x).iter().all(|z| z.norm() < 1e-2));
}

#[test]
fn realized_channel_mean_is_damped_estimate() {
    let sigma2 = deg2(100.0);
    let h = CVec::from_vec(vec![C64::new(1.0, -2.0), C64::new(0.3, 0.4), C64::new(-5.0, 0.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 200_000;
    let mut mean = CVec::zeros(3);
    for _ in 0..n {
        let a = realize_phase_error(&h, sigma2, &mut rng);
        for i in 0..3 {
            assert!((a[i].norm() - h[i].norm()).abs() < 1e-12 * h[i].norm());
        }
        mean += a;
    }
    mean /= C64::new(n as f64, 0.0);
    let damp = (-sigma2 / 2.0).exp();
    for i in 0..3 {
        assert!((mean[i] - h[i] * damp).norm() < 1e-2 * h[i].norm(), "{i}");
    }
    assert_eq!(realize_phase_error(&h, 0.0, &mut rng), h);
}

#[test]
fn rician_power_matches_gamma() {
    let cfg = ScenarioConfig::default();
    assert!((cfg.rician_factor() - 10.0).abs() < 1e-12);
    let gamma = leo_gamma(&cfg, &LinkPath::from_offset(cfg.leo_height_m, 20e3));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 1_000_000;
    let mean: f64 = (0..n).map(|_| sample_rician(gamma, cfg.rician_factor(), &mut rng).norm_sqr()).sum::<f64>() / n as f64;
    assert!((mean - gamma).abs() < 0.01 * gamma, "{mean} vs {gamma}");
}

#[test]
fn statistics_are_hermitian_psd_with_trace_identity() {
    let cfg = ScenarioConfig::default();
    for seed in 0..5 {
        let (_, est) = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let stats = channel_statistics(&est, deg2(10.0), deg2(5.0)).unwrap();
        let links = stats
            .g
            .iter()
            .zip(&est.h_g)
            .chain(stats.g2l.iter().zip(&est.h_g2l))
            .chain(stats.l.iter().flatten().zip(est.h_l.iter().flatten()))
            .chain(stats.l2g.iter().flatten().zip(est.h_l2g.iter().flatten()));
        for (s, h) in links {
            let scale = h.norm_squared();
            for m in [&s.h, &s.h_res] {
                assert!(is_hermitian(m, 1e-12 * scale));
                assert!(hermitian_eigen(m).0.iter().all(|&v| v >= -1e-10 * scale));
            }
            assert!((trace_re(&s.h) - scale).abs() < 1e-12 * scale);
        }
    }
}

#[test]
fn same_seed_same_channels() {
    let cfg = ScenarioConfig::default();
    let a = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(99));
    let b = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(99));
    assert_eq!(a, b);
    let c = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(100));
    assert_ne!(a.1, c.1);
    // Independent draws per terminal.
    assert_ne!(a.1.h_g[0], a.1.h_g[1]);
}

#[test]
fn geometry_respects_heights() {
    let cfg = ScenarioConfig::default();
    let g = sample_geometry(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(g.geo_gu.iter().chain(&g.geo_lu).all(|p| p.distance_m >= 3.5786e7));
    assert!(g.leo_lu.iter().chain(&g.leo_gu).flatten().all(|p| p.distance_m >= cfg.leo_height_m));
    assert!(g.leo_lu.iter().flatten().all(|p| (0.0..std::f64::consts::FRAC_PI_2).contains(&p.off_axis_rad)));
}

#[test]
fn realized_channels_keep_layout() {
    let cfg = ScenarioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, est) = sample_scenario(&cfg, &mut rng);
    let actual = realize_channels(&est, deg2(5.0), deg2(5.0), &mut rng);
    actual.validate().unwrap();
    assert_eq!(realize_channels(&est, 0.0, 0.0, &mut rng), est);
}

#[test]
fn beam_gain_is_continuous_and_monotone() {
    let t3 = 0.4412f64.to_radians();
    assert_eq!(geo_beam_gain(0.0, t3, 3.0), 3.0);
    assert!((geo_beam_gain(t3, t3, 1.0) - 0.5).abs() < 0.005);
    let mut prev = f64::INFINITY;
    for i in 0..=1000 {
        let g = geo_beam_gain(t3 * i as f64 / 1000.0, t3, 1.0);
        assert!(g <= prev);
        prev = g;
    }
}

proptest! {
    #[test]
    fn residual_correlation_identity(sigma2 in 0.0f64..2.0, dim in 1usize..7) {
        let c = phase_error_correlation(sigma2, dim).unwrap();
        let m = (-sigma2 / 2.0).exp();
        for i in 0..dim {
            for j in 0..dim {
                let want = c.x[(i, j)].re - 2.0 * m + 1.0;
                prop_assert!((c.x_res[(i, j)].re - want).abs() < 1e-12);
                prop_assert_eq!(c.x_res[(i, j)].im, 0.0);
            }
            prop_assert_eq!(c.x[(i, i)].re, 1.0);
        }
        for mat in [&c.x, &c.x_res] {
            prop_assert!(hermitian_eigen(mat).0.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn perfect_csi_statistics_are_outer_products(seed in 0u64..1000) {
        let cfg = ScenarioConfig::default();
        let (_, est) = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let stats = channel_statistics(&est, 0.0, 0.0).unwrap();
        for (s, h) in stats.l.iter().flatten().zip(est.h_l.iter().flatten()) {
            let scale = h.norm_squared();
            prop_assert!((&s.h - outer(h)).norm() <= 1e-14 * scale);
            prop_assert_eq!(s.h_res.norm(), 0.0);
        }
    }

    #[test]
    fn negative_variance_rejected(sigma2 in -10.0f64..-1e-12) {
        prop_assert!(phase_error_correlation(sigma2, 3).is_err());
    }
}

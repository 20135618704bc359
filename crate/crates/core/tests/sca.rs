use drsma_core::channel::{channel_statistics, ChannelEstimate};
use drsma_core::conic::{LinExpr, VarId};
use drsma_core::experiment::realization_statistics;
use drsma_core::linalg::{hermitian_eigen, outer, quad_form, real_embedding, trace_re, CMat, CVec, C64};
use drsma_core::rates::{power_segments, Block, CommonRateSplit, CovariateSet, RateFamily};
use drsma_core::sca::{
    build_p4, extract_precoders, initialize, leading_vectors, log_denominators, penalty, rank_one_gap,
    relative_rank_gap, solve_mmf, taylor_upper, BlockVectors,
};
use drsma_core::{Error, NetworkLayout, Scheme, ScenarioConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn single_user() -> ScenarioConfig {
    ScenarioConfig { num_gu: 1, num_lu: 0, num_leo: 0, group_sizes: vec![], ..ScenarioConfig::default() }
}

fn psd_from(cols: &[Vec<(f64, f64)>]) -> CMat {
    let d = cols[0].len();
    let mut m = CMat::zeros(d, d);
    for c in cols {
        m += outer(&CVec::from_iterator(d, c.iter().map(|&(a, b)| C64::new(a, b))));
    }
    m
}

fn psd_strategy() -> impl Strategy<Value = CMat> {
    (2usize..5).prop_flat_map(|d| {
        prop::collection::vec(prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), d), 1..=d).prop_map(|c| psd_from(&c))
    })
}

#[test]
fn p4_counts_for_desk_layout() {
    let cfg = ScenarioConfig::default();
    let stats = realization_statistics(&cfg, 1, 0).unwrap();
    let mask = Scheme::DRsma.mask();
    let (f0, xi0) = initialize(&stats, &cfg, mask).unwrap();
    let blocks: Vec<Block> = Block::all(&cfg.layout());
    let eig = leading_vectors(&f0, &blocks);
    let p4 = build_p4(&stats, &cfg, mask, &xi0, &eig, 0.1).unwrap();
    let (n, k, m) = (6, 4, 2);
    assert_eq!(p4.program.num_exp_cones(), 2 * n + 3 * k);
    assert_eq!(p4.program.num_exp_cones(), 24);
    assert_eq!(p4.program.num_psd(), 2 + m + k);
    // Nonnegative common parts, epigraph, common-sum and sub-common rows,
    // power rows, log-split equalities and Taylor rows.
    let rows = (n + k + k) + (n + k) + (n + k) + k + (1 + m) + 2 * (2 * n + 3 * k);
    assert_eq!(p4.program.num_linear_rows(), rows);
    assert_eq!(p4.vars.alpha.count(), 24);
    assert_eq!(p4.vars.blocks.len(), 2 + m + k);

    let sdma = build_p4(&stats, &cfg, Scheme::MSdma.mask(), &xi_for(&stats, &cfg, Scheme::MSdma), &eig, 0.1).unwrap();
    assert_eq!(sdma.program.num_exp_cones(), n + k);
    assert_eq!(sdma.program.num_psd(), 1 + k);
}

fn xi_for(stats: &drsma_core::channel::ChannelStatistics, cfg: &ScenarioConfig, s: Scheme) -> drsma_core::sca::Families<f64> {
    initialize(stats, cfg, s.mask()).unwrap().1
}

#[test]
fn zero_beta_objective_is_t() {
    let cfg = ScenarioConfig::default();
    let stats = realization_statistics(&cfg, 2, 0).unwrap();
    let (f0, xi0) = initialize(&stats, &cfg, Scheme::DRsma.mask()).unwrap();
    let eig = leading_vectors(&f0, &Block::all(&cfg.layout()));
    let p4 = build_p4(&stats, &cfg, Scheme::DRsma.mask(), &xi0, &eig, 0.0).unwrap();
    assert!(p4.vars.penalty.terms.is_empty());
    assert_eq!(p4.vars.penalty.constant, 0.0);
}

#[test]
fn rank_one_start_has_zero_penalty() {
    let cfg = ScenarioConfig::default();
    let stats = realization_statistics(&cfg, 3, 0).unwrap();
    let (f0, _) = initialize(&stats, &cfg, Scheme::DRsma.mask()).unwrap();
    let eig = leading_vectors(&f0, &Block::all(&cfg.layout()));
    assert!(penalty(&f0, &eig, 10.0).abs() < 1e-9 * cfg.geo_power);
}

#[test]
fn initialization_properties() {
    let cfg = ScenarioConfig::default();
    let layout = cfg.layout();
    let stats = realization_statistics(&cfg, 4, 0).unwrap();
    for scheme in Scheme::ALL {
        let mask = scheme.mask();
        let (f0, xi0) = initialize(&stats, &cfg, mask).unwrap();
        assert!((f0.geo_power() - cfg.geo_power).abs() < 1e-9 * cfg.geo_power);
        for m in 0..layout.num_leo() {
            assert!((f0.leo_power(&layout, m) - cfg.leo_power).abs() < 1e-9 * cfg.leo_power);
        }
        let seg = power_segments(&stats, &f0).unwrap();
        for fam in RateFamily::ALL {
            for (i, &x) in xi0.get(fam).iter().enumerate() {
                let den = seg.ratio(fam, i, cfg.noise_power).den;
                assert!(x.is_finite());
                assert!((x.exp() - den).abs() < 1e-9 * den);
            }
        }
        if !mask.enable_geo_common {
            assert_eq!(trace_re(&f0.geo_common), 0.0);
            assert!(xi0.gc.is_empty() && xi0.sup.is_empty());
        }
    }
}

#[test]
fn single_user_initialization_is_mrt() {
    let cfg = single_user();
    let stats = realization_statistics(&cfg, 5, 0).unwrap();
    let h = &stats.estimate.h_g[0];
    let (f0, _) = initialize(&stats, &cfg, Scheme::DRsma.mask()).unwrap();
    let want = outer(h) * C64::new(cfg.geo_power / 2.0 / h.norm_squared(), 0.0);
    assert!((&f0.geo_designated - want).norm() < 1e-9 * cfg.geo_power);
    assert!((trace_re(&f0.geo_designated) - cfg.geo_power / 2.0).abs() < 1e-9 * cfg.geo_power);
}

#[test]
fn zero_channel_is_degenerate() {
    let cfg = single_user();
    let layout = cfg.layout();
    let est = ChannelEstimate { layout: layout.clone(), h_g: vec![CVec::zeros(4)], h_g2l: vec![], h_l: vec![], h_l2g: vec![] };
    let stats = channel_statistics(&est, 0.0, 0.0).unwrap();
    assert!(matches!(initialize(&stats, &cfg, Scheme::DRsma.mask()), Err(Error::Degenerate(_))));
}

#[test]
fn taylor_is_strictly_below_off_the_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let p: f64 = rand::Rng::random_range(&mut rng, -8.0..8.0);
        let e = taylor_upper(LinExpr::var(VarId(0)), p);
        assert!(e.eval(&[p + 0.1]) < (p + 0.1).exp());
        assert!((e.eval(&[p]) - p.exp()).abs() <= 1e-12 * p.exp().max(1.0));
    }
    assert_eq!(taylor_upper(LinExpr::var(VarId(0)), 0.0).eval(&[0.0]), 1.0);
}

#[test]
fn penalty_examples() {
    let layout = NetworkLayout { num_gu: 1, group_sizes: vec![], geo_antennas: 2, leo_antennas: 1 };
    let mut f = CovariateSet::zeros(&layout);
    f.geo_designated = CMat::identity(2, 2);
    let v = CVec::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
    let mut eig = BlockVectors::new();
    eig.insert(Block::GeoDesignated, v);
    assert!((penalty(&f, &eig, 2.5) - 2.5).abs() < 1e-12);
}

#[test]
fn extraction_of_rank_one_blocks() {
    let cfg = ScenarioConfig::default();
    let layout = cfg.layout();
    let stats = realization_statistics(&cfg, 6, 0).unwrap();
    let (f0, _) = initialize(&stats, &cfg, Scheme::DRsma.mask()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let split = CommonRateSplit::zeros(&layout);
    let (p, randomized) = extract_precoders(&f0, &stats, &cfg, Scheme::DRsma.mask(), &split, &mut rng).unwrap();
    assert!(!randomized);
    let a = power_segments(&stats, &f0).unwrap();
    let b = power_segments(&stats, &p.covariates()).unwrap();
    for (x, y) in a.lu.iter().zip(&b.lu) {
        for (u, v) in [(x.sup, y.sup), (x.sub, y.sub), (x.private, y.private), (x.interference, y.interference)] {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0));
        }
    }
    for (x, y) in a.gu.iter().zip(&b.gu) {
        assert!((x.common - y.common).abs() <= 1e-8 * x.common.abs().max(1.0));
        assert!((x.designated - y.designated).abs() <= 1e-8 * x.designated.abs().max(1.0));
    }

    // F = 4 v v^H gives 2 v up to a global phase.
    let v = CVec::from_vec(vec![C64::new(0.5, 0.5), C64::new(0.5, -0.5), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let mut f = CovariateSet::zeros(&layout);
    f.geo_designated = outer(&v) * C64::new(4.0, 0.0);
    let (p, _) = extract_precoders(&f, &stats, &cfg, Scheme::MSdma.mask(), &split, &mut rng).unwrap();
    let w = &p.w_d;
    let phase = v.dotc(w) / C64::new(v.dotc(w).norm(), 0.0);
    assert!((w - &v * (phase * C64::new(2.0, 0.0))).norm() < 1e-10);
}

#[test]
fn randomized_extraction_stays_below_relaxation() {
    let cfg = single_user();
    let layout = cfg.layout();
    let stats = realization_statistics(&cfg, 7, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sol = solve_mmf(&stats, &cfg, Scheme::DRsma.mask(), &mut rng).unwrap();
    let t = sol.slack.as_ref().unwrap().t;

    let h = &stats.estimate.h_g[0];
    let u = h / C64::new(h.norm(), 0.0);
    let mut other = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    other -= &u * u.dotc(&other);
    other /= C64::new(other.norm(), 0.0);
    let mut f = CovariateSet::zeros(&layout);
    f.geo_designated = (outer(&u) + outer(&other)) * C64::new(cfg.geo_power / 2.0, 0.0);
    assert!(relative_rank_gap(&f.geo_designated) > 0.4);
    let split = CommonRateSplit::zeros(&layout);
    let (p, randomized) = extract_precoders(&f, &stats, &cfg, Scheme::DRsma.mask(), &split, &mut rng).unwrap();
    assert!(randomized);
    assert!(p.geo_power() <= cfg.geo_power * (1.0 + 1e-12));
    let mmf = drsma_core::sca::candidate_mmf(&stats, &cfg, &p, &split).unwrap();
    assert!(mmf <= t + 1e-6, "{mmf} > {t}");
}

#[test]
fn desk_run_invariants() {
    let cfg = ScenarioConfig::default();
    let layout = cfg.layout();
    let stats = realization_statistics(&cfg, 8, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let res = solve_mmf(&stats, &cfg, Scheme::DRsma.mask(), &mut rng).unwrap();
    assert!(res.failure.is_none(), "{:?}", res.failure);

    // Power rows and non-negative split.
    let f = &res.covariates;
    assert!(f.geo_power() <= cfg.geo_power + 1e-6);
    for m in 0..layout.num_leo() {
        assert!(f.leo_power(&layout, m) <= cfg.leo_power + 1e-6);
        assert!(res.precoders.leo_power(&layout, m) <= cfg.leo_power * (1.0 + 1e-9));
    }
    assert!(res.precoders.geo_power() <= cfg.geo_power * (1.0 + 1e-9));
    let c = &res.split;
    assert!(c.c_g.iter().chain(&c.c_sup).chain(&c.c_sub).all(|&x| x >= 0.0));

    // Common-sum rows and log-split rows at the last solved point.
    let s = res.slack.as_ref().unwrap();
    let sum = c.super_common_sum();
    assert!(s.alpha.gc.iter().chain(&s.alpha.sup).all(|&a| sum <= a + 1e-6));
    for fam in RateFamily::ALL {
        for ((a, e), x) in s.alpha.get(fam).iter().zip(s.eta.get(fam)).zip(s.xi.get(fam)) {
            assert!(a * std::f64::consts::LN_2 <= e - x + 1e-6);
        }
    }

    // Monotone and bounded trace.
    assert!(res.trace.max_decrease() <= 1e-6, "{}", res.trace.max_decrease());
    let max_tr = |v: Vec<&CMat>| v.into_iter().map(trace_re).fold(0.0, f64::max);
    let hg = max_tr(stats.g.iter().chain(&stats.g2l).map(|l| &l.h).collect());
    let hl = max_tr(stats.l.iter().chain(&stats.l2g).flatten().map(|l| &l.h).collect());
    let bound = (1.0 + (cfg.geo_power * hg + layout.num_leo() as f64 * cfg.leo_power * hl) / cfg.noise_power).log2();
    assert!(res.trace.rows.iter().all(|r| r.t <= bound));

    // Penalty sandwich on every final block.
    let mut vr = ChaCha8Rng::seed_from_u64(9);
    for b in Block::all(&layout) {
        let m = f.block(b);
        let gap = rank_one_gap(m);
        let v = CVec::from_fn(m.nrows(), |_, _| {
            C64::new(rand::Rng::sample(&mut vr, rand_distr::StandardNormal), rand::Rng::sample(&mut vr, rand_distr::StandardNormal))
        });
        let v = &v / C64::new(v.norm(), 0.0);
        let tol = 1e-9 * trace_re(m).max(1.0);
        assert!(gap >= -tol && gap <= trace_re(m) - quad_form(m, &v) + tol);
    }

    // Totals against the solver's t once the iterates are rank one.
    if res.converged && res.max_gap <= cfg.gap_tol {
        assert!((res.report.mmf - s.t).abs() < 1e-4, "{} vs {}", res.report.mmf, s.t);
    }

    let mut buf = Vec::new();
    res.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,objective,penalty,max_gap,status,seconds"));
    assert_eq!(text.lines().count(), res.trace.rows.len() + 1);
    assert!(res.to_json().unwrap().contains("\"converged\""));

    // Taylor points re-derived from the final covariances stay finite.
    let xi = log_denominators(&stats, f, &cfg, res.mask).unwrap();
    assert!(RateFamily::ALL.iter().all(|&fam| xi.get(fam).iter().all(|x| x.is_finite())));
}

proptest! {
    #[test]
    fn penalty_sandwich(f in psd_strategy(), raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4)) {
        let d = f.nrows();
        let v = CVec::from_iterator(d, raw.iter().take(d).map(|&(a, b)| C64::new(a, b)));
        prop_assume!(v.norm() > 1e-3);
        let v = &v / C64::new(v.norm(), 0.0);
        let gap = rank_one_gap(&f);
        let tol = 1e-10 * trace_re(&f).max(1.0);
        prop_assert!(gap >= -tol);
        prop_assert!(gap <= trace_re(&f) - quad_form(&f, &v) + tol);
    }

    #[test]
    fn gap_matches_embedded_eigensolver(f in psd_strategy()) {
        // The real embedding repeats every eigenvalue, so its top value is
        // lambda_max of the complex matrix.
        let emb = real_embedding(&f);
        let top = emb.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((rank_one_gap(&f) - (trace_re(&f) - top)).abs() <= 1e-10 * trace_re(&f).max(1.0));
    }

    #[test]
    fn penalty_with_leading_vector_is_gap(f in psd_strategy()) {
        let d = f.nrows();
        let layout = NetworkLayout { num_gu: 1, group_sizes: vec![], geo_antennas: d, leo_antennas: 1 };
        let mut set = CovariateSet::zeros(&layout);
        set.geo_common = f.clone();
        let eig = leading_vectors(&set, &[Block::GeoCommon]);
        let (vals, _) = hermitian_eigen(&f);
        let want = trace_re(&f) - vals[0];
        prop_assert!((penalty(&set, &eig, 1.0) - want).abs() <= 1e-10 * trace_re(&f).max(1.0));
    }
}

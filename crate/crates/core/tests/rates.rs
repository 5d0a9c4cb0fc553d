//! Cross-module rate checks and pinned stream outcomes that sit outside
//! the acceptance gate proper.

use expfam::bayes::{self, Prior, QuadratureGrid, SmoothFn};
use expfam::family::FiniteExpFamily;
use expfam::fit;
use expfam::harness::{self, PredictorSpec, SequenceSpec};
use expfam::predictor::{self, WeightFunction};

const THETA_BERN_07: f64 = 0.847_297_860_387_203_7;

fn bern_periodic(len: usize) -> Vec<usize> {
    (0..len).map(|i| [1, 1, 1, 0][i % 4]).collect()
}

fn fitted_slope(points: &[(u64, f64)]) -> f64 {
    let as_f64: Vec<(f64, f64)> = points.iter().map(|&(t, d)| (t as f64, d)).collect();
    harness::fit_slope(&as_f64).unwrap().slope
}

#[test]
fn wsnml_expansion_tracks_wsnml_for_exponential_weight() {
    // |wsnml_expansion - wsnml_predict| decays at slope <= -1.8 for
    // w(theta) = e^theta on a fixed periodic stream.
    let fam = FiniteExpFamily::bernoulli();
    let seq = bern_periodic(1 << 11);
    let w = WeightFunction::new(|_, th: &[f64]| th[0].exp()).with_log_grad(|_, _| vec![1.0]);
    let mut points = Vec::new();
    for t in harness::dyadic_grid(4, 11) {
        let s = fit::summarize(&fam, &seq[..t as usize]).unwrap();
        let exact = predictor::wsnml_predict(&fam, &s, &w).unwrap();
        let approx = predictor::wsnml_expansion(&fam, &s, &w).unwrap();
        points.push((t, exact.max_abs_diff(&approx)));
    }
    let slope = fitted_slope(&points);
    assert!(slope <= -1.8, "slope {slope}");
}

#[test]
fn jeffreys_posterior_coordinate_mean_has_no_first_order_shift() {
    // Under the Jeffreys prior the second-order posterior-mean expansion
    // of f(theta) = theta is the ML point itself, so the quadrature mean
    // must approach theta_ML at O(1/t^2). (The 1/t displacement lives in
    // the Riemannian center, not the coordinate mean.)
    let fam = FiniteExpFamily::bernoulli();
    let seq = bern_periodic(1 << 11);
    let grid = QuadratureGrid::default();
    let f = SmoothFn::natural_coord(0);
    let mut points = Vec::new();
    for t in harness::dyadic_grid(4, 11) {
        let s = fit::summarize(&fam, &seq[..t as usize]).unwrap();
        let fit = fit::ml_fit(&fam, &s).unwrap();
        let expansion = bayes::posterior_mean_expansion(&fam, &s, &Prior::jeffreys(), &f).unwrap();
        assert!((expansion - fit.theta.0[0]).abs() < 1e-12);
        let quad = bayes::quad_posterior_mean(&fam, &s, &Prior::jeffreys(), &f, &grid).unwrap();
        points.push((t, (quad - fit.theta.0[0]).abs()));
    }
    let slope = fitted_slope(&points);
    assert!(slope <= -1.8, "slope {slope}");
}

#[test]
fn expansion_tracks_mixture_on_an_iid_stream() {
    // max_y |expansion - mixture| fitted slope <= -1.8 for t >= 32 on a
    // fixed i.i.d. stream.
    let fam = FiniteExpFamily::bernoulli();
    let spec = SequenceSpec::parse(&format!("iid:theta={THETA_BERN_07}:seed=7"), 1 << 11).unwrap();
    let seq = harness::generate(&fam, &spec).unwrap();
    let specs = vec![
        PredictorSpec::parse("expansion:jeffreys", None).unwrap(),
        PredictorSpec::parse("mixture:jeffreys", None).unwrap(),
    ];
    let out = harness::run_comparison(
        &fam,
        &seq,
        &specs,
        &harness::dyadic_grid(5, 11),
        &QuadratureGrid::default(),
    )
    .unwrap();
    let slope = out[0].series.slope().unwrap();
    assert!(slope <= -1.8, "slope {slope}");
}

#[test]
fn mixture_tracks_quadrature_bayes_on_a_nonsaturated_family() {
    // Counting family on {0, 1, 2} with phi(x) = x: no conjugate
    // structure, so the Bayes side comes entirely from quadrature with
    // per-node Newton mean inversion while the mixture side runs SNML
    // refits. The two still agree at O(1/t^2).
    let fam = FiniteExpFamily::new(vec![1.0; 3], vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
    let seq: Vec<usize> = (0..1 << 10).map(|i| [0, 1, 2, 1][i % 4]).collect();
    let specs = vec![
        PredictorSpec::parse("mixture:jeffreys", None).unwrap(),
        PredictorSpec::parse("bayes-quad:jeffreys", None).unwrap(),
    ];
    let out = harness::run_comparison(
        &fam,
        &seq,
        &specs,
        &harness::dyadic_grid(4, 10),
        &QuadratureGrid::default(),
    )
    .unwrap();
    let slope = out[0].series.slope().unwrap();
    let r2 = out[0].series.r2().unwrap();
    assert!((-2.5..=-1.8).contains(&slope), "slope {slope}");
    assert!(r2 > 0.98, "r2 {r2}");
}

#[test]
fn pinned_iid_stream_prefix() {
    // Golden: Bernoulli(0.7), seed 11, first ten symbols.
    let fam = FiniteExpFamily::bernoulli();
    let spec = SequenceSpec::parse(&format!("iid:theta={THETA_BERN_07}:seed=11"), 10).unwrap();
    assert_eq!(
        harness::generate(&fam, &spec).unwrap(),
        vec![1, 0, 1, 1, 0, 1, 0, 1, 1, 0]
    );
}

#[test]
fn pinned_ineccsi_outcomes_on_iid_streams() {
    // Golden outcomes for the [0.6, 0.8] box from t0 = 64 on seeded
    // Bernoulli(0.7) streams of length 4096.
    let fam = FiniteExpFamily::bernoulli();
    for (seed, ok, first) in [(7u64, true, None), (11, false, Some(64))] {
        let spec =
            SequenceSpec::parse(&format!("iid:theta={THETA_BERN_07}:seed={seed}"), 4096).unwrap();
        let seq = harness::generate(&fam, &spec).unwrap();
        let rep = harness::ineccsi_check(&fam, &seq, 64, &[(0.6, 0.8)]).unwrap();
        assert_eq!(rep.ok, ok, "seed {seed}");
        assert_eq!(rep.first_violation, first, "seed {seed}");
    }
}

#[test]
fn snml_candidates_remain_boundary_safe_along_a_boundary_prefix() {
    // While the prefix is all-heads, the SNML numerators come from
    // limiting fits on both branches; values must match add-one exactly.
    let fam = FiniteExpFamily::bernoulli();
    for t in 1..=6u64 {
        let s = fit::summarize(&fam, &vec![1usize; t as usize]).unwrap();
        let p = predictor::snml_predict(&fam, &s).unwrap();
        assert!(p.meta.boundary);
        let add_one = (t as f64 + 1.0) / (t as f64 + 2.0);
        assert!((p.probs[1] - add_one).abs() <= 1e-12);
    }
}

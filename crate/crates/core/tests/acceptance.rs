//! Acceptance suite: every rate and identity claim the library is built
//! around, one test per criterion, each printing a PASS/FAIL line (run
//! with `--nocapture` to see them on success).
//!
//! Rate claims are slope-fit over dyadic time grids against exact oracles
//! (conjugate closed forms, explicit refits, quadrature); identity claims
//! are checked at machine-level tolerances. Streams are periodic where a
//! noise-free running estimate matters, seeded i.i.d. where the claim is
//! about a sampled stream.

#![allow(clippy::needless_range_loop)]

use expfam::bayes::{self, Prior, QuadratureGrid, SmoothFn};
use expfam::family::{FiniteExpFamily, NaturalParam};
use expfam::fit::{self, SufficientStatSummary};
use expfam::geometry;
use expfam::harness::{self, PredictorSpec, RateKind};
use expfam::predictor;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ln(7/3): i.i.d. Bernoulli(0.7) in natural coordinates.
const THETA_BERN_07: f64 = 0.847_297_860_387_203_7;
/// ln 4: i.i.d. Bernoulli(0.8).
const THETA_BERN_08: f64 = 1.386_294_361_119_890_6;

fn bern_stream(len: usize) -> Vec<usize> {
    (0..len).map(|i| [1, 1, 1, 0][i % 4]).collect()
}

fn cat_stream(len: usize) -> Vec<usize> {
    (0..len).map(|i| [0, 0, 1, 2][i % 4]).collect()
}

fn criterion(n: &str, detail: String, pass: bool) {
    println!(
        "criterion {n}: {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn slope_of(series: &harness::ConvergenceSeries) -> (f64, f64) {
    (
        series.slope().expect("series must be fittable"),
        series.r2().expect("series must be fittable"),
    )
}

fn pair_series(
    family: &FiniteExpFamily,
    seq: &[usize],
    a: &str,
    b: &str,
    grid: &[u64],
) -> harness::ConvergenceSeries {
    let specs = vec![
        PredictorSpec::parse(a, None).unwrap(),
        PredictorSpec::parse(b, None).unwrap(),
    ];
    let mut out =
        harness::run_comparison(family, seq, &specs, grid, &QuadratureGrid::default()).unwrap();
    out.remove(0).series
}

#[test]
fn criterion_01_snml_is_add_one() {
    // SNML via refits equals (counts + 1) / (t + 2) to 1e-12, 100 random
    // summaries with t up to 10^3.
    let fam = FiniteExpFamily::bernoulli();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let t = 1 + (rng.next_u64() % 1000);
        let heads = rng.next_u64() % (t + 1);
        let s = SufficientStatSummary::from_counts(&fam, vec![t - heads, heads]).unwrap();
        let p = predictor::snml_predict(&fam, &s).unwrap();
        let add_one = (heads as f64 + 1.0) / (t as f64 + 2.0);
        worst = worst.max((p.probs[1] - add_one).abs());
    }
    criterion(
        "1 (SNML = Laplace add-one)",
        format!("max |snml - add-one| = {worst:.2e} over 100 random summaries"),
        worst <= 1e-12,
    );
}

#[test]
fn criterion_02_jeffreys_is_add_half() {
    // Conjugate Jeffreys predictor equals (counts + 1/2)/(t + 1) exactly;
    // the quadrature path agrees to 1e-8.
    let fam = FiniteExpFamily::bernoulli();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_exact = 0.0_f64;
    for _ in 0..100 {
        let t = 1 + (rng.next_u64() % 500);
        let heads = rng.next_u64() % (t + 1);
        let s = SufficientStatSummary::from_counts(&fam, vec![t - heads, heads]).unwrap();
        let p = bayes::conjugate_predict(&fam, &s, &Prior::jeffreys()).unwrap();
        let add_half = (heads as f64 + 0.5) / (t as f64 + 1.0);
        worst_exact = worst_exact.max((p.probs[1] - add_half).abs());
    }
    let grid = QuadratureGrid::default();
    let mut worst_quad = 0.0_f64;
    for (tails, heads) in [(3u64, 0u64), (3, 7), (40, 87), (1, 128)] {
        let s = SufficientStatSummary::from_counts(&fam, vec![tails, heads]).unwrap();
        let exact = bayes::conjugate_predict(&fam, &s, &Prior::jeffreys()).unwrap();
        let quad = bayes::quad_posterior_predict(&fam, &s, &Prior::jeffreys(), &grid).unwrap();
        worst_quad = worst_quad.max(exact.max_abs_diff(&quad));
    }
    criterion(
        "2 (Jeffreys = add-one-half)",
        format!("closed form exact to {worst_exact:.2e}; quadrature within {worst_quad:.2e}"),
        worst_exact <= 1e-15 && worst_quad <= 1e-8,
    );
}

#[test]
fn criterion_03_mixture_tracks_bayes() {
    // max_y |(ml + beta^2-snml)/2 - bayes| fits slope in [-2.5, -1.8] with
    // R^2 >= 0.98 on both acceptance streams for both priors, except the
    // categorical/uniform cell, where exact rational evaluation of the
    // mixture and the conjugate predictor shows the 1/t^2 coefficient
    // vanishes at the (1/2, 1/4, 1/4) composition and the gap decays as
    // t^-3 (fitted slope about -2.9 on this grid). That cell is held to
    // its true, faster window; slower-than-t^2 behavior still fails.
    let grid = harness::dyadic_grid(4, 12);
    let bern = FiniteExpFamily::bernoulli();
    let cat = FiniteExpFamily::categorical(3).unwrap();
    let bseq = bern_stream(1 << 12);
    let cseq = cat_stream(1 << 12);
    let mut all_pass = true;
    let mut details = Vec::new();
    for prior in ["jeffreys", "uniform"] {
        for (name, fam, seq) in [("bernoulli", &bern, &bseq), ("categorical3", &cat, &cseq)] {
            let series = pair_series(
                fam,
                seq,
                &format!("mixture:{prior}"),
                &format!("bayes-exact:{prior}"),
                &grid,
            );
            let (slope, r2) = slope_of(&series);
            let window = if name == "categorical3" && prior == "uniform" {
                -3.1..=-2.5
            } else {
                -2.5..=-1.8
            };
            let ok = window.contains(&slope) && r2 >= 0.98;
            all_pass &= ok;
            details.push(format!(
                "{name}/{prior}: slope {slope:.3} r2 {r2:.4} (window {window:?})"
            ));
        }
    }
    criterion(
        "3 (mixture tracks Bayes at O(1/t^2))",
        details.join("; "),
        all_pass,
    );
}

#[test]
fn criterion_04_expansion_consistency() {
    // |expansion - mixture| and |expansion - bayes| both decay at slope
    // <= -1.8; the posterior-mean expansion specialized to f = p(y)
    // reproduces the per-symbol expansion termwise (two code paths).
    let grid = harness::dyadic_grid(4, 12);
    let bern = FiniteExpFamily::bernoulli();
    let cat = FiniteExpFamily::categorical(3).unwrap();
    let bseq = bern_stream(1 << 12);
    let cseq = cat_stream(1 << 12);
    let mut all_pass = true;
    let mut details = Vec::new();
    for prior in ["jeffreys", "uniform"] {
        for (name, fam, seq) in [("bernoulli", &bern, &bseq), ("categorical3", &cat, &cseq)] {
            for other in ["mixture", "bayes-exact"] {
                let series = pair_series(
                    fam,
                    seq,
                    &format!("expansion:{prior}"),
                    &format!("{other}:{prior}"),
                    &grid,
                );
                let (slope, _) = slope_of(&series);
                let ok = slope <= -1.8;
                all_pass &= ok;
                details.push(format!("{name}/{prior} vs {other}: {slope:.3}"));
            }
        }
    }
    // Same formula through two code paths: the posterior-mean expansion
    // specialized to f = p(y) against the per-symbol expansion values.
    let mut worst = 0.0_f64;
    for (fam, seq) in [(&bern, &bseq), (&cat, &cseq)] {
        for t in [16usize, 100, 1000] {
            let s = fit::summarize(fam, &seq[..t]).unwrap();
            for prior in [Prior::jeffreys(), Prior::uniform_mean()] {
                let exp = predictor::expansion_predict(fam, &s, &prior.beta_weight()).unwrap();
                assert!(exp.meta.prenorm_residual.unwrap() <= 1e-13);
                for y in 0..fam.alphabet_size() {
                    let v = bayes::posterior_mean_expansion(fam, &s, &prior, &SmoothFn::prob_of(y))
                        .unwrap();
                    worst = worst.max((v - exp.probs[y]).abs());
                }
            }
        }
    }
    all_pass &= worst <= 1e-12;
    details.push(format!("two-path termwise {worst:.2e}"));
    criterion(
        "4 (per-symbol expansion consistency)",
        details.join("; "),
        all_pass,
    );
}

#[test]
fn criterion_05_ml_vs_bayes_is_order_one_over_t() {
    // The plug-in differs from the Jeffreys predictor at order 1/t:
    // slope in [-1.3, -0.7], confirming the mixture's improvement is real.
    let grid = harness::dyadic_grid(4, 12);
    let fam = FiniteExpFamily::bernoulli();
    let seq = bern_stream(1 << 12);
    let series = pair_series(&fam, &seq, "ml", "bayes-exact:jeffreys", &grid);
    let (slope, r2) = slope_of(&series);
    criterion(
        "5 (ML vs Bayes is O(1/t))",
        format!("slope {slope:.3} r2 {r2:.4}"),
        (-1.3..=-0.7).contains(&slope),
    );
}

#[test]
fn criterion_06_one_step_update_rate() {
    // One-step natural-gradient update vs the exact refit on an i.i.d.
    // Bernoulli(0.7) stream, slope <= -1.8 over dyadic t in [8, 1024].
    let fam = FiniteExpFamily::bernoulli();
    let spec =
        harness::SequenceSpec::parse(&format!("iid:theta={THETA_BERN_07}:seed=7"), (1 << 10) + 1)
            .unwrap();
    let seq = harness::generate(&fam, &spec).unwrap();
    let series = harness::rate_series(
        &fam,
        &seq,
        &RateKind::MlUpdateStep,
        &harness::dyadic_grid(3, 10),
        &QuadratureGrid::default(),
    )
    .unwrap();
    let (slope, r2) = slope_of(&series);
    criterion(
        "6 (one-step ML update rate)",
        format!("slope {slope:.3} r2 {r2:.4} (window [-2.5, -1.8])"),
        (-2.5..=-1.8).contains(&slope),
    );
}

#[test]
fn criterion_07_snml_expansion_and_normalizer() {
    // |snml-expansion - snml| slope <= -1.8; |Z_explicit - 1 - dim/t|
    // slope <= -1.8; the trace identity behind the closed-form normalizer
    // holds to 1e-12 at random parameters.
    let fam = FiniteExpFamily::bernoulli();
    let seq = bern_stream(1 << 11);
    let grid = harness::dyadic_grid(4, 11);
    let series = pair_series(&fam, &seq, "snml-expansion", "snml", &grid);
    let (s_exp, _) = slope_of(&series);
    let z_series = harness::rate_series(
        &fam,
        &seq,
        &RateKind::SnmlNormalizer,
        &grid,
        &QuadratureGrid::default(),
    )
    .unwrap();
    let (s_z, _) = slope_of(&z_series);

    // Trace identity: sum_y p(y) g_y^T I^{-1} g_y = Tr(I^{-1} I) = dim,
    // enumerated at 20 random parameters per family.
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for fam in [
        FiniteExpFamily::bernoulli(),
        FiniteExpFamily::categorical(3).unwrap(),
    ] {
        for _ in 0..20 {
            let theta: Vec<f64> = (0..fam.dim())
                .map(|_| 3.0 * (rng.next_u64() as f64 / u64::MAX as f64) - 1.5)
                .collect();
            let tp = NaturalParam(theta);
            let probs = fam.prob_table(&tp);
            let mu = fam.mean_params(&tp);
            let fisher = fam.fisher_matrix(&tp);
            let summary =
                SufficientStatSummary::from_counts(&fam, vec![1; fam.alphabet_size()]).unwrap();
            let j = fit::observed_information(&fam, &summary, &tp).unwrap();
            assert_eq!(j, fisher); // same code path by construction
            let inv = invert(&fisher);
            let mut expectation = 0.0;
            for y in 0..fam.alphabet_size() {
                let g = fam.score(y, mu.as_slice());
                expectation += probs[y] * quad_form(&inv, &g);
            }
            worst = worst.max((expectation - fam.dim() as f64).abs());
        }
    }
    criterion(
        "7 (SNML expansion + closed-form normalizer)",
        format!(
            "expansion slope {s_exp:.3}; Z-residual slope {s_z:.3}; trace identity {worst:.2e}"
        ),
        s_exp <= -1.8 && s_z <= -1.8 && worst <= 1e-12,
    );
}

#[test]
fn criterion_08_posterior_mean_expansion_rate() {
    // |quadrature posterior mean - expansion| slope <= -1.8 for
    // (mu, jeffreys), (theta, uniform), (p(1), jeffreys) on the Bernoulli
    // stream; 200-node grid, doubling-stable below 1e-9.
    let fam = FiniteExpFamily::bernoulli();
    let seq = bern_stream(1 << 10);
    let grid_t = harness::dyadic_grid(4, 10);
    let quad = QuadratureGrid::default();
    let cases = [
        ("mu, jeffreys", SmoothFn::mean_coord(0), Prior::jeffreys()),
        (
            "theta, uniform",
            SmoothFn::natural_coord(0),
            Prior::uniform_mean(),
        ),
        ("p(1), jeffreys", SmoothFn::prob_of(1), Prior::jeffreys()),
    ];
    let mut all_pass = true;
    let mut details = Vec::new();
    for (label, f, prior) in cases {
        let series = harness::rate_series(
            &fam,
            &seq,
            &RateKind::PosteriorMean {
                f: f.clone(),
                prior: prior.clone(),
            },
            &grid_t,
            &quad,
        )
        .unwrap();
        let (slope, _) = slope_of(&series);
        all_pass &= slope <= -1.8;
        details.push(format!("{label}: {slope:.3}"));
    }
    // Doubling stability at the largest grid time.
    let s = fit::summarize(&fam, &seq[..1 << 10]).unwrap();
    let a = bayes::quad_posterior_mean(
        &fam,
        &s,
        &Prior::jeffreys(),
        &SmoothFn::mean_coord(0),
        &quad,
    )
    .unwrap();
    let b = bayes::quad_posterior_mean(
        &fam,
        &s,
        &Prior::jeffreys(),
        &SmoothFn::mean_coord(0),
        &QuadratureGrid::new(400),
    )
    .unwrap();
    let stability = (a - b).abs();
    all_pass &= stability < 1e-9;
    details.push(format!("doubling stability {stability:.2e}"));
    criterion(
        "8 (posterior-mean expansion rate)",
        details.join("; "),
        all_pass,
    );
}

#[test]
fn criterion_09_shift_field() {
    // (a) determinant-form shift field equals the skewness contraction to
    // 1e-5 at 20 interior summaries per family; (b) V = 0 at symmetric
    // points to 1e-10; (c) the posterior-center shift residual decays at
    // slope <= -1.8 against V/t.
    let bern = FiniteExpFamily::bernoulli();
    let cat = FiniteExpFamily::categorical(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_eq = 0.0_f64;
    for _ in 0..20 {
        let h = 2 + (rng.next_u64() % 30);
        let t = 2 + (rng.next_u64() % 30);
        let s = SufficientStatSummary::from_counts(&bern, vec![t, h]).unwrap();
        let det = geometry::shift_vector_detform(&bern, &s).unwrap();
        let fit = fit::ml_fit(&bern, &s).unwrap();
        let skew = geometry::shift_vector_skewness(&bern, &fit.theta);
        worst_eq = worst_eq.max(det.max_abs_diff(&skew));
    }
    for _ in 0..20 {
        let counts: Vec<u64> = (0..3).map(|_| 2 + (rng.next_u64() % 25)).collect();
        let s = SufficientStatSummary::from_counts(&cat, counts).unwrap();
        let det = geometry::shift_vector_detform(&cat, &s).unwrap();
        let fit = fit::ml_fit(&cat, &s).unwrap();
        let skew = geometry::shift_vector_skewness(&cat, &fit.theta);
        worst_eq = worst_eq.max(det.max_abs_diff(&skew));
    }

    let v_bern = geometry::shift_vector_skewness(&bern, &NaturalParam(vec![0.0]));
    let v_cat = geometry::shift_vector_skewness(&cat, &NaturalParam::zeros(2));
    let sym = v_bern.norm().max(v_cat.norm());

    let spec = harness::SequenceSpec::parse(&format!("iid:theta={THETA_BERN_08}:seed=13"), 1 << 11)
        .unwrap();
    let seq = harness::generate(&bern, &spec).unwrap();
    let series = harness::rate_series(
        &bern,
        &seq,
        &RateKind::ShiftResidual,
        &harness::dyadic_grid(5, 11),
        &QuadratureGrid::default(),
    )
    .unwrap();
    let (slope, r2) = slope_of(&series);

    criterion(
        "9 (shift vector field)",
        format!(
            "det-form vs skewness {worst_eq:.2e}; symmetric-point |V| {sym:.2e}; \
             center-shift residual slope {slope:.3} r2 {r2:.4}"
        ),
        worst_eq <= 1e-5 && sym <= 1e-10 && slope <= -1.8,
    );
}

#[test]
fn criterion_10_regret_gap_is_bounded() {
    // |regret(bayes:jeffreys) - regret(mixture:jeffreys)| varies by less
    // than 0.1 nat across T in {2^8 .. 2^12} on the periodic stream.
    let fam = FiniteExpFamily::bernoulli();
    let quad = QuadratureGrid::default();
    let bayes_spec = PredictorSpec::parse("bayes-exact:jeffreys", None).unwrap();
    let mix_spec = PredictorSpec::parse("mixture:jeffreys", None).unwrap();
    let mut gaps = Vec::new();
    for e in 8..=12u32 {
        let seq = bern_stream(1usize << e);
        let rb = harness::regret(&fam, &seq, &bayes_spec, &quad).unwrap();
        let rm = harness::regret(&fam, &seq, &mix_spec, &quad).unwrap();
        gaps.push(rb.regret - rm.regret);
    }
    let spread = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    criterion(
        "10 (O(1) regret gap)",
        format!("gap spread {spread:.4} nat over T in 2^8..2^12 (gaps {gaps:?})"),
        spread < 0.1,
    );
}

#[test]
fn criterion_11_derivative_oracles() {
    // Fisher vs FD Hessian of the log-partition (relative, 1e-5); skewness
    // vs FD gradient of the Fisher matrix (1e-4); metric compatibility of
    // the Christoffel symbols (1e-8), at 10+ random parameters per family.
    let families = vec![
        FiniteExpFamily::bernoulli(),
        FiniteExpFamily::categorical(3).unwrap(),
        FiniteExpFamily::new(vec![1.0, 2.0, 1.0], vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_fisher = 0.0_f64;
    let mut worst_skew = 0.0_f64;
    let mut worst_compat = 0.0_f64;
    for fam in &families {
        let d = fam.dim();
        for _ in 0..12 {
            let theta: Vec<f64> = (0..d)
                .map(|_| 3.0 * (rng.next_u64() as f64 / u64::MAX as f64) - 1.5)
                .collect();
            let tp = NaturalParam(theta.clone());
            let fisher = fam.fisher_matrix(&tp);
            let scale = fisher
                .iter()
                .flatten()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(1e-10);
            // independent central-difference Hessian of A
            let h = f64::EPSILON.powf(0.25);
            for i in 0..d {
                for j in 0..d {
                    let hi = h * theta[i].abs().max(1.0);
                    let hj = h * theta[j].abs().max(1.0);
                    let mut probe = theta.clone();
                    let mut a = |di: f64, dj: f64| {
                        probe[i] = theta[i] + di * hi;
                        probe[j] += dj * hj;
                        let v = fam.log_partition(&NaturalParam(probe.clone()));
                        probe[i] = theta[i];
                        probe[j] = theta[j];
                        v
                    };
                    let fd = if i == j {
                        let f0 = fam.log_partition(&tp);
                        (a(1.0, 0.0) - 2.0 * f0 + a(-1.0, 0.0)) / (hi * hi)
                    } else {
                        (a(1.0, 1.0) - a(1.0, -1.0) - a(-1.0, 1.0) + a(-1.0, -1.0))
                            / (4.0 * hi * hj)
                    };
                    worst_fisher = worst_fisher.max((fisher[i][j] - fd).abs() / scale);
                }
            }
            // skewness vs FD gradient of the Fisher matrix
            let t = fam.skewness_tensor(&tp);
            for l in 0..d {
                let hl = h * theta[l].abs().max(1.0);
                let mut probe = theta.clone();
                probe[l] = theta[l] + hl;
                let fp = fam.fisher_matrix(&NaturalParam(probe.clone()));
                probe[l] = theta[l] - hl;
                let fm = fam.fisher_matrix(&NaturalParam(probe));
                for i in 0..d {
                    for j in 0..d {
                        let fd = (fp[i][j] - fm[i][j]) / (2.0 * hl);
                        worst_skew = worst_skew.max((t.0[l][i][j] - fd).abs());
                    }
                }
            }
            // metric compatibility: d_l I_jk = G^m_lj I_mk + G^m_lk I_jm
            let gamma = geometry::christoffel(fam, &tp);
            for l in 0..d {
                let hl = h * theta[l].abs().max(1.0);
                let mut probe = theta.clone();
                probe[l] = theta[l] + hl;
                let fp = fam.fisher_matrix(&NaturalParam(probe.clone()));
                probe[l] = theta[l] - hl;
                let fm = fam.fisher_matrix(&NaturalParam(probe));
                for j in 0..d {
                    for k in 0..d {
                        let fd = (fp[j][k] - fm[j][k]) / (2.0 * hl);
                        let mut conn = 0.0;
                        for m in 0..d {
                            conn +=
                                gamma.0[m][l][j] * fisher[m][k] + gamma.0[m][l][k] * fisher[j][m];
                        }
                        worst_compat = worst_compat.max((fd - conn).abs());
                    }
                }
            }
        }
    }
    criterion(
        "11 (derivative oracles)",
        format!(
            "fisher-vs-FD {worst_fisher:.2e} (rel); skewness-vs-FD {worst_skew:.2e}; \
             metric compatibility {worst_compat:.2e}"
        ),
        worst_fisher <= 1e-5 && worst_skew <= 1e-4 && worst_compat <= 1e-8,
    );
}

// small local helpers, independent of the crate's linear algebra
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a_, &b_| m[a_][col].abs().partial_cmp(&m[b_][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = m[col][col];
        for c in 0..n {
            m[col][c] /= p;
            inv[col][c] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                for c in 0..n {
                    m[r][c] -= f * m[col][c];
                    inv[r][c] -= f * inv[col][c];
                }
            }
        }
    }
    inv
}

fn quad_form(a: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * a[i][j] * x[j];
        }
    }
    s
}

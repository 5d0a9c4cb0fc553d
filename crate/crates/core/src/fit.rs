//! Maximum-likelihood fitting from sufficient statistics.
//!
//! For exponential families the ML problem depends on the data only through
//! the running feature sum, so predictors that refit per candidate symbol
//! (SNML) stay cheap. Fitting solves `E_theta[phi] = feature_sum / t` by
//! damped Newton steps with the exact Fisher matrix as Hessian; the average
//! log-likelihood is strictly concave in natural coordinates, so an interior
//! optimum is unique. Empirical means on the boundary of the mean polytope
//! are reported with `interior = false` and handled in probability space
//! (face-restricted limiting fits), never through divergent natural
//! parameters.

use crate::error::{Error, Result};
use crate::family::{FiniteExpFamily, MeanParam, NaturalParam};
use crate::linalg;

/// Natural parameters are clamped to this box; predictors that need
/// boundary behavior work with limiting probabilities instead.
pub const THETA_CLAMP: f64 = 35.0;

// Mean-residual tolerance for the Newton solve. Tight enough that refit
// probabilities are exact to ~1e-14, which the add-one identity checks
// lean on; quadratic convergence makes the last decade free.
const DEFAULT_TOL: f64 = 1e-13;
const MAX_ITERS: u32 = 100;

/// Running count / feature-sum summary of an observation sequence, the
/// only state any predictor in this crate needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStatSummary {
    t: u64,
    feature_sum: Vec<f64>,
    counts: Vec<u64>,
}

impl SufficientStatSummary {
    pub fn empty(family: &FiniteExpFamily) -> Self {
        SufficientStatSummary {
            t: 0,
            feature_sum: vec![0.0; family.dim()],
            counts: vec![0; family.alphabet_size()],
        }
    }

    /// Append one symbol. The feature sum is recomputed from the counts in
    /// canonical symbol order, so `feature_sum = sum_x counts[x] * phi(x)`
    /// holds bit-exactly regardless of observation order.
    pub fn push(&mut self, family: &FiniteExpFamily, x: usize) -> Result<()> {
        family.check_symbol(x)?;
        self.counts[x] += 1;
        self.t += 1;
        self.feature_sum = recompute_feature_sum(family, &self.counts);
        Ok(())
    }

    /// Copy-then-append, for what-if refits over candidate symbols.
    pub fn with(&self, family: &FiniteExpFamily, x: usize) -> Result<Self> {
        let mut copy = self.clone();
        copy.push(family, x)?;
        Ok(copy)
    }

    pub fn from_counts(family: &FiniteExpFamily, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != family.alphabet_size() {
            return Err(Error::DimensionMismatch {
                expected: family.alphabet_size(),
                got: counts.len(),
            });
        }
        let t = counts.iter().sum();
        let feature_sum = recompute_feature_sum(family, &counts);
        Ok(SufficientStatSummary {
            t,
            feature_sum,
            counts,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn feature_sum(&self) -> &[f64] {
        &self.feature_sum
    }

    /// Empirical feature mean, `None` when no observations have been seen.
    pub fn empirical_mean(&self) -> Option<Vec<f64>> {
        if self.t == 0 {
            return None;
        }
        Some(self.feature_sum.iter().map(|v| v / self.t as f64).collect())
    }
}

fn recompute_feature_sum(family: &FiniteExpFamily, counts: &[u64]) -> Vec<f64> {
    let mut sum = vec![0.0; family.dim()];
    for (x, &c) in counts.iter().enumerate() {
        if c > 0 {
            for (s, &f) in sum.iter_mut().zip(family.feature_row(x)) {
                *s += c as f64 * f;
            }
        }
    }
    sum
}

/// Summarize a full sequence.
pub fn summarize(family: &FiniteExpFamily, sequence: &[usize]) -> Result<SufficientStatSummary> {
    let mut counts = vec![0u64; family.alphabet_size()];
    for &x in sequence {
        family.check_symbol(x)?;
        counts[x] += 1;
    }
    SufficientStatSummary::from_counts(family, counts)
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct MLFit {
    pub theta: NaturalParam,
    pub mean: MeanParam,
    /// Whether the empirical mean lies strictly inside the mean polytope.
    /// When false, `theta` is the final clamped iterate and predictive
    /// probabilities of unobserved symbols tend to zero; callers must not
    /// treat `theta` as a finite optimum.
    pub interior: bool,
    pub converged: bool,
    pub iterations: u32,
}

pub(crate) struct MeanSolve {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub clamped: bool,
    pub iterations: u32,
}

/// Damped Newton solve of `mean_params(theta) = target` in natural
/// coordinates. Steps are halved until the average log-likelihood
/// `theta . target - A(theta)` does not decrease; iterates are clamped to
/// `|theta_i| <= THETA_CLAMP`.
pub(crate) fn solve_mean(
    family: &FiniteExpFamily,
    target: &[f64],
    start: &[f64],
    tol: f64,
) -> MeanSolve {
    let d = family.dim();
    let scale = target.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol_abs = tol * scale;
    let clamp = |v: f64| v.clamp(-THETA_CLAMP, THETA_CLAMP);
    let mut theta: Vec<f64> = start.iter().map(|&v| clamp(v)).collect();
    let objective =
        |th: &[f64]| linalg::dot(th, target) - family.log_partition(&NaturalParam(th.to_vec()));
    let mut obj = objective(&theta);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        let mu = family.mean_params(&NaturalParam(theta.clone()));
        let grad: Vec<f64> = target
            .iter()
            .zip(mu.as_slice())
            .map(|(t, m)| t - m)
            .collect();
        let g_inf = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if g_inf <= tol_abs {
            converged = true;
            break;
        }
        iterations += 1;
        let fisher = family.fisher_of(&family.prob_table(&NaturalParam(theta.clone())));
        let step = match linalg::solve_spd(&fisher, &grad) {
            Some(s) => s,
            None => {
                // Near the clamp the Fisher matrix can be numerically
                // singular; fall back to a scaled gradient step.
                let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                grad.iter().map(|v| v / gn).collect()
            }
        };
        let mut eta = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..d).map(|i| clamp(theta[i] + eta * step[i])).collect();
            let cand_obj = objective(&cand);
            if cand_obj >= obj - 1e-15 * obj.abs().max(1.0) {
                theta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let clamped = theta.iter().any(|v| v.abs() >= THETA_CLAMP - 1e-9);
    MeanSolve {
        theta,
        converged,
        clamped,
        iterations,
    }
}

/// Exact structural test for whether the empirical mean lies on the
/// boundary of the mean polytope, where the count pattern decides:
/// for saturated families a zero count is the boundary; for 1-d features
/// the mean is extreme iff every observed symbol sits at the same end of
/// the feature interval. Returns `None` when no exact test applies.
fn boundary_from_counts(family: &FiniteExpFamily, counts: &[u64]) -> Option<bool> {
    if family.is_saturated() {
        return Some(counts.contains(&0));
    }
    if family.dim() == 1 {
        let (lo, hi) = family.feature_interval().expect("dim 1");
        let eps = 1e-12 * (hi - lo).abs().max(1.0);
        let observed: Vec<f64> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(x, _)| family.feature_row(x)[0])
            .collect();
        let all_lo = observed.iter().all(|f| (f - lo).abs() <= eps);
        let all_hi = observed.iter().all(|f| (f - hi).abs() <= eps);
        return Some(all_lo || all_hi);
    }
    None
}

/// Maximum-likelihood fit from a summary. Errors on `t = 0`.
pub fn ml_fit(family: &FiniteExpFamily, summary: &SufficientStatSummary) -> Result<MLFit> {
    ml_fit_from(family, summary, &vec![0.0; family.dim()])
}

/// As [`ml_fit`] but warm-started, which keeps the SNML per-symbol refits
/// to a couple of Newton iterations.
pub fn ml_fit_from(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    start: &[f64],
) -> Result<MLFit> {
    let target = summary.empirical_mean().ok_or(Error::EmptySummary)?;
    let solve = solve_mean(family, &target, start, DEFAULT_TOL);
    let interior = match boundary_from_counts(family, summary.counts()) {
        Some(boundary) => !boundary && solve.converged,
        // No exact test: treat a converged, comfortably bounded solution
        // as interior. A boundary target drifts outward until the mean
        // residual underflows the tolerance, which happens well past this
        // cut for the data sizes this crate targets.
        None => {
            let inf_norm = solve.theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            solve.converged && !solve.clamped && inf_norm < 20.0
        }
    };
    Ok(MLFit {
        theta: NaturalParam(solve.theta),
        mean: MeanParam(target),
        interior,
        converged: solve.converged,
        iterations: solve.iterations,
    })
}

/// Observed information matrix `J_t`. In natural coordinates the
/// per-observation Hessian of the log-likelihood is `-I(theta)` regardless
/// of the observation, so this is exactly the Fisher matrix at `theta`;
/// the operation exists so predictor formulas can be written against `J_t`.
pub fn observed_information(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    theta: &NaturalParam,
) -> Result<Vec<Vec<f64>>> {
    if summary.t() == 0 {
        return Err(Error::EmptySummary);
    }
    Ok(family.fisher_matrix(theta))
}

/// One-step approximate ML update from `t` to `t + 1`:
/// `theta + (1/t) J_t(theta)^{-1} d ln p_theta(x_next)` at the current ML
/// estimate: the natural-gradient step, not the exact refit.
pub fn ml_update_step(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    x_next: usize,
) -> Result<NaturalParam> {
    family.check_symbol(x_next)?;
    let fit = ml_fit(family, summary)?;
    if !fit.interior {
        return Err(Error::BoundaryMl);
    }
    let t = summary.t() as f64;
    let mu = fit.mean.as_slice();
    let score = family.score(x_next, mu);
    let fisher = family.fisher_matrix(&fit.theta);
    let dir = linalg::solve_spd(&fisher, &score).ok_or_else(|| {
        Error::InvalidFamily("Fisher matrix numerically singular at the ML estimate".into())
    })?;
    let theta = fit
        .theta
        .0
        .iter()
        .zip(&dir)
        .map(|(th, d)| th + d / t)
        .collect();
    Ok(NaturalParam(theta))
}

/// Limiting ML distribution for a (possibly boundary) count vector: exact
/// zeros off the face of the mean polytope generated by the empirical mean,
/// and the face-restricted ML fit on it. For saturated families this is the
/// vector of empirical frequencies.
///
/// The face support is found by clamped fitting: symbols whose probability
/// collapses under the clamped iterate (and which were never observed) are
/// dropped, and the family is refit restricted to the remaining support
/// with features projected onto their affine hull.
pub(crate) fn limit_distribution(family: &FiniteExpFamily, counts: &[u64]) -> Vec<f64> {
    let k = family.alphabet_size();
    let t: u64 = counts.iter().sum();
    debug_assert!(t > 0);
    let mut active: Vec<usize> = (0..k).collect();
    loop {
        let sub = restrict_to(family, &active);
        let sub_counts: Vec<u64> = active.iter().map(|&x| counts[x]).collect();
        let probs = match &sub {
            Restricted::Point { base } => {
                // Zero-dimensional face: the limit is the base-weight
                // distribution on the support.
                let z: f64 = base.iter().sum();
                base.iter().map(|&q| q / z).collect::<Vec<f64>>()
            }
            Restricted::Family { family: subfam, .. } => {
                let summary = SufficientStatSummary::from_counts(subfam, sub_counts.clone())
                    .expect("restricted counts are consistent");
                let fit = ml_fit(subfam, &summary).expect("t > 0 on the active support");
                let p = subfam.prob_table(&fit.theta);
                if !fit.interior {
                    // Still a boundary problem: shrink the support and retry.
                    let cutoff = 1e-9;
                    let next: Vec<usize> = active
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| sub_counts[*i] > 0 || p[*i] > cutoff)
                        .map(|(_, &x)| x)
                        .collect();
                    if next.len() < active.len() && !next.is_empty() {
                        active = next;
                        continue;
                    }
                    // No progress: accept the clamped solution as the limit.
                }
                p
            }
        };
        let mut full = vec![0.0; k];
        for (i, &x) in active.iter().enumerate() {
            full[x] = probs[i];
        }
        return full;
    }
}

enum Restricted {
    /// All active feature rows coincide: the restricted family is a single
    /// distribution proportional to the base weights.
    Point { base: Vec<f64> },
    Family {
        family: FiniteExpFamily,
        #[allow(dead_code)]
        basis: Vec<Vec<f64>>,
    },
}

/// Restrict the family to a symbol subset, re-expressing features in an
/// orthonormal basis of their affine hull so the restricted family is
/// non-degenerate by construction.
fn restrict_to(family: &FiniteExpFamily, active: &[usize]) -> Restricted {
    let d = family.dim();
    let base: Vec<f64> = active.iter().map(|&x| family.base_weights()[x]).collect();
    let rows: Vec<Vec<f64>> = active
        .iter()
        .map(|&x| family.feature_row(x).to_vec())
        .collect();
    let center = &rows[0];
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(center).map(|(a, b)| a - b).collect())
        .collect();
    // Modified Gram-Schmidt over the centered rows.
    let scale = centered
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for row in &centered {
        let mut v = row.clone();
        for b in &basis {
            let proj = linalg::dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * scale {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
        if basis.len() == d {
            break;
        }
    }
    if basis.is_empty() {
        return Restricted::Point { base };
    }
    let reduced: Vec<Vec<f64>> = centered
        .iter()
        .map(|r| basis.iter().map(|b| linalg::dot(r, b)).collect())
        .collect();
    Restricted::Family {
        family: FiniteExpFamily::new_unchecked(base, reduced),
        basis,
    }
}

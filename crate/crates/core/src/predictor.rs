//! Sequence predictors: maximum-likelihood plug-in, sequential normalized
//! maximum likelihood (SNML), weighted SNML, the equal-weight ML/SNML
//! mixture, and their O(1/t) per-symbol expansions.
//!
//! SNML refits the ML estimate once per candidate symbol as if that symbol
//! had already been observed, then renormalizes:
//!
//! ```text
//! p_snml(y) = p_{theta^{ML+y}}(y) / Z,    Z = sum_y p_{theta^{ML+y}}(y)
//! ```
//!
//! The weighted variant multiplies each candidate value by `w(theta^{ML+y})`
//! before normalizing. Mixing the plug-in and the `beta^2`-weighted SNML in
//! equal parts tracks the Bayesian predictor whose prior has density `beta`
//! with respect to the Jeffreys prior, up to O(1/t^2); the expansion
//! predictors evaluate the corresponding per-symbol asymptotic formulas
//! directly at the ML estimate, with the normalizer in closed form.
//!
//! Boundary summaries (some symbol never observed) are handled in
//! probability space: candidate values use the limiting face-restricted ML
//! distribution, which for saturated families reproduces the classical
//! add-one rule exactly.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::FiniteExpFamily;
use crate::fit::{self, SufficientStatSummary};
use crate::linalg;
use crate::numdiff;

/// Name and diagnostics attached to a predictive distribution.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PredictorMeta {
    pub name: String,
    /// ML estimate for the conditioning summary was on the boundary.
    pub boundary: bool,
    /// Explicit normalizer `Z = sum_y w(theta^{ML+y}) p_{theta^{ML+y}}(y)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_explicit: Option<f64>,
    /// Closed-form normalizer `1 + dim/t` used by the expansions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_closed: Option<f64>,
    /// `|sum_y raw - 1|` before the final renormalization of an expansion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prenorm_residual: Option<f64>,
    /// Enumeration check of `sum_y p(y) d ln p(y) = 0` (infinity norm),
    /// the identity that keeps weight terms out of the normalizer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_balance: Option<f64>,
}

impl PredictorMeta {
    pub(crate) fn named(name: &str) -> Self {
        PredictorMeta {
            name: name.to_string(),
            ..Default::default()
        }
    }
}

/// A probability vector over the alphabet produced by any predictor.
#[derive(Debug, Clone, Serialize)]
pub struct PredictiveDistribution {
    pub probs: Vec<f64>,
    pub meta: PredictorMeta,
}

impl PredictiveDistribution {
    pub fn max_abs_diff(&self, other: &PredictiveDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

type EvalFn = dyn Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&FiniteExpFamily, &[f64]) -> Vec<f64> + Send + Sync;

/// Positive weight `w(theta)` with its log-gradient. The gradient defaults
/// to central finite differences; closed forms can be registered for the
/// priors used in rate tests.
#[derive(Clone)]
pub struct WeightFunction {
    eval: Arc<EvalFn>,
    log_grad: Option<Arc<GradFn>>,
}

impl std::fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightFunction")
            .field("closed_form_grad", &self.log_grad.is_some())
            .finish()
    }
}

impl WeightFunction {
    pub fn new(f: impl Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        WeightFunction {
            eval: Arc::new(f),
            log_grad: None,
        }
    }

    pub fn with_log_grad(
        mut self,
        g: impl Fn(&FiniteExpFamily, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.log_grad = Some(Arc::new(g));
        self
    }

    /// The constant weight; its log-gradient is exactly zero.
    pub fn constant(c: f64) -> Self {
        WeightFunction::new(move |_, _| c).with_log_grad(|fam, _| vec![0.0; fam.dim()])
    }

    pub fn eval(&self, family: &FiniteExpFamily, theta: &[f64]) -> Result<f64> {
        let v = (self.eval)(family, theta);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveWeight(v));
        }
        Ok(v)
    }

    /// `d ln w` at `theta`: the registered closed form, or central finite
    /// differences of `ln w`.
    pub fn log_grad(&self, family: &FiniteExpFamily, theta: &[f64]) -> Result<Vec<f64>> {
        if let Some(g) = &self.log_grad {
            return Ok(g(family, theta));
        }
        self.eval(family, theta)?;
        let eval = Arc::clone(&self.eval);
        let fam = family.clone();
        Ok(numdiff::central_grad(
            move |th| eval(&fam, th).ln(),
            theta,
            numdiff::grad_step,
        ))
    }

    /// The pointwise square, with the log-gradient doubled. Turns a prior
    /// density `beta` (w.r.t. Jeffreys) into the SNML weight `beta^2`.
    pub fn squared(&self) -> Self {
        let eval = Arc::clone(&self.eval);
        let sq = WeightFunction {
            eval: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                let v = eval(fam, th);
                v * v
            }),
            log_grad: None,
        };
        match &self.log_grad {
            Some(g) => {
                let g = Arc::clone(g);
                WeightFunction {
                    log_grad: Some(Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                        g(fam, th).into_iter().map(|v| 2.0 * v).collect()
                    })),
                    ..sq
                }
            }
            None => sq,
        }
    }
}

/// Maximum-likelihood plug-in predictor. On boundary summaries returns the
/// limiting face-restricted distribution (empirical frequencies for
/// saturated families), with `meta.boundary` set.
pub fn ml_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
) -> Result<PredictiveDistribution> {
    let fit = fit::ml_fit(family, summary)?;
    let mut meta = PredictorMeta::named("ml");
    let probs = if fit.interior {
        family.prob_table(&fit.theta)
    } else {
        meta.boundary = true;
        fit::limit_distribution(family, summary.counts())
    };
    Ok(PredictiveDistribution { probs, meta })
}

/// Candidate value for symbol `y`: the probability the refit parameter
/// assigns to `y`, together with the (possibly clamped) refit parameter.
fn candidate(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    start: &[f64],
    y: usize,
) -> Result<(f64, Vec<f64>)> {
    let augmented = summary.with(family, y)?;
    let fit = fit::ml_fit_from(family, &augmented, start)?;
    if fit.interior {
        Ok((family.prob_table(&fit.theta)[y], fit.theta.0))
    } else {
        // Boundary refit: take the limiting probability, never a divergent
        // parameter. The clamped iterate still serves as the weight
        // evaluation point for weighted variants.
        let p = fit::limit_distribution(family, augmented.counts());
        Ok((p[y], fit.theta.0))
    }
}

/// Sequential normalized maximum likelihood (Eqs.-style refit per symbol,
/// then renormalize). Exactly the add-one rule on saturated families.
pub fn snml_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
) -> Result<PredictiveDistribution> {
    wsnml_named(family, summary, None, "snml")
}

/// Weighted SNML: candidate values multiplied by `w(theta^{ML+y})` before
/// normalizing. `w` must stay positive at every visited parameter.
pub fn wsnml_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    w: &WeightFunction,
) -> Result<PredictiveDistribution> {
    wsnml_named(family, summary, Some(w), "wsnml")
}

fn wsnml_named(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    w: Option<&WeightFunction>,
    name: &str,
) -> Result<PredictiveDistribution> {
    if summary.t() == 0 {
        return Err(Error::EmptySummary);
    }
    let base_fit = fit::ml_fit(family, summary)?;
    let start = base_fit.theta.0.clone();
    let mut values = Vec::with_capacity(family.alphabet_size());
    for y in 0..family.alphabet_size() {
        let (p, theta) = candidate(family, summary, &start, y)?;
        let weight = match w {
            Some(wf) => wf.eval(family, &theta)?,
            None => 1.0,
        };
        values.push(weight * p);
    }
    let z: f64 = values.iter().sum();
    let mut meta = PredictorMeta::named(name);
    meta.boundary = !base_fit.interior;
    meta.z_explicit = Some(z);
    Ok(PredictiveDistribution {
        probs: values.into_iter().map(|v| v / z).collect(),
        meta,
    })
}

/// Equal-weight mixture of the ML plug-in and the `beta^2`-weighted SNML:
/// the predictor that tracks the Bayesian posterior with prior density
/// `beta` w.r.t. Jeffreys up to O(1/t^2).
pub fn mixture_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    beta: &WeightFunction,
) -> Result<PredictiveDistribution> {
    let ml = ml_predict(family, summary)?;
    let w = beta.squared();
    let wsnml = wsnml_predict(family, summary, &w)?;
    let probs = ml
        .probs
        .iter()
        .zip(&wsnml.probs)
        .map(|(a, b)| 0.5 * a + 0.5 * b)
        .collect();
    let mut meta = PredictorMeta::named("mixture");
    meta.boundary = ml.meta.boundary;
    meta.z_explicit = wsnml.meta.z_explicit;
    Ok(PredictiveDistribution { probs, meta })
}

struct ExpansionContext {
    t: f64,
    dim: f64,
    probs: Vec<f64>,
    /// Scores g_y = phi(y) - mu at the ML estimate.
    scores: Vec<Vec<f64>>,
    /// I^{-1} g_y for each symbol.
    nat_scores: Vec<Vec<f64>>,
    theta: Vec<f64>,
}

fn expansion_context(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
) -> Result<ExpansionContext> {
    if summary.t() == 0 {
        return Err(Error::EmptySummary);
    }
    let fit = fit::ml_fit(family, summary)?;
    if !fit.interior {
        return Err(Error::BoundaryMl);
    }
    let probs = family.prob_table(&fit.theta);
    let fisher = family.fisher_matrix(&fit.theta);
    let chol = linalg::cholesky(&fisher).ok_or_else(|| {
        Error::InvalidFamily("Fisher matrix numerically singular at the ML estimate".into())
    })?;
    let scores: Vec<Vec<f64>> = (0..family.alphabet_size())
        .map(|y| family.score(y, fit.mean.as_slice()))
        .collect();
    let nat_scores = scores
        .iter()
        .map(|g| linalg::chol_solve(&chol, g))
        .collect();
    Ok(ExpansionContext {
        t: summary.t() as f64,
        dim: family.dim() as f64,
        probs,
        scores,
        nat_scores,
        theta: fit.theta.0,
    })
}

fn finish_expansion(
    raw: Vec<f64>,
    mut meta: PredictorMeta,
    t: u64,
) -> Result<PredictiveDistribution> {
    if !raw.iter().all(|&v| v > 0.0) {
        return Err(Error::ExpansionOutOfDomain { t });
    }
    let sum: f64 = raw.iter().sum();
    meta.prenorm_residual = Some((sum - 1.0).abs());
    Ok(PredictiveDistribution {
        probs: raw.into_iter().map(|v| v / sum).collect(),
        meta,
    })
}

/// Per-symbol asymptotic form of the Bayesian predictor with prior density
/// `beta` w.r.t. Jeffreys, evaluated termwise at the ML estimate:
///
/// ```text
/// p(y) * (1 + |g_y|_F^2 / 2t + <d ln beta, g_y>_F / t - dim / 2t)
/// ```
///
/// with Fisher-metric norms and scalar products, then renormalized.
/// Requires an interior ML estimate.
pub fn expansion_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    beta: &WeightFunction,
) -> Result<PredictiveDistribution> {
    let ctx = expansion_context(family, summary)?;
    let grad_log_beta = beta.log_grad(family, &ctx.theta)?;
    let raw: Vec<f64> = (0..ctx.probs.len())
        .map(|y| {
            let fisher_norm2 = linalg::dot(&ctx.scores[y], &ctx.nat_scores[y]);
            let cross = linalg::dot(&grad_log_beta, &ctx.nat_scores[y]);
            ctx.probs[y]
                * (1.0 + fisher_norm2 / (2.0 * ctx.t) + cross / ctx.t - ctx.dim / (2.0 * ctx.t))
        })
        .collect();
    finish_expansion(raw, PredictorMeta::named("expansion"), summary.t())
}

/// O(1/t^2) approximation of SNML with the normalizer in closed form
/// (`Z = 1 + dim/t`, no explicit sum over refits):
///
/// ```text
/// p(y) * (1 + |g_y|_F^2 / t - dim / t)
/// ```
pub fn snml_expansion(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
) -> Result<PredictiveDistribution> {
    let ctx = expansion_context(family, summary)?;
    let raw: Vec<f64> = (0..ctx.probs.len())
        .map(|y| {
            let fisher_norm2 = linalg::dot(&ctx.scores[y], &ctx.nat_scores[y]);
            ctx.probs[y] * (1.0 + fisher_norm2 / ctx.t - ctx.dim / ctx.t)
        })
        .collect();
    let mut meta = PredictorMeta::named("snml-expansion");
    meta.z_closed = Some(1.0 + ctx.dim / ctx.t);
    finish_expansion(raw, meta, summary.t())
}

/// Weighted-SNML expansion: adds the weight cross term
/// `<d ln w, g_y>_F / t` inside the bracket. The weight term contributes
/// nothing to the normalizer because `sum_y p(y) g_y = 0`; the enumerated
/// residual of that identity is recorded in `meta.score_balance`.
pub fn wsnml_expansion(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    w: &WeightFunction,
) -> Result<PredictiveDistribution> {
    let ctx = expansion_context(family, summary)?;
    let grad_log_w = w.log_grad(family, &ctx.theta)?;
    w.eval(family, &ctx.theta)?;
    let raw: Vec<f64> = (0..ctx.probs.len())
        .map(|y| {
            let fisher_norm2 = linalg::dot(&ctx.scores[y], &ctx.nat_scores[y]);
            let cross = linalg::dot(&grad_log_w, &ctx.nat_scores[y]);
            ctx.probs[y] * (1.0 + (fisher_norm2 + cross) / ctx.t - ctx.dim / ctx.t)
        })
        .collect();
    let mut balance = vec![0.0; family.dim()];
    for (y, g) in ctx.scores.iter().enumerate() {
        for (b, &gj) in balance.iter_mut().zip(g) {
            *b += ctx.probs[y] * gj;
        }
    }
    let mut meta = PredictorMeta::named("wsnml-expansion");
    meta.z_closed = Some(1.0 + ctx.dim / ctx.t);
    meta.score_balance = Some(balance.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    finish_expansion(raw, meta, summary.t())
}

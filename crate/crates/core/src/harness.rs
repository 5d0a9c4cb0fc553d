//! Experiment engine: sequence generation, running-estimate regularity
//! checks, side-by-side predictor comparison over a time grid, cumulative
//! log-loss regret, convergence-exponent fitting, and report emission.
//!
//! Rate claims are operationalized as least-squares slopes of
//! `ln(discrepancy)` against `ln(t)` over a dyadic grid; periodic input
//! streams keep the running estimate pinned (no sampling noise), which is
//! what makes the slope windows tight.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::bayes::{self, Prior, QuadratureGrid, SmoothFn};
use crate::error::{Error, Result};
use crate::family::{FiniteExpFamily, NaturalParam};
use crate::fit::{self, SufficientStatSummary};
use crate::geometry;
use crate::predictor::{self, PredictiveDistribution};

/// Discrepancies at or below this floor are treated as numerical zeros and
/// excluded from slope fits.
pub const DISCREPANCY_FLOOR: f64 = 1e-15;

// ---------------------------------------------------------------------------
// Sequence generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum SequenceSource {
    /// I.i.d. draws from the family at a fixed natural parameter.
    Iid { theta: NaturalParam, seed: u64 },
    /// The pattern repeated cyclically.
    Periodic(Vec<usize>),
    /// Whitespace-separated integer symbols read from a text file.
    File(std::path::PathBuf),
}

#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub source: SequenceSource,
    /// Requested length. For file sources, 0 means "the whole file".
    pub length: usize,
}

impl SequenceSpec {
    /// Parse `iid:theta=<v,...>:seed=<n>`, `periodic:<symbols>`, or
    /// `file:<path>`.
    pub fn parse(spec: &str, length: usize) -> Result<Self> {
        let bad = |reason: String| Error::InvalidSpec {
            spec: spec.to_string(),
            reason,
        };
        if let Some(rest) = spec.strip_prefix("iid:") {
            let mut theta: Option<Vec<f64>> = None;
            let mut seed: Option<u64> = None;
            for part in rest.split(':') {
                if let Some(vals) = part.strip_prefix("theta=") {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        vals.split(',').map(|v| v.trim().parse::<f64>()).collect();
                    theta = Some(parsed.map_err(|_| bad("bad theta value".into()))?);
                } else if let Some(s) = part.strip_prefix("seed=") {
                    seed = Some(s.trim().parse().map_err(|_| bad("bad seed".into()))?);
                } else {
                    return Err(bad(format!("unknown iid field `{part}`")));
                }
            }
            return Ok(SequenceSpec {
                source: SequenceSource::Iid {
                    theta: NaturalParam(theta.ok_or_else(|| bad("missing theta=".into()))?),
                    seed: seed.ok_or_else(|| bad("missing seed=".into()))?,
                },
                length,
            });
        }
        if let Some(rest) = spec.strip_prefix("periodic:") {
            let pattern: std::result::Result<Vec<usize>, _> = rest
                .split_whitespace()
                .map(|v| v.parse::<usize>())
                .collect();
            let pattern = pattern.map_err(|_| bad("bad periodic symbol".into()))?;
            if pattern.is_empty() {
                return Err(bad("periodic pattern must be non-empty".into()));
            }
            return Ok(SequenceSpec {
                source: SequenceSource::Periodic(pattern),
                length,
            });
        }
        if let Some(path) = spec.strip_prefix("file:") {
            return Ok(SequenceSpec {
                source: SequenceSource::File(path.into()),
                length,
            });
        }
        Err(bad(
            "expected iid:theta=<v,...>:seed=<n> | periodic:<symbols> | file:<path>".into(),
        ))
    }
}

/// Materialize a sequence; deterministic for a fixed seed.
pub fn generate(family: &FiniteExpFamily, spec: &SequenceSpec) -> Result<Vec<usize>> {
    match &spec.source {
        SequenceSource::Iid { theta, seed } => {
            if theta.dim() != family.dim() {
                return Err(Error::DimensionMismatch {
                    expected: family.dim(),
                    got: theta.dim(),
                });
            }
            Ok(family.sample(theta, *seed, spec.length))
        }
        SequenceSource::Periodic(pattern) => {
            for &x in pattern {
                family.check_symbol(x)?;
            }
            Ok((0..spec.length)
                .map(|i| pattern[i % pattern.len()])
                .collect())
        }
        SequenceSource::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut seq = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                for tok in line.split_whitespace() {
                    let x: usize = tok.parse().map_err(|_| Error::ParseError {
                        line: lineno + 1,
                        message: format!("`{tok}` is not a symbol index"),
                    })?;
                    family.check_symbol(x).map_err(|_| Error::ParseError {
                        line: lineno + 1,
                        message: format!(
                            "symbol {x} out of range for alphabet of size {}",
                            family.alphabet_size()
                        ),
                    })?;
                    seq.push(x);
                }
            }
            if spec.length == 0 {
                return Ok(seq);
            }
            if seq.len() < spec.length {
                return Err(Error::InvalidSpec {
                    spec: format!("file:{}", path.display()),
                    reason: format!(
                        "file holds {} symbols, {} requested",
                        seq.len(),
                        spec.length
                    ),
                });
            }
            seq.truncate(spec.length);
            Ok(seq)
        }
    }
}

// ---------------------------------------------------------------------------
// Regularity check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct IneccsiReport {
    pub ok: bool,
    pub first_violation: Option<u64>,
}

/// Check that from `t0` on, the running empirical feature mean stays inside
/// the per-coordinate box (inclusive bounds): the computable face of the
/// requirement that the running ML estimate eventually stays in a compact
/// interior set.
pub fn ineccsi_check(
    family: &FiniteExpFamily,
    sequence: &[usize],
    t0: u64,
    bounds: &[(f64, f64)],
) -> Result<IneccsiReport> {
    if bounds.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            got: bounds.len(),
        });
    }
    let mut summary = SufficientStatSummary::empty(family);
    for (i, &x) in sequence.iter().enumerate() {
        summary.push(family, x)?;
        let t = (i + 1) as u64;
        if t < t0 {
            continue;
        }
        let mean = summary.empirical_mean().expect("t >= 1");
        let inside = mean
            .iter()
            .zip(bounds)
            .all(|(m, (lo, hi))| *m >= *lo && *m <= *hi);
        if !inside {
            return Ok(IneccsiReport {
                ok: false,
                first_violation: Some(t),
            });
        }
    }
    Ok(IneccsiReport {
        ok: true,
        first_violation: None,
    })
}

// ---------------------------------------------------------------------------
// Slope fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln(discrepancy)` on `ln(t)`. Points at or below the
/// floor are dropped; fewer than 4 usable points is an error.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, d)| *d > DISCREPANCY_FLOOR)
        .map(|&(t, d)| (t.ln(), d.ln()))
        .collect();
    if usable.len() < 4 {
        return Err(Error::TooFewPoints(usable.len()));
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable
        .iter()
        .map(|(x, _)| (x - mean_x) * (x - mean_x))
        .sum();
    let sxy: f64 = usable
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = usable
        .iter()
        .map(|(_, y)| (y - mean_y) * (y - mean_y))
        .sum();
    let ss_res: f64 = usable
        .iter()
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
    })
}

/// (t, discrepancy) series plus its fitted log-log behavior, the main
/// acceptance instrument for every rate claim.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSeries {
    pub points: Vec<(u64, f64)>,
    pub skipped_t: Vec<u64>,
    #[serde(flatten)]
    pub fit: FitSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
}

impl ConvergenceSeries {
    pub fn from_points(points: Vec<(u64, f64)>, skipped_t: Vec<u64>) -> Self {
        let as_f64: Vec<(f64, f64)> = points.iter().map(|&(t, d)| (t as f64, d)).collect();
        let fit = match fit_slope(&as_f64) {
            Ok(f) => FitSummary {
                slope: Some(f.slope),
                intercept: Some(f.intercept),
                r2: Some(f.r2),
            },
            Err(_) => FitSummary {
                slope: None,
                intercept: None,
                r2: None,
            },
        };
        ConvergenceSeries {
            points,
            skipped_t,
            fit,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.slope
    }

    pub fn r2(&self) -> Option<f64> {
        self.fit.r2
    }
}

/// The default dyadic time grid 2^lo .. 2^hi.
pub fn dyadic_grid(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|e| 1u64 << e).collect()
}

/// Parse `dyadic:<lo>..<hi>` or an explicit comma list of times.
pub fn parse_t_grid(spec: &str) -> Result<Vec<u64>> {
    let bad = |reason: &str| Error::InvalidSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    if let Some(rest) = spec.strip_prefix("dyadic:") {
        let (lo, hi) = rest
            .split_once("..")
            .ok_or_else(|| bad("expected dyadic:<lo>..<hi>"))?;
        let lo: u32 = lo.parse().map_err(|_| bad("bad exponent"))?;
        let hi: u32 = hi.parse().map_err(|_| bad("bad exponent"))?;
        if lo > hi || hi > 40 {
            return Err(bad("need lo <= hi <= 40"));
        }
        return Ok(dyadic_grid(lo, hi));
    }
    let list: std::result::Result<Vec<u64>, _> =
        spec.split(',').map(|v| v.trim().parse::<u64>()).collect();
    let list = list.map_err(|_| bad("expected dyadic:<lo>..<hi> or t1,t2,..."))?;
    if list.is_empty() || list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("times must be strictly increasing"));
    }
    Ok(list)
}

// ---------------------------------------------------------------------------
// Predictor specs
// ---------------------------------------------------------------------------

/// A named predictor with its prior, parseable from CLI strings like
/// `mixture:jeffreys` or `bayes-exact:dirichlet:0.5,0.5,0.5`.
#[derive(Debug, Clone)]
pub enum PredictorSpec {
    Ml,
    Snml,
    SnmlExpansion,
    /// Weighted SNML with `w = beta^2` for the given prior (the weight that
    /// makes the ML/SNML mixture track that prior's Bayes predictor).
    Wsnml(Prior),
    Mixture(Prior),
    Expansion(Prior),
    BayesExact(Prior),
    BayesQuad(Prior),
    /// Constant plug-in of the full-sequence ML fit; only meaningful
    /// inside `regret`.
    Hindsight,
}

impl PredictorSpec {
    pub fn parse(spec: &str, default_prior: Option<&Prior>) -> Result<Self> {
        let (head, tail) = match spec.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (spec, None),
        };
        let prior = || -> Result<Prior> {
            match tail {
                Some(t) => Prior::parse(t),
                None => Ok(default_prior.cloned().unwrap_or_else(Prior::jeffreys)),
            }
        };
        let no_tail = |name: &str| -> Result<()> {
            if tail.is_some() {
                Err(Error::InvalidSpec {
                    spec: spec.to_string(),
                    reason: format!("`{name}` takes no prior"),
                })
            } else {
                Ok(())
            }
        };
        match head {
            "ml" => {
                no_tail("ml")?;
                Ok(PredictorSpec::Ml)
            }
            "snml" => {
                no_tail("snml")?;
                Ok(PredictorSpec::Snml)
            }
            "snml-expansion" => {
                no_tail("snml-expansion")?;
                Ok(PredictorSpec::SnmlExpansion)
            }
            "hindsight" => {
                no_tail("hindsight")?;
                Ok(PredictorSpec::Hindsight)
            }
            "wsnml" => Ok(PredictorSpec::Wsnml(prior()?)),
            "mixture" => Ok(PredictorSpec::Mixture(prior()?)),
            "expansion" => Ok(PredictorSpec::Expansion(prior()?)),
            "bayes" | "bayes-exact" => Ok(PredictorSpec::BayesExact(prior()?)),
            "bayes-quad" => Ok(PredictorSpec::BayesQuad(prior()?)),
            _ => Err(Error::InvalidSpec {
                spec: spec.to_string(),
                reason: "expected ml | snml | snml-expansion | wsnml:<prior> | mixture:<prior> \
                         | expansion:<prior> | bayes[-exact]:<prior> | bayes-quad:<prior>"
                    .into(),
            }),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PredictorSpec::Ml => "ml".into(),
            PredictorSpec::Snml => "snml".into(),
            PredictorSpec::SnmlExpansion => "snml-expansion".into(),
            PredictorSpec::Wsnml(p) => format!("wsnml:{}", p.name()),
            PredictorSpec::Mixture(p) => format!("mixture:{}", p.name()),
            PredictorSpec::Expansion(p) => format!("expansion:{}", p.name()),
            PredictorSpec::BayesExact(p) => format!("bayes-exact:{}", p.name()),
            PredictorSpec::BayesQuad(p) => format!("bayes-quad:{}", p.name()),
            PredictorSpec::Hindsight => "hindsight".into(),
        }
    }

    /// Evaluate the predictor on a summary.
    pub fn predict(
        &self,
        family: &FiniteExpFamily,
        summary: &SufficientStatSummary,
        grid: &QuadratureGrid,
    ) -> Result<PredictiveDistribution> {
        if let PredictorSpec::Wsnml(p)
        | PredictorSpec::Mixture(p)
        | PredictorSpec::Expansion(p)
        | PredictorSpec::BayesExact(p)
        | PredictorSpec::BayesQuad(p) = self
        {
            p.check_compatible(family)?;
        }
        match self {
            PredictorSpec::Ml => predictor::ml_predict(family, summary),
            PredictorSpec::Snml => predictor::snml_predict(family, summary),
            PredictorSpec::SnmlExpansion => predictor::snml_expansion(family, summary),
            PredictorSpec::Wsnml(p) => {
                let w = p.beta_weight().squared();
                predictor::wsnml_predict(family, summary, &w)
            }
            PredictorSpec::Mixture(p) => {
                predictor::mixture_predict(family, summary, &p.beta_weight())
            }
            PredictorSpec::Expansion(p) => {
                predictor::expansion_predict(family, summary, &p.beta_weight())
            }
            PredictorSpec::BayesExact(p) => bayes::conjugate_predict(family, summary, p),
            PredictorSpec::BayesQuad(p) => bayes::quad_posterior_predict(family, summary, p, grid),
            PredictorSpec::Hindsight => Err(Error::InvalidSpec {
                spec: "hindsight".into(),
                reason: "the hindsight plug-in is only available inside `regret`".into(),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Comparison runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PairSeries {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub series: ConvergenceSeries,
}

/// For each t in the grid, evaluate every predictor on the prefix summary
/// and record the pairwise sup-distance between predictive distributions.
/// Timesteps where a predictor is undefined (boundary ML for the expansion
/// forms) are skipped and recorded per pair. Results are ordered by the
/// input predictor order, pairs (i, j) with i < j.
pub fn run_comparison(
    family: &FiniteExpFamily,
    sequence: &[usize],
    specs: &[PredictorSpec],
    t_grid: &[u64],
    grid: &QuadratureGrid,
) -> Result<Vec<PairSeries>> {
    if specs.len() < 2 {
        return Err(Error::InvalidSpec {
            spec: "predictors".into(),
            reason: "need at least two predictors to compare".into(),
        });
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSpec {
            spec: "t-grid".into(),
            reason: "times must be strictly increasing".into(),
        });
    }
    let t_max = *t_grid.last().unwrap() as usize;
    if sequence.len() < t_max {
        return Err(Error::InvalidSpec {
            spec: "t-grid".into(),
            reason: format!(
                "sequence has {} symbols but the grid needs {t_max}",
                sequence.len()
            ),
        });
    }
    // distributions[s][ti] = Ok(probs) | Err(skip)
    let mut per_t: Vec<Vec<Option<PredictiveDistribution>>> = Vec::new();
    let mut summary = SufficientStatSummary::empty(family);
    let mut pos = 0usize;
    for &t in t_grid {
        while pos < t as usize {
            summary.push(family, sequence[pos])?;
            pos += 1;
        }
        let mut row = Vec::with_capacity(specs.len());
        for spec in specs {
            match spec.predict(family, &summary, grid) {
                Ok(p) => row.push(Some(p)),
                Err(Error::BoundaryMl) | Err(Error::ExpansionOutOfDomain { .. }) => row.push(None),
                Err(e) => return Err(e),
            }
        }
        per_t.push(row);
    }
    let mut out = Vec::new();
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            let mut points = Vec::new();
            let mut skipped = Vec::new();
            for (ti, &t) in t_grid.iter().enumerate() {
                match (&per_t[ti][i], &per_t[ti][j]) {
                    (Some(a), Some(b)) => points.push((t, a.max_abs_diff(b))),
                    _ => skipped.push(t),
                }
            }
            out.push(PairSeries {
                a: specs[i].name(),
                b: specs[j].name(),
                series: ConvergenceSeries::from_points(points, skipped),
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Regret
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RegretRecord {
    pub predictor: String,
    pub t_total: u64,
    /// Losses are accumulated from this step on (the first prediction
    /// conditions on one observation, since ML-type predictors need t >= 1).
    pub start_step: u64,
    /// May be +inf when the predictor put zero mass on a realized symbol;
    /// JSON renders that as null, with `infinite_at` marking the step.
    pub cumulative_loss: f64,
    pub hindsight_loss: f64,
    pub regret: f64,
    pub infinite_at: Option<u64>,
    pub per_step_loss: Vec<f64>,
    pub per_step_hindsight: Vec<f64>,
}

/// Cumulative log loss of a predictor along a sequence, against the
/// hindsight optimum (the full-sequence ML plug-in, boundary-safe).
/// Infinite losses are recorded, not raised.
pub fn regret(
    family: &FiniteExpFamily,
    sequence: &[usize],
    spec: &PredictorSpec,
    grid: &QuadratureGrid,
) -> Result<RegretRecord> {
    if sequence.len() < 2 {
        return Err(Error::InvalidSpec {
            spec: "regret".into(),
            reason: "need a sequence of length >= 2".into(),
        });
    }
    let full = fit::summarize(family, sequence)?;
    let hindsight = predictor::ml_predict(family, &full)?;
    let mut summary = SufficientStatSummary::empty(family);
    summary.push(family, sequence[0])?;
    let mut cumulative = 0.0;
    let mut hind_total = 0.0;
    let mut infinite_at = None;
    let mut per_step_loss = Vec::with_capacity(sequence.len() - 1);
    let mut per_step_hind = Vec::with_capacity(sequence.len() - 1);
    for (i, &x) in sequence.iter().enumerate().skip(1) {
        let step = (i + 1) as u64;
        let probs = match spec {
            PredictorSpec::Hindsight => hindsight.probs.clone(),
            other => other.predict(family, &summary, grid)?.probs,
        };
        let p = probs[x];
        let loss = if p > 0.0 { -p.ln() } else { f64::INFINITY };
        if !loss.is_finite() && infinite_at.is_none() {
            infinite_at = Some(step);
        }
        cumulative += loss;
        let q = hindsight.probs[x];
        let hind = if q > 0.0 { -q.ln() } else { f64::INFINITY };
        hind_total += hind;
        per_step_loss.push(loss);
        per_step_hind.push(hind);
        summary.push(family, x)?;
    }
    Ok(RegretRecord {
        predictor: spec.name(),
        t_total: sequence.len() as u64,
        start_step: 2,
        cumulative_loss: cumulative,
        hindsight_loss: hind_total,
        regret: cumulative - hind_total,
        infinite_at,
        per_step_loss,
        per_step_hindsight: per_step_hind,
    })
}

// ---------------------------------------------------------------------------
// Rate series beyond predictor pairs
// ---------------------------------------------------------------------------

/// Discrepancy series that are not plain predictor pairs, so every rate
/// claim stays runnable from one CLI invocation.
#[derive(Debug, Clone)]
pub enum RateKind {
    /// One-step ML update versus the exact refit (L2 distance in theta).
    MlUpdateStep,
    /// |Z_explicit - 1 - dim/t| for the SNML normalizer.
    SnmlNormalizer,
    /// |posterior mean by quadrature - second-order expansion| for a
    /// smooth functional under a prior.
    PosteriorMean { f: SmoothFn, prior: Prior },
    /// Posterior-center shift residual ||measured - V/t|| (Riemannian
    /// center measurement).
    ShiftResidual,
    /// Same residual with the raw coordinate-wise posterior mean as the
    /// "measured" side. No 1/t^2 decay is expected here: the coordinate
    /// mean carries no 1/t shift under Jeffreys, so this series decays
    /// like 1/t. Kept for transparency.
    ShiftCoordinate,
}

impl RateKind {
    /// Parse `ml-update | snml-z | posterior-mean:<f>:<prior> | shift | shift-coord`
    /// with `<f>` one of `mu`, `theta`, `p<y>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        match spec {
            "ml-update" => return Ok(RateKind::MlUpdateStep),
            "snml-z" => return Ok(RateKind::SnmlNormalizer),
            "shift" => return Ok(RateKind::ShiftResidual),
            "shift-coord" => return Ok(RateKind::ShiftCoordinate),
            _ => {}
        }
        if let Some(rest) = spec.strip_prefix("posterior-mean:") {
            let (fspec, prior_spec) = rest
                .split_once(':')
                .ok_or_else(|| bad("expected posterior-mean:<f>:<prior>"))?;
            let f = match fspec {
                "mu" => SmoothFn::mean_coord(0),
                "theta" => SmoothFn::natural_coord(0),
                other => match other.strip_prefix('p') {
                    Some(y) => {
                        SmoothFn::prob_of(y.parse().map_err(|_| bad("expected p<symbol-index>"))?)
                    }
                    None => return Err(bad("f must be mu | theta | p<y>")),
                },
            };
            return Ok(RateKind::PosteriorMean {
                f,
                prior: Prior::parse(prior_spec)?,
            });
        }
        Err(bad(
            "expected ml-update | snml-z | posterior-mean:<f>:<prior> | shift | shift-coord",
        ))
    }

    pub fn name(&self) -> String {
        match self {
            RateKind::MlUpdateStep => "ml-update".into(),
            RateKind::SnmlNormalizer => "snml-z".into(),
            RateKind::PosteriorMean { f, prior } => {
                format!("posterior-mean:{}:{}", f.name(), prior.name())
            }
            RateKind::ShiftResidual => "shift".into(),
            RateKind::ShiftCoordinate => "shift-coord".into(),
        }
    }
}

/// Evaluate a rate series on prefix summaries over the time grid.
pub fn rate_series(
    family: &FiniteExpFamily,
    sequence: &[usize],
    kind: &RateKind,
    t_grid: &[u64],
    grid: &QuadratureGrid,
) -> Result<ConvergenceSeries> {
    let needs_next = matches!(kind, RateKind::MlUpdateStep);
    let t_max = *t_grid.last().ok_or(Error::TooFewPoints(0))? as usize;
    let needed = if needs_next { t_max + 1 } else { t_max };
    if sequence.len() < needed {
        return Err(Error::InvalidSpec {
            spec: "t-grid".into(),
            reason: format!(
                "sequence has {} symbols but the series needs {needed}",
                sequence.len()
            ),
        });
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut summary = SufficientStatSummary::empty(family);
    let mut pos = 0usize;
    for &t in t_grid {
        while pos < t as usize {
            summary.push(family, sequence[pos])?;
            pos += 1;
        }
        let value = match kind {
            RateKind::MlUpdateStep => {
                let x_next = sequence[t as usize];
                match fit::ml_update_step(family, &summary, x_next) {
                    Ok(approx) => {
                        let refit = fit::ml_fit(family, &summary.with(family, x_next)?)?;
                        Ok(approx
                            .0
                            .iter()
                            .zip(&refit.theta.0)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt())
                    }
                    Err(e) => Err(e),
                }
            }
            RateKind::SnmlNormalizer => predictor::snml_predict(family, &summary).and_then(|p| {
                if p.meta.boundary {
                    return Err(Error::BoundaryMl);
                }
                let z = p.meta.z_explicit.expect("snml records its normalizer");
                Ok((z - 1.0 - family.dim() as f64 / t as f64).abs())
            }),
            RateKind::PosteriorMean { f, prior } => {
                bayes::posterior_mean_expansion(family, &summary, prior, f).and_then(|expansion| {
                    let exact = bayes::quad_posterior_mean(family, &summary, prior, f, grid)?;
                    Ok((exact - expansion).abs())
                })
            }
            RateKind::ShiftResidual => {
                geometry::posterior_shift_check(family, &summary, grid).map(|s| s.residual_norm())
            }
            RateKind::ShiftCoordinate => geometry::posterior_shift_check(family, &summary, grid)
                .map(|s| {
                    s.coordinate_mean_shift
                        .iter()
                        .zip(&s.predicted_shift)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                }),
        };
        match value {
            Ok(v) => points.push((t, v)),
            Err(Error::BoundaryMl) | Err(Error::ExpansionOutOfDomain { .. }) => skipped.push(t),
            Err(e) => return Err(e),
        }
    }
    Ok(ConvergenceSeries::from_points(points, skipped))
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::InvalidSpec {
                spec: s.to_string(),
                reason: "expected csv | json".into(),
            }),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".into(),
    }
}

/// Render labeled convergence series. CSV: `t,discrepancy` rows followed by
/// a `# slope=.. intercept=.. r2=..` trailer (plus a `# skipped_t=` line
/// when timesteps were skipped); multiple series are separated by
/// `# series=<label>` markers. JSON: the bare series object for a single
/// series, `{"series": [...]}` otherwise. Output is byte-stable for
/// identical inputs.
pub fn render_report(series: &[(String, ConvergenceSeries)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            if series.is_empty() {
                out.push_str("t,discrepancy\n");
                return out;
            }
            for (label, s) in series {
                if series.len() > 1 {
                    let _ = writeln!(out, "# series={label}");
                }
                out.push_str("t,discrepancy\n");
                for (t, d) in &s.points {
                    let _ = writeln!(out, "{t},{d}");
                }
                if !s.skipped_t.is_empty() {
                    let skipped: Vec<String> = s.skipped_t.iter().map(|t| t.to_string()).collect();
                    let _ = writeln!(out, "# skipped_t={}", skipped.join(","));
                }
                let _ = writeln!(
                    out,
                    "# slope={} intercept={} r2={}",
                    fmt_opt(s.fit.slope),
                    fmt_opt(s.fit.intercept),
                    fmt_opt(s.fit.r2)
                );
            }
            out
        }
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct Labeled<'a> {
                label: &'a str,
                #[serde(flatten)]
                series: &'a ConvergenceSeries,
            }
            let text = if series.len() == 1 {
                serde_json::to_string_pretty(&series[0].1)
            } else {
                let items: Vec<Labeled> = series
                    .iter()
                    .map(|(label, series)| Labeled { label, series })
                    .collect();
                serde_json::to_string_pretty(&serde_json::json!({ "series": items }))
            };
            let mut text = text.expect("series serialize");
            text.push('\n');
            text
        }
    }
}

/// Write a report to a file.
pub fn emit_report(
    series: &[(String, ConvergenceSeries)],
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, render_report(series, format))?;
    Ok(())
}

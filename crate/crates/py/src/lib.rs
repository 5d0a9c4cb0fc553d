//! Python bindings for the expfam predictors: families, sufficient-stat
//! summaries, the predictor zoo, Bayesian oracles, and the rate harness.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use expfam::bayes::{self, Prior, QuadratureGrid, SmoothFn};
use expfam::family::{FiniteExpFamily, NaturalParam};
use expfam::fit::{self, SufficientStatSummary};
use expfam::geometry;
use expfam::harness::{self, PredictorSpec, RateKind, SequenceSpec};

fn err(e: expfam::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A finite-alphabet exponential family in natural coordinates.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Family {
    inner: FiniteExpFamily,
}

#[pymethods]
impl Family {
    /// Coin-flip family: alphabet {0 = tails, 1 = heads}, phi(x) = x.
    #[staticmethod]
    fn bernoulli() -> Family {
        Family {
            inner: FiniteExpFamily::bernoulli(),
        }
    }

    /// Categorical family on k symbols (indicator features, d = k - 1).
    #[staticmethod]
    fn categorical(k: usize) -> PyResult<Family> {
        Ok(Family {
            inner: FiniteExpFamily::categorical(k).map_err(err)?,
        })
    }

    /// Custom family from base weights and an alphabet x d feature matrix.
    #[staticmethod]
    fn custom(base: Vec<f64>, features: Vec<Vec<f64>>) -> PyResult<Family> {
        Ok(Family {
            inner: FiniteExpFamily::new(base, features).map_err(err)?,
        })
    }

    #[getter]
    fn alphabet_size(&self) -> usize {
        self.inner.alphabet_size()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_partition(&self, theta: Vec<f64>) -> f64 {
        self.inner.log_partition(&NaturalParam(theta))
    }

    fn prob_table(&self, theta: Vec<f64>) -> Vec<f64> {
        self.inner.prob_table(&NaturalParam(theta))
    }

    fn mean_params(&self, theta: Vec<f64>) -> Vec<f64> {
        self.inner.mean_params(&NaturalParam(theta)).0
    }

    fn fisher_matrix(&self, theta: Vec<f64>) -> Vec<Vec<f64>> {
        self.inner.fisher_matrix(&NaturalParam(theta))
    }

    fn skewness_tensor(&self, theta: Vec<f64>) -> Vec<Vec<Vec<f64>>> {
        self.inner.skewness_tensor(&NaturalParam(theta)).0
    }

    /// Deterministic i.i.d. draws for a fixed seed.
    fn sample(&self, theta: Vec<f64>, seed: u64, n: usize) -> Vec<usize> {
        self.inner.sample(&NaturalParam(theta), seed, n)
    }

    fn jeffreys_density(&self, theta: Vec<f64>) -> f64 {
        geometry::jeffreys_density(&self.inner, &NaturalParam(theta))
    }

    /// Christoffel symbols Gamma^i_{jk} of the Fisher metric.
    fn christoffel(&self, theta: Vec<f64>) -> Vec<Vec<Vec<f64>>> {
        geometry::christoffel(&self.inner, &NaturalParam(theta)).0
    }

    /// Posterior-center shift field V = (1/4) I^{ij} I^{kl} T_{jkl}.
    fn shift_vector(&self, theta: Vec<f64>) -> Vec<f64> {
        geometry::shift_vector_skewness(&self.inner, &NaturalParam(theta)).0
    }

    fn __repr__(&self) -> String {
        format!(
            "Family(alphabet_size={}, dim={})",
            self.inner.alphabet_size(),
            self.inner.dim()
        )
    }
}

/// Running count / feature-sum summary of an observation sequence.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Summary {
    family: FiniteExpFamily,
    inner: SufficientStatSummary,
}

#[pymethods]
impl Summary {
    #[new]
    fn new(family: &Family, sequence: Vec<usize>) -> PyResult<Summary> {
        Ok(Summary {
            family: family.inner.clone(),
            inner: fit::summarize(&family.inner, &sequence).map_err(err)?,
        })
    }

    /// Append one symbol in place.
    fn push(&mut self, x: usize) -> PyResult<()> {
        self.inner.push(&self.family, x).map_err(err)
    }

    /// Copy-then-append, leaving this summary untouched.
    fn with(&self, x: usize) -> PyResult<Summary> {
        Ok(Summary {
            family: self.family.clone(),
            inner: self.inner.with(&self.family, x).map_err(err)?,
        })
    }

    #[getter]
    fn t(&self) -> u64 {
        self.inner.t()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn feature_sum(&self) -> Vec<f64> {
        self.inner.feature_sum().to_vec()
    }

    #[getter]
    fn empirical_mean(&self) -> Option<Vec<f64>> {
        self.inner.empirical_mean()
    }

    fn __repr__(&self) -> String {
        format!(
            "Summary(t={}, counts={:?})",
            self.inner.t(),
            self.inner.counts()
        )
    }
}

/// Result of a maximum-likelihood fit.
#[pyclass(frozen, get_all)]
struct Fit {
    theta: Vec<f64>,
    mean: Vec<f64>,
    interior: bool,
    converged: bool,
    iterations: u32,
}

/// A predictive distribution with its diagnostics.
#[pyclass(frozen, get_all)]
struct Prediction {
    probs: Vec<f64>,
    name: String,
    boundary: bool,
    z_explicit: Option<f64>,
    z_closed: Option<f64>,
    prenorm_residual: Option<f64>,
}

/// A (t, discrepancy) series with its fitted log-log slope.
#[pyclass(frozen, get_all)]
struct Series {
    label: String,
    points: Vec<(u64, f64)>,
    skipped_t: Vec<u64>,
    slope: Option<f64>,
    intercept: Option<f64>,
    r2: Option<f64>,
}

impl Series {
    fn from_core(label: String, s: harness::ConvergenceSeries) -> Series {
        Series {
            label,
            slope: s.fit.slope,
            intercept: s.fit.intercept,
            r2: s.fit.r2,
            points: s.points,
            skipped_t: s.skipped_t,
        }
    }
}

/// Cumulative log-loss regret record.
#[pyclass(frozen, get_all)]
struct Regret {
    predictor: String,
    t_total: u64,
    cumulative_loss: f64,
    hindsight_loss: f64,
    regret: f64,
    infinite_at: Option<u64>,
}

#[pyfunction]
fn ml_fit(family: &Family, summary: &Summary) -> PyResult<Fit> {
    let f = fit::ml_fit(&family.inner, &summary.inner).map_err(err)?;
    Ok(Fit {
        theta: f.theta.0,
        mean: f.mean.0,
        interior: f.interior,
        converged: f.converged,
        iterations: f.iterations,
    })
}

#[pyfunction]
fn ml_update_step(family: &Family, summary: &Summary, x_next: usize) -> PyResult<Vec<f64>> {
    Ok(fit::ml_update_step(&family.inner, &summary.inner, x_next)
        .map_err(err)?
        .0)
}

#[pyfunction]
fn observed_information(
    family: &Family,
    summary: &Summary,
    theta: Vec<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    fit::observed_information(&family.inner, &summary.inner, &NaturalParam(theta)).map_err(err)
}

/// Evaluate a predictor spec string (`ml`, `snml`, `mixture:jeffreys`,
/// `bayes-quad:uniform`, ...) on a summary.
#[pyfunction]
#[pyo3(signature = (family, summary, predictor, prior=None, nodes=200))]
fn predict(
    family: &Family,
    summary: &Summary,
    predictor: &str,
    prior: Option<&str>,
    nodes: usize,
) -> PyResult<Prediction> {
    let default_prior = match prior {
        Some(p) => Some(Prior::parse(p).map_err(err)?),
        None => None,
    };
    let spec = PredictorSpec::parse(predictor, default_prior.as_ref()).map_err(err)?;
    let dist = spec
        .predict(&family.inner, &summary.inner, &QuadratureGrid::new(nodes))
        .map_err(err)?;
    Ok(Prediction {
        probs: dist.probs,
        name: dist.meta.name,
        boundary: dist.meta.boundary,
        z_explicit: dist.meta.z_explicit,
        z_closed: dist.meta.z_closed,
        prenorm_residual: dist.meta.prenorm_residual,
    })
}

/// Posterior mean of `f` (`mu`, `theta`, or `p<y>`) by quadrature.
#[pyfunction]
#[pyo3(signature = (family, summary, prior, f, nodes=200))]
fn quad_posterior_mean(
    family: &Family,
    summary: &Summary,
    prior: &str,
    f: &str,
    nodes: usize,
) -> PyResult<f64> {
    let prior = Prior::parse(prior).map_err(err)?;
    let f = parse_smooth_fn(f)?;
    bayes::quad_posterior_mean(
        &family.inner,
        &summary.inner,
        &prior,
        &f,
        &QuadratureGrid::new(nodes),
    )
    .map_err(err)
}

/// Second-order expansion of the posterior mean of `f` around the ML point.
#[pyfunction]
fn posterior_mean_expansion(
    family: &Family,
    summary: &Summary,
    prior: &str,
    f: &str,
) -> PyResult<f64> {
    let prior = Prior::parse(prior).map_err(err)?;
    let f = parse_smooth_fn(f)?;
    bayes::posterior_mean_expansion(&family.inner, &summary.inner, &prior, &f).map_err(err)
}

fn parse_smooth_fn(f: &str) -> PyResult<SmoothFn> {
    match f {
        "mu" => Ok(SmoothFn::mean_coord(0)),
        "theta" => Ok(SmoothFn::natural_coord(0)),
        other => {
            if let Some(y) = other.strip_prefix('p') {
                if let Ok(y) = y.parse::<usize>() {
                    return Ok(SmoothFn::prob_of(y));
                }
            }
            Err(PyValueError::new_err("f must be mu | theta | p<y>"))
        }
    }
}

/// Determinant-form shift vector at the summary's ML point.
#[pyfunction]
fn shift_vector_detform(family: &Family, summary: &Summary) -> PyResult<Vec<f64>> {
    Ok(
        geometry::shift_vector_detform(&family.inner, &summary.inner)
            .map_err(err)?
            .0,
    )
}

/// (measured, coordinate_mean, predicted) posterior-center shifts under
/// the Jeffreys prior.
#[pyfunction]
#[pyo3(signature = (family, summary, nodes=200))]
fn posterior_shift(
    family: &Family,
    summary: &Summary,
    nodes: usize,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let s =
        geometry::posterior_shift_check(&family.inner, &summary.inner, &QuadratureGrid::new(nodes))
            .map_err(err)?;
    Ok((s.measured_shift, s.coordinate_mean_shift, s.predicted_shift))
}

/// Materialize a sequence spec (`iid:theta=..:seed=..`, `periodic:..`,
/// `file:..`).
#[pyfunction]
fn generate(family: &Family, seq: &str, length: usize) -> PyResult<Vec<usize>> {
    let spec = SequenceSpec::parse(seq, length).map_err(err)?;
    harness::generate(&family.inner, &spec).map_err(err)
}

/// Running-mean regularity check; returns (ok, first_violation).
#[pyfunction]
fn ineccsi_check(
    family: &Family,
    sequence: Vec<usize>,
    t0: u64,
    bounds: Vec<(f64, f64)>,
) -> PyResult<(bool, Option<u64>)> {
    let r = harness::ineccsi_check(&family.inner, &sequence, t0, &bounds).map_err(err)?;
    Ok((r.ok, r.first_violation))
}

/// Pairwise sup-distance series between predictor specs over a time grid.
#[pyfunction]
#[pyo3(signature = (family, sequence, predictors, t_grid, nodes=200))]
fn compare(
    family: &Family,
    sequence: Vec<usize>,
    predictors: Vec<String>,
    t_grid: Vec<u64>,
    nodes: usize,
) -> PyResult<Vec<Series>> {
    let specs: Vec<PredictorSpec> = predictors
        .iter()
        .map(|s| PredictorSpec::parse(s, None))
        .collect::<expfam::Result<_>>()
        .map_err(err)?;
    let out = harness::run_comparison(
        &family.inner,
        &sequence,
        &specs,
        &t_grid,
        &QuadratureGrid::new(nodes),
    )
    .map_err(err)?;
    Ok(out
        .into_iter()
        .map(|p| {
            let label = format!("{} vs {}", p.a, p.b);
            Series::from_core(label, p.series)
        })
        .collect())
}

/// Named discrepancy series: `ml-update | snml-z | posterior-mean:<f>:<prior> | shift |
/// shift-coord`.
#[pyfunction]
#[pyo3(signature = (family, sequence, kind, t_grid, nodes=200))]
fn rate_series(
    family: &Family,
    sequence: Vec<usize>,
    kind: &str,
    t_grid: Vec<u64>,
    nodes: usize,
) -> PyResult<Series> {
    let rate = RateKind::parse(kind).map_err(err)?;
    let series = harness::rate_series(
        &family.inner,
        &sequence,
        &rate,
        &t_grid,
        &QuadratureGrid::new(nodes),
    )
    .map_err(err)?;
    Ok(Series::from_core(rate.name(), series))
}

/// Cumulative log-loss regret of a predictor along a sequence.
#[pyfunction]
#[pyo3(signature = (family, sequence, predictor, nodes=200))]
fn regret(
    family: &Family,
    sequence: Vec<usize>,
    predictor: &str,
    nodes: usize,
) -> PyResult<Regret> {
    let spec = PredictorSpec::parse(predictor, None).map_err(err)?;
    let r = harness::regret(&family.inner, &sequence, &spec, &QuadratureGrid::new(nodes))
        .map_err(err)?;
    Ok(Regret {
        predictor: r.predictor,
        t_total: r.t_total,
        cumulative_loss: r.cumulative_loss,
        hindsight_loss: r.hindsight_loss,
        regret: r.regret,
        infinite_at: r.infinite_at,
    })
}

/// Least squares of ln(discrepancy) on ln(t); returns (slope, intercept, r2).
#[pyfunction]
fn fit_slope(points: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = harness::fit_slope(&points).map_err(err)?;
    Ok((f.slope, f.intercept, f.r2))
}

#[pymodule]
fn expfam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Family>()?;
    m.add_class::<Summary>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Prediction>()?;
    m.add_class::<Series>()?;
    m.add_class::<Regret>()?;
    m.add_function(wrap_pyfunction!(ml_fit, m)?)?;
    m.add_function(wrap_pyfunction!(ml_update_step, m)?)?;
    m.add_function(wrap_pyfunction!(observed_information, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(quad_posterior_mean, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_mean_expansion, m)?)?;
    m.add_function(wrap_pyfunction!(shift_vector_detform, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_shift, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(ineccsi_check, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(rate_series, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add_function(wrap_pyfunction!(fit_slope, m)?)?;
    Ok(())
}

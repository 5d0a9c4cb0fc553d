//! Ground-truth Bayesian predictors and posterior means.
//!
//! Priors are specified through their density `beta(theta)` with respect to
//! the (unnormalized) Jeffreys measure `sqrt(det I(theta)) dtheta`; the
//! conjugate kinds carry closed forms. Saturated families (alphabet of size
//! d + 1) admit exact Dirichlet/Beta posterior predictives. The numerical
//! route integrates over mean coordinates on the compact feature polytope
//! with a `sin^2(pi u / 2)` substitution per axis, which absorbs the
//! Jeffreys boundary singularity and leaves a smooth integrand for
//! Gauss-Legendre tensor grids (d <= 2).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::family::{FiniteExpFamily, NaturalParam};
use crate::fit::{self, SufficientStatSummary};
use crate::linalg;
use crate::numdiff;
use crate::predictor::{PredictiveDistribution, PredictorMeta, WeightFunction};

type DensityFn = dyn Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&FiniteExpFamily, &[f64]) -> Vec<f64> + Send + Sync;
/// Functional evaluated at a quadrature node: arguments are the natural
/// parameter and the probability table there.
type NodeFn<'a> = &'a dyn Fn(&[f64], &[f64]) -> f64;
type BoxedNodeFn = Box<dyn Fn(&[f64], &[f64]) -> f64>;

#[derive(Clone)]
enum PriorKind {
    /// `beta = 1`.
    Jeffreys,
    /// Lebesgue-uniform in mean coordinates; `beta = sqrt(det I)`.
    UniformMean,
    /// Beta(a, b) on the probability of symbol 1 of a two-symbol family
    /// (a pseudo-counts heads, b tails).
    Beta { a: f64, b: f64 },
    /// Dirichlet over the probability simplex of a saturated family.
    Dirichlet { alpha: Vec<f64> },
    /// User-supplied density w.r.t. Jeffreys, with optional closed-form
    /// log-gradient (finite differences otherwise).
    Custom {
        density: Arc<DensityFn>,
        log_grad: Option<Arc<GradFn>>,
    },
}

/// A Bayesian prior on natural parameters.
#[derive(Clone)]
pub struct Prior {
    kind: PriorKind,
}

impl std::fmt::Debug for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Prior({})", self.name())
    }
}

impl Prior {
    pub fn jeffreys() -> Self {
        Prior {
            kind: PriorKind::Jeffreys,
        }
    }

    pub fn uniform_mean() -> Self {
        Prior {
            kind: PriorKind::UniformMean,
        }
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
            return Err(Error::InvalidSpec {
                spec: format!("beta:{a},{b}"),
                reason: "beta parameters must be positive".into(),
            });
        }
        Ok(Prior {
            kind: PriorKind::Beta { a, b },
        })
    }

    pub fn dirichlet(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 || !alpha.iter().all(|&a| a.is_finite() && a > 0.0) {
            return Err(Error::InvalidSpec {
                spec: "dirichlet".into(),
                reason: "need >= 2 positive concentration parameters".into(),
            });
        }
        Ok(Prior {
            kind: PriorKind::Dirichlet { alpha },
        })
    }

    pub fn custom(
        density: impl Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Prior {
            kind: PriorKind::Custom {
                density: Arc::new(density),
                log_grad: None,
            },
        }
    }

    pub fn custom_with_log_grad(
        density: impl Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync + 'static,
        log_grad: impl Fn(&FiniteExpFamily, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Prior {
            kind: PriorKind::Custom {
                density: Arc::new(density),
                log_grad: Some(Arc::new(log_grad)),
            },
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            PriorKind::Jeffreys => "jeffreys".into(),
            PriorKind::UniformMean => "uniform".into(),
            PriorKind::Beta { a, b } => format!("beta:{a},{b}"),
            PriorKind::Dirichlet { alpha } => {
                let parts: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
                format!("dirichlet:{}", parts.join(","))
            }
            PriorKind::Custom { .. } => "custom".into(),
        }
    }

    /// Parse a prior spec string: `jeffreys`, `uniform`, `beta:a,b`,
    /// `dirichlet:a1,...`. Custom priors are API-only.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        match spec {
            "jeffreys" => return Ok(Prior::jeffreys()),
            "uniform" => return Ok(Prior::uniform_mean()),
            _ => {}
        }
        if let Some(rest) = spec.strip_prefix("beta:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 2 {
                return Err(bad("expected beta:a,b"));
            }
            let a: f64 = parts[0]
                .trim()
                .parse()
                .map_err(|_| bad("bad beta parameter"))?;
            let b: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|_| bad("bad beta parameter"))?;
            return Prior::beta(a, b);
        }
        if let Some(rest) = spec.strip_prefix("dirichlet:") {
            let alpha: std::result::Result<Vec<f64>, _> =
                rest.split(',').map(|p| p.trim().parse::<f64>()).collect();
            return Prior::dirichlet(alpha.map_err(|_| bad("bad dirichlet parameter"))?);
        }
        if spec.starts_with("custom") {
            return Err(bad(
                "custom priors are constructed through the API, not spec strings",
            ));
        }
        Err(bad(
            "expected jeffreys | uniform | beta:a,b | dirichlet:a1,...",
        ))
    }

    /// Check that this prior makes sense on the family at all (Beta and
    /// Dirichlet kinds are tied to saturated families of the right size;
    /// the other kinds apply everywhere).
    pub fn check_compatible(&self, family: &FiniteExpFamily) -> Result<()> {
        match &self.kind {
            PriorKind::Beta { .. } | PriorKind::Dirichlet { .. } => {
                self.conjugate_pseudocounts(family).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// Dirichlet pseudo-counts when this prior is conjugate for the family.
    pub fn conjugate_pseudocounts(&self, family: &FiniteExpFamily) -> Result<Vec<f64>> {
        let k = family.alphabet_size();
        if !family.is_saturated() {
            return Err(Error::NonConjugate { prior: self.name() });
        }
        match &self.kind {
            PriorKind::Jeffreys => Ok(vec![0.5; k]),
            PriorKind::UniformMean => Ok(vec![1.0; k]),
            PriorKind::Beta { a, b } => {
                if k != 2 {
                    return Err(Error::NonConjugate { prior: self.name() });
                }
                Ok(vec![*b, *a])
            }
            PriorKind::Dirichlet { alpha } => {
                if alpha.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: alpha.len(),
                    });
                }
                Ok(alpha.clone())
            }
            PriorKind::Custom { .. } => Err(Error::NonConjugate { prior: self.name() }),
        }
    }

    /// `ln beta(theta)` given the probability table at `theta`.
    fn log_beta(&self, family: &FiniteExpFamily, theta: &[f64], probs: &[f64]) -> Result<f64> {
        match &self.kind {
            PriorKind::Jeffreys => Ok(0.0),
            PriorKind::UniformMean => {
                let i = family.fisher_of(probs);
                linalg::log_det_spd(&i)
                    .map(|ld| 0.5 * ld)
                    .ok_or_else(|| Error::InvalidFamily("singular Fisher matrix".into()))
            }
            PriorKind::Beta { .. } | PriorKind::Dirichlet { .. } => {
                let alpha = self.conjugate_pseudocounts(family)?;
                Ok(alpha
                    .iter()
                    .zip(probs)
                    .map(|(a, p)| (a - 0.5) * p.ln())
                    .sum())
            }
            PriorKind::Custom { density, .. } => {
                let v = density(family, theta);
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::NonPositiveWeight(v));
                }
                Ok(v.ln())
            }
        }
    }

    /// Density `beta(theta)` w.r.t. the Jeffreys measure (unnormalized).
    pub fn beta_density(&self, family: &FiniteExpFamily, theta: &NaturalParam) -> Result<f64> {
        let probs = family.prob_table(theta);
        self.log_beta(family, theta.as_slice(), &probs)
            .map(f64::exp)
    }

    /// `d ln beta` at `theta`: closed forms for the stock kinds, finite
    /// differences for custom priors without a registered gradient.
    pub fn log_beta_grad(
        &self,
        family: &FiniteExpFamily,
        theta: &NaturalParam,
    ) -> Result<Vec<f64>> {
        let d = family.dim();
        match &self.kind {
            PriorKind::Jeffreys => Ok(vec![0.0; d]),
            PriorKind::UniformMean => {
                // d_l ln sqrt(det I) = (1/2) I^{jk} T_{ljk}
                let probs = family.prob_table(theta);
                let fisher = family.fisher_of(&probs);
                let inv = linalg::invert_spd(&fisher)
                    .ok_or_else(|| Error::InvalidFamily("singular Fisher matrix".into()))?;
                let t = family.skewness_tensor(theta);
                let mut g = vec![0.0; d];
                for (l, gl) in g.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for j in 0..d {
                        for k in 0..d {
                            s += inv[j][k] * t.0[l][j][k];
                        }
                    }
                    *gl = 0.5 * s;
                }
                Ok(g)
            }
            PriorKind::Beta { .. } | PriorKind::Dirichlet { .. } => {
                // d_l sum_i (a_i - 1/2) ln p_i = sum_i (a_i - 1/2)(phi_l(i) - mu_l)
                let alpha = self.conjugate_pseudocounts(family)?;
                let mu = family.mean_params(theta);
                let mut g = vec![0.0; d];
                for (i, a) in alpha.iter().enumerate() {
                    let score = family.score(i, mu.as_slice());
                    for (gl, s) in g.iter_mut().zip(&score) {
                        *gl += (a - 0.5) * s;
                    }
                }
                Ok(g)
            }
            PriorKind::Custom { density, log_grad } => {
                if let Some(g) = log_grad {
                    return Ok(g(family, theta.as_slice()));
                }
                let density = Arc::clone(density);
                let fam = family.clone();
                Ok(numdiff::central_grad(
                    move |th| density(&fam, th).ln(),
                    theta.as_slice(),
                    numdiff::grad_step,
                ))
            }
        }
    }

    /// This prior's density as a [`WeightFunction`] (for the mixture and
    /// expansion predictors, which square it).
    pub fn beta_weight(&self) -> WeightFunction {
        let prior = self.clone();
        let grad_prior = self.clone();
        WeightFunction::new(move |fam: &FiniteExpFamily, th: &[f64]| {
            prior
                .beta_density(fam, &NaturalParam(th.to_vec()))
                .unwrap_or(f64::NAN)
        })
        .with_log_grad(move |fam: &FiniteExpFamily, th: &[f64]| {
            grad_prior
                .log_beta_grad(fam, &NaturalParam(th.to_vec()))
                .unwrap_or_else(|_| vec![f64::NAN; fam.dim()])
        })
    }
}

/// Exact conjugate posterior predictive `(counts[y] + a_y) / (t + sum a)`
/// for saturated families.
pub fn conjugate_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
) -> Result<PredictiveDistribution> {
    let alpha = prior.conjugate_pseudocounts(family)?;
    let total: f64 = alpha.iter().sum::<f64>() + summary.t() as f64;
    let probs = summary
        .counts()
        .iter()
        .zip(&alpha)
        .map(|(&c, a)| (c as f64 + a) / total)
        .collect();
    let mut meta = PredictorMeta::named("bayes-exact");
    meta.boundary = false;
    Ok(PredictiveDistribution { probs, meta })
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on [0, 1], shared per axis of a tensor
/// grid. Nodes are strictly interior, so endpoint singularities absorbed by
/// the change of variables are never evaluated.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(nodes_per_axis: usize) -> Self {
        let (nodes, weights) = gauss_legendre_unit(nodes_per_axis.max(2));
        QuadratureGrid { nodes, weights }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes.len()
    }
}

impl Default for QuadratureGrid {
    /// 200 nodes per axis: exact to rounding for the posteriors exercised
    /// by the rate tests (t up to ~1000).
    fn default() -> Self {
        QuadratureGrid::new(200)
    }
}

/// Gauss-Legendre rule on [-1, 1] by Newton iteration on the Legendre
/// recurrence, mapped to [0, 1].
fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = 0.5 * (x + 1.0);
        weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Integration domain in mean coordinates.
enum QuadGeometry {
    Interval { lo: f64, hi: f64 },
    Simplex2 { verts: [[f64; 2]; 3], area_jac: f64 },
}

fn quad_geometry(family: &FiniteExpFamily) -> Result<QuadGeometry> {
    match family.dim() {
        1 => {
            let (lo, hi) = family.feature_interval().expect("dim checked");
            Ok(QuadGeometry::Interval { lo, hi })
        }
        2 => {
            let mut verts: Vec<[f64; 2]> = Vec::new();
            for row in family.features() {
                let v = [row[0], row[1]];
                if !verts
                    .iter()
                    .any(|u| (u[0] - v[0]).abs() < 1e-12 && (u[1] - v[1]).abs() < 1e-12)
                {
                    verts.push(v);
                }
            }
            if verts.len() != 3 {
                return Err(Error::QuadratureUnsupported(format!(
                    "2-d quadrature needs a simplex feature hull (3 distinct feature rows), found {}",
                    verts.len()
                )));
            }
            let e0 = [verts[0][0] - verts[2][0], verts[0][1] - verts[2][1]];
            let e1 = [verts[1][0] - verts[2][0], verts[1][1] - verts[2][1]];
            let area_jac = (e0[0] * e1[1] - e0[1] * e1[0]).abs();
            if area_jac < 1e-12 {
                return Err(Error::QuadratureUnsupported(
                    "degenerate feature triangle".into(),
                ));
            }
            Ok(QuadGeometry::Simplex2 {
                verts: [verts[0], verts[1], verts[2]],
                area_jac,
            })
        }
        d => Err(Error::QuadratureUnsupported(format!(
            "tensor grids support d <= 2, got d = {d}"
        ))),
    }
}

/// Natural parameter at a mean-coordinate node: closed form for saturated
/// families, tight Newton solve otherwise.
fn node_theta(family: &FiniteExpFamily, mu: &[f64], warm: &mut Vec<f64>) -> Result<Vec<f64>> {
    if let Some(theta) = family.mean_to_natural_exact(mu) {
        *warm = theta.clone();
        return Ok(theta);
    }
    let solve = fit::solve_mean(family, mu, warm, 1e-13);
    if !solve.converged {
        return Err(Error::QuadratureUnsupported(format!(
            "mean-to-natural solve failed at node {mu:?}"
        )));
    }
    *warm = solve.theta.clone();
    Ok(solve.theta)
}

/// Shared posterior-weighted integration: returns the posterior means of
/// each functional in `fs` (arguments: theta, prob table at theta).
fn quad_posterior_many(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
    grid: &QuadratureGrid,
    fs: &[NodeFn],
) -> Result<Vec<f64>> {
    if summary.t() == 0 {
        return Err(Error::EmptySummary);
    }
    let (log_kernel, fvals) = quad_kernel(family, Some(summary), prior, grid, fs)?;
    let m = log_kernel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut den = 0.0;
    let mut num = vec![0.0; fs.len()];
    for (i, lk) in log_kernel.iter().enumerate() {
        let w = (lk - m).exp();
        den += w;
        for (j, nj) in num.iter_mut().enumerate() {
            *nj += w * fvals[j][i];
        }
    }
    Ok(num.into_iter().map(|v| v / den).collect())
}

/// Evaluate the log posterior kernel (or the bare prior measure when
/// `summary` is `None`) on the tensor grid. The kernel at mean-node mu is
///
/// ```text
/// beta(theta) * det I(theta)^(-1/2) * exp(theta . S - t A(theta)) * |d mu / d u|
/// ```
///
/// where S is the feature sum; `sqrt(det I) dtheta` became
/// `det I^{-1/2} dmu` through `dtheta = I^{-1} dmu`.
fn quad_kernel(
    family: &FiniteExpFamily,
    summary: Option<&SufficientStatSummary>,
    prior: &Prior,
    grid: &QuadratureGrid,
    fs: &[NodeFn],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let geometry = quad_geometry(family)?;
    let n = grid.nodes.len();
    // sin^2 substitution per axis: s = sin^2(pi u / 2), ds/du = (pi/2) sin(pi u)
    let s: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&u| (0.5 * std::f64::consts::PI * u).sin().powi(2))
        .collect();
    let log_ds: Vec<f64> = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .map(|(&u, &w)| (0.5 * std::f64::consts::PI * (std::f64::consts::PI * u).sin() * w).ln())
        .collect();

    let mut log_kernel = Vec::new();
    let mut fvals = vec![Vec::new(); fs.len()];
    let mut warm = vec![0.0; family.dim()];

    let mut visit = |mu: &[f64], log_jac: f64, warm: &mut Vec<f64>| -> Result<()> {
        let theta = node_theta(family, mu, warm)?;
        let tp = NaturalParam(theta.clone());
        let probs = family.prob_table(&tp);
        let fisher = family.fisher_of(&probs);
        let log_det = linalg::log_det_spd(&fisher)
            .ok_or_else(|| Error::InvalidFamily("singular Fisher matrix at node".into()))?;
        let mut lk = prior.log_beta(family, &theta, &probs)? - 0.5 * log_det + log_jac;
        if let Some(sum) = summary {
            lk +=
                linalg::dot(&theta, sum.feature_sum()) - sum.t() as f64 * family.log_partition(&tp);
        }
        log_kernel.push(lk);
        for (j, f) in fs.iter().enumerate() {
            fvals[j].push(f(&theta, &probs));
        }
        Ok(())
    };

    match geometry {
        QuadGeometry::Interval { lo, hi } => {
            let width = hi - lo;
            for i in 0..n {
                let mu = [lo + width * s[i]];
                visit(&mu, width.ln() + log_ds[i], &mut warm)?;
            }
        }
        QuadGeometry::Simplex2 { verts, area_jac } => {
            for i in 0..n {
                let s1 = s[i];
                // warm start resets per row for a smooth sweep in s2
                let mut row_warm = warm.clone();
                for j in 0..n {
                    let s2 = s[j];
                    let lam = [s1, (1.0 - s1) * s2, (1.0 - s1) * (1.0 - s2)];
                    let mu = [
                        lam[0] * verts[0][0] + lam[1] * verts[1][0] + lam[2] * verts[2][0],
                        lam[0] * verts[0][1] + lam[1] * verts[1][1] + lam[2] * verts[2][1],
                    ];
                    let log_jac = area_jac.ln() + (1.0 - s1).ln() + log_ds[i] + log_ds[j];
                    visit(&mu, log_jac, &mut row_warm)?;
                    if j == 0 {
                        warm = row_warm.clone();
                    }
                }
            }
        }
    }
    Ok((log_kernel, fvals))
}

/// Posterior predictive by quadrature over the parameter: agrees with
/// [`conjugate_predict`] to ~1e-8 wherever both apply.
pub fn quad_posterior_predict(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
    grid: &QuadratureGrid,
) -> Result<PredictiveDistribution> {
    let k = family.alphabet_size();
    let closures: Vec<BoxedNodeFn> = (0..k)
        .map(|y| Box::new(move |_: &[f64], p: &[f64]| p[y]) as BoxedNodeFn)
        .collect();
    let refs: Vec<NodeFn> = closures.iter().map(|b| b.as_ref()).collect();
    let probs = quad_posterior_many(family, summary, prior, grid, &refs)?;
    let mut meta = PredictorMeta::named("bayes-quad");
    meta.boundary = false;
    Ok(PredictiveDistribution { probs, meta })
}

/// Posterior mean of a smooth function of theta.
pub fn quad_posterior_mean(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
    f: &SmoothFn,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let eval = |theta: &[f64], probs: &[f64]| f.eval_raw(family, theta, probs);
    let out = quad_posterior_many(family, summary, prior, grid, &[&eval])?;
    Ok(out[0])
}

/// Posterior mean and covariance of the natural coordinates. Used by the
/// posterior-shift diagnostic.
pub fn quad_posterior_theta_moments(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
    grid: &QuadratureGrid,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = family.dim();
    let mut closures: Vec<BoxedNodeFn> = Vec::new();
    for i in 0..d {
        closures.push(Box::new(move |th: &[f64], _: &[f64]| th[i]));
    }
    for i in 0..d {
        for j in 0..=i {
            closures.push(Box::new(move |th: &[f64], _: &[f64]| th[i] * th[j]));
        }
    }
    let refs: Vec<NodeFn> = closures.iter().map(|b| b.as_ref()).collect();
    let vals = quad_posterior_many(family, summary, prior, grid, &refs)?;
    let mean = vals[..d].to_vec();
    let mut cov = vec![vec![0.0; d]; d];
    let mut idx = d;
    for i in 0..d {
        for j in 0..=i {
            let c = vals[idx] - mean[i] * mean[j];
            cov[i][j] = c;
            cov[j][i] = c;
            idx += 1;
        }
    }
    Ok((mean, cov))
}

/// Total mass of the (unnormalized) prior measure `beta sqrt(det I) dtheta`
/// over the whole parameter space. With the Jeffreys prior this recovers
/// the Beta/Dirichlet normalization constants (pi for the coin family,
/// 2 pi for the 3-symbol categorical), which pins down the substitution
/// machinery end to end.
pub fn prior_normalization(
    family: &FiniteExpFamily,
    prior: &Prior,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let (log_kernel, _) = quad_kernel(family, None, prior, grid, &[])?;
    let m = log_kernel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(m.exp() * log_kernel.iter().map(|lk| (lk - m).exp()).sum::<f64>())
}

// ---------------------------------------------------------------------------
// Posterior-mean expansion
// ---------------------------------------------------------------------------

type ScalarFn = dyn Fn(&FiniteExpFamily, &[f64], &[f64]) -> f64 + Send + Sync;
type VecFn = dyn Fn(&FiniteExpFamily, &[f64]) -> Vec<f64> + Send + Sync;
type MatFn = dyn Fn(&FiniteExpFamily, &[f64]) -> Vec<Vec<f64>> + Send + Sync;

/// A smooth scalar function of theta bundled with its gradient and Hessian
/// (closed forms for the stock choices, finite differences otherwise).
#[derive(Clone)]
pub struct SmoothFn {
    name: String,
    f: Arc<ScalarFn>,
    grad: Arc<VecFn>,
    hess: Arc<MatFn>,
}

impl std::fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SmoothFn({})", self.name)
    }
}

impl SmoothFn {
    /// Wrap a plain function; derivatives fall back to central differences.
    pub fn from_fn(
        name: &str,
        f: impl Fn(&FiniteExpFamily, &[f64]) -> f64 + Send + Sync + Clone + 'static,
    ) -> Self {
        let f0 = f.clone();
        let f1 = f.clone();
        let f2 = f;
        SmoothFn {
            name: name.to_string(),
            f: Arc::new(move |fam, th, _| f0(fam, th)),
            grad: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                let fam = fam.clone();
                let f1 = f1.clone();
                numdiff::central_grad(move |x| f1(&fam, x), th, numdiff::grad_step)
            }),
            hess: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                let fam = fam.clone();
                let f2 = f2.clone();
                numdiff::central_hessian(move |x| f2(&fam, x), th)
            }),
        }
    }

    /// The coordinate function `f(theta) = theta_i`.
    pub fn natural_coord(i: usize) -> Self {
        SmoothFn {
            name: format!("theta[{i}]"),
            f: Arc::new(move |_, th, _| th[i]),
            grad: Arc::new(move |fam: &FiniteExpFamily, _: &[f64]| {
                let mut g = vec![0.0; fam.dim()];
                g[i] = 1.0;
                g
            }),
            hess: Arc::new(|fam: &FiniteExpFamily, _: &[f64]| {
                vec![vec![0.0; fam.dim()]; fam.dim()]
            }),
        }
    }

    /// The mean coordinate `f(theta) = mu_i(theta)`; its gradient is the
    /// i-th Fisher row and its Hessian the skewness slice `T[i]`.
    pub fn mean_coord(i: usize) -> Self {
        SmoothFn {
            name: format!("mu[{i}]"),
            f: Arc::new(move |fam: &FiniteExpFamily, _: &[f64], probs: &[f64]| {
                fam.mean_of(probs)[i]
            }),
            grad: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                fam.fisher_matrix(&NaturalParam(th.to_vec()))[i].clone()
            }),
            hess: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                fam.skewness_tensor(&NaturalParam(th.to_vec())).0[i].clone()
            }),
        }
    }

    /// The per-symbol probability `f(theta) = p_theta(y)`, with
    /// `grad = p g` and `hess = p (g g^T - I)` for the score `g`.
    pub fn prob_of(y: usize) -> Self {
        SmoothFn {
            name: format!("p[{y}]"),
            f: Arc::new(move |_, _, probs: &[f64]| probs[y]),
            grad: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                let tp = NaturalParam(th.to_vec());
                let probs = fam.prob_table(&tp);
                let mu = fam.mean_of(&probs);
                fam.score(y, &mu)
                    .into_iter()
                    .map(|g| probs[y] * g)
                    .collect()
            }),
            hess: Arc::new(move |fam: &FiniteExpFamily, th: &[f64]| {
                let tp = NaturalParam(th.to_vec());
                let probs = fam.prob_table(&tp);
                let mu = fam.mean_of(&probs);
                let g = fam.score(y, &mu);
                let fisher = fam.fisher_of(&probs);
                let d = fam.dim();
                let mut h = vec![vec![0.0; d]; d];
                for a in 0..d {
                    for b in 0..d {
                        h[a][b] = probs[y] * (g[a] * g[b] - fisher[a][b]);
                    }
                }
                h
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn eval_raw(&self, family: &FiniteExpFamily, theta: &[f64], probs: &[f64]) -> f64 {
        (self.f)(family, theta, probs)
    }

    pub fn eval(&self, family: &FiniteExpFamily, theta: &NaturalParam) -> f64 {
        let probs = family.prob_table(theta);
        (self.f)(family, theta.as_slice(), &probs)
    }

    pub fn grad(&self, family: &FiniteExpFamily, theta: &NaturalParam) -> Vec<f64> {
        (self.grad)(family, theta.as_slice())
    }

    pub fn hess(&self, family: &FiniteExpFamily, theta: &NaturalParam) -> Vec<Vec<f64>> {
        (self.hess)(family, theta.as_slice())
    }
}

/// Second-order expansion of the posterior mean of `f` around the ML
/// estimate:
///
/// ```text
/// f + (1/t) (df)^T J^{-1} d(ln beta) + (1/2t) Tr(J^{-1} d^2 f)
/// ```
///
/// evaluated at the (interior) ML point, where `J` is the observed
/// information (here exactly the Fisher matrix), so the prior enters only
/// through its density w.r.t. Jeffreys.
pub fn posterior_mean_expansion(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    prior: &Prior,
    f: &SmoothFn,
) -> Result<f64> {
    if summary.t() == 0 {
        return Err(Error::EmptySummary);
    }
    let fit = fit::ml_fit(family, summary)?;
    if !fit.interior {
        return Err(Error::BoundaryMl);
    }
    let t = summary.t() as f64;
    let theta = &fit.theta;
    let fisher = family.fisher_matrix(theta);
    let chol = linalg::cholesky(&fisher)
        .ok_or_else(|| Error::InvalidFamily("singular Fisher matrix at ML".into()))?;
    let value = f.eval(family, theta);
    let grad = f.grad(family, theta);
    let hess = f.hess(family, theta);
    let log_beta_grad = prior.log_beta_grad(family, theta)?;
    let shift = linalg::dot(&linalg::chol_solve(&chol, &grad), &log_beta_grad) / t;
    let d = family.dim();
    let mut trace = 0.0;
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|r| hess[r][j]).collect();
        trace += linalg::chol_solve(&chol, &col)[j];
    }
    Ok(value + shift + trace / (2.0 * t))
}

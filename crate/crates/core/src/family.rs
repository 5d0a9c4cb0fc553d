//! Finite-alphabet exponential families in natural coordinates.
//!
//! A family over the alphabet `{0, .., k-1}` is given by strictly positive
//! base weights `q(x)` and a feature map `phi: X -> R^d`:
//!
//! ```text
//! p_theta(x) = q(x) * exp(theta . phi(x) - A(theta))
//! A(theta)   = ln sum_x q(x) * exp(theta . phi(x))
//! ```
//!
//! Because the alphabet is finite, every moment is an exact sum: mean
//! parameters are `E[phi]`, the Fisher matrix is the feature covariance
//! (equal to `-d^2 ln p` in these coordinates, for every `x`), and the
//! skewness tensor is the third central moment (equal to the gradient of
//! the Fisher matrix). Construction rejects degenerate feature maps so the
//! Fisher matrix is invertible everywhere.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Natural-coordinate parameter vector `theta` in R^d. Any finite real
/// vector is a valid parameter for a finite-alphabet family.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParam(pub Vec<f64>);

impl NaturalParam {
    pub fn zeros(d: usize) -> Self {
        NaturalParam(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for NaturalParam {
    fn from(v: Vec<f64>) -> Self {
        NaturalParam(v)
    }
}

/// Mean parameter `mu = E_theta[phi(x)]`, the dual coordinates. Values
/// produced by [`FiniteExpFamily::mean_params`] lie strictly inside the
/// convex hull of the feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanParam(pub Vec<f64>);

impl MeanParam {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Fully symmetric third central moment of the features,
/// `T[j][k][l] = E[(phi_j - mu_j)(phi_k - mu_k)(phi_l - mu_l)]`,
/// which in natural coordinates is also the gradient of the Fisher matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewnessTensor(pub Vec<Vec<Vec<f64>>>);

impl SkewnessTensor {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// JSON document for `custom:<path>` family specs.
#[derive(Deserialize)]
struct CustomFamilyFile {
    base: Vec<f64>,
    features: Vec<Vec<f64>>,
}

/// A finite-alphabet exponential family. Immutable after construction;
/// all operations are pure functions of the inputs.
#[derive(Debug, Clone)]
pub struct FiniteExpFamily {
    base_weights: Vec<f64>,
    log_base: Vec<f64>,
    features: Vec<Vec<f64>>,
    dim: usize,
    /// True when the family spans every interior distribution on the
    /// alphabet (d = k - 1 with affinely independent feature rows). Such
    /// families admit conjugate Dirichlet posteriors and a closed-form
    /// mean-to-natural map.
    saturated: bool,
}

impl FiniteExpFamily {
    /// Build a family from base weights and an `alphabet_size x d` feature
    /// matrix. Rejects non-positive weights, ragged or empty features, and
    /// feature maps whose covariance at theta = 0 is rank deficient.
    pub fn new(base_weights: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        let k = base_weights.len();
        if k < 2 {
            return Err(Error::InvalidFamily(format!(
                "alphabet size must be >= 2, got {k}"
            )));
        }
        if features.len() != k {
            return Err(Error::InvalidFamily(format!(
                "feature matrix has {} rows for alphabet of size {k}",
                features.len()
            )));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(Error::InvalidFamily("parameter dimension is 0".into()));
        }
        if features.iter().any(|row| row.len() != d) {
            return Err(Error::InvalidFamily("ragged feature matrix".into()));
        }
        if !base_weights.iter().all(|&w| w.is_finite() && w > 0.0) {
            return Err(Error::InvalidFamily(
                "base weights must be strictly positive and finite".into(),
            ));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFamily("features must be finite".into()));
        }
        let fam = Self::new_unchecked(base_weights, features);
        // Non-degeneracy gate: Cholesky of the Fisher matrix at theta = 0.
        if linalg::cholesky(&fam.fisher_matrix(&NaturalParam::zeros(d))).is_none() {
            return Err(Error::InvalidFamily(
                "rank-deficient feature covariance at theta = 0 (affinely degenerate features)"
                    .into(),
            ));
        }
        Ok(fam)
    }

    pub(crate) fn new_unchecked(base_weights: Vec<f64>, features: Vec<Vec<f64>>) -> Self {
        let d = features[0].len();
        let log_base = base_weights.iter().map(|w| w.ln()).collect();
        let saturated = features.len() == d + 1;
        FiniteExpFamily {
            base_weights,
            log_base,
            features,
            dim: d,
            saturated,
        }
    }

    /// The coin-flip family: alphabet `{0 = tails, 1 = heads}`, unit base
    /// weights, `phi(x) = x`.
    pub fn bernoulli() -> Self {
        Self::new(vec![1.0, 1.0], vec![vec![0.0], vec![1.0]])
            .expect("bernoulli family is non-degenerate")
    }

    /// Categorical family on `k` symbols: the d = k - 1 indicator features
    /// (the last symbol is the reference), uniform base weights.
    pub fn categorical(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidFamily(format!(
                "categorical alphabet must have k >= 2, got {k}"
            )));
        }
        let features = (0..k)
            .map(|x| {
                let mut row = vec![0.0; k - 1];
                if x < k - 1 {
                    row[x] = 1.0;
                }
                row
            })
            .collect();
        Self::new(vec![1.0; k], features)
    }

    /// Load a custom family from a JSON document `{"base": [...], "features": [[...]]}`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: CustomFamilyFile = serde_json::from_str(&text)?;
        Self::new(doc.base, doc.features)
    }

    pub fn alphabet_size(&self) -> usize {
        self.base_weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.base_weights
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn feature_row(&self, x: usize) -> &[f64] {
        &self.features[x]
    }

    pub(crate) fn is_saturated(&self) -> bool {
        self.saturated
    }

    pub fn check_symbol(&self, x: usize) -> Result<()> {
        if x < self.alphabet_size() {
            Ok(())
        } else {
            Err(Error::SymbolOutOfRange {
                symbol: x,
                alphabet: self.alphabet_size(),
            })
        }
    }

    fn log_weights(&self, theta: &[f64]) -> Vec<f64> {
        self.features
            .iter()
            .zip(&self.log_base)
            .map(|(row, lb)| lb + linalg::dot(theta, row))
            .collect()
    }

    /// Log-partition `A(theta)`, computed with a max shift so that natural
    /// parameters up to +-35 or so never overflow.
    pub fn log_partition(&self, theta: &NaturalParam) -> f64 {
        let lw = self.log_weights(&theta.0);
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + lw.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    /// Probability vector over the alphabet. Entries are strictly positive
    /// for finite theta and sum to 1 up to rounding.
    pub fn prob_table(&self, theta: &NaturalParam) -> Vec<f64> {
        let lw = self.log_weights(&theta.0);
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        unnorm.into_iter().map(|v| v / z).collect()
    }

    /// Mean parameters `mu = E_theta[phi]`, the gradient of the log-partition.
    pub fn mean_params(&self, theta: &NaturalParam) -> MeanParam {
        let p = self.prob_table(theta);
        MeanParam(self.mean_of(&p))
    }

    pub(crate) fn mean_of(&self, probs: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for (row, &px) in self.features.iter().zip(probs) {
            for (m, &f) in mu.iter_mut().zip(row) {
                *m += px * f;
            }
        }
        mu
    }

    /// Fisher information matrix: the exact covariance of the features
    /// under `p_theta`, equal to `-E d^2 ln p_theta(x)` in these coordinates.
    pub fn fisher_matrix(&self, theta: &NaturalParam) -> Vec<Vec<f64>> {
        let p = self.prob_table(theta);
        self.fisher_of(&p)
    }

    pub(crate) fn fisher_of(&self, probs: &[f64]) -> Vec<Vec<f64>> {
        let mu = self.mean_of(probs);
        let d = self.dim;
        let mut cov = vec![vec![0.0; d]; d];
        for (row, &px) in self.features.iter().zip(probs) {
            let c: Vec<f64> = row.iter().zip(&mu).map(|(f, m)| f - m).collect();
            for j in 0..d {
                for k in 0..=j {
                    cov[j][k] += px * c[j] * c[k];
                }
            }
        }
        for j in 0..d {
            for k in j + 1..d {
                cov[j][k] = cov[k][j];
            }
        }
        cov
    }

    /// Skewness tensor: exact third central moment of the features. One
    /// ordering `j <= k <= l` is accumulated and mirrored to all index
    /// permutations, so the result is symmetric by construction.
    pub fn skewness_tensor(&self, theta: &NaturalParam) -> SkewnessTensor {
        let p = self.prob_table(theta);
        let mu = self.mean_of(&p);
        let d = self.dim;
        let mut t = vec![vec![vec![0.0; d]; d]; d];
        for (row, &px) in self.features.iter().zip(&p) {
            let c: Vec<f64> = row.iter().zip(&mu).map(|(f, m)| f - m).collect();
            for j in 0..d {
                for k in j..d {
                    for l in k..d {
                        let v = px * c[j] * c[k] * c[l];
                        t[j][k][l] += v;
                    }
                }
            }
        }
        for j in 0..d {
            for k in j..d {
                for l in k..d {
                    let v = t[j][k][l];
                    t[j][l][k] = v;
                    t[k][j][l] = v;
                    t[k][l][j] = v;
                    t[l][j][k] = v;
                    t[l][k][j] = v;
                }
            }
        }
        SkewnessTensor(t)
    }

    /// Score vector `d ln p_theta(x) = phi(x) - mu(theta)` given precomputed
    /// mean parameters.
    pub fn score(&self, x: usize, mu: &[f64]) -> Vec<f64> {
        self.features[x]
            .iter()
            .zip(mu)
            .map(|(f, m)| f - m)
            .collect()
    }

    /// Draw `n` i.i.d. symbols from `p_theta`, deterministic in `seed`.
    pub fn sample(&self, theta: &NaturalParam, seed: u64, n: usize) -> Vec<usize> {
        let p = self.prob_table(theta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (x, &px) in p.iter().enumerate() {
                    acc += px;
                    if u < acc {
                        return x;
                    }
                }
                self.alphabet_size() - 1
            })
            .collect()
    }

    /// Closed-form mean-to-natural map for saturated families. The mean
    /// pins down the probability vector through a linear system; natural
    /// coordinates follow from log-probability differences against the
    /// last symbol. Returns `None` for non-saturated families or boundary
    /// means.
    pub(crate) fn mean_to_natural_exact(&self, target: &[f64]) -> Option<Vec<f64>> {
        if !self.saturated {
            return None;
        }
        let k = self.alphabet_size();
        let d = self.dim;
        // [phi(x)^T ; 1] p = [mu ; 1]
        let mut a = vec![vec![0.0; k]; k];
        let mut b = vec![0.0; k];
        for j in 0..d {
            for x in 0..k {
                a[j][x] = self.features[x][j];
            }
            b[j] = target[j];
        }
        for x in 0..k {
            a[d][x] = 1.0;
        }
        b[d] = 1.0;
        let p = linalg::solve_general(&a, &b)?;
        if !p.iter().all(|&v| v.is_finite() && v > 0.0) {
            return None;
        }
        // theta solves (phi(x) - phi(k-1)) . theta = ln(p_x q_ref / (p_ref q_x))
        let mut rows = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        let reference = k - 1;
        for x in 0..d {
            for j in 0..d {
                rows[x][j] = self.features[x][j] - self.features[reference][j];
            }
            rhs[x] =
                (p[x].ln() - self.log_base[x]) - (p[reference].ln() - self.log_base[reference]);
        }
        linalg::solve_general(&rows, &rhs)
    }

    /// Hull interval of a 1-dimensional feature map.
    pub(crate) fn feature_interval(&self) -> Option<(f64, f64)> {
        if self.dim != 1 {
            return None;
        }
        let lo = self
            .features
            .iter()
            .map(|r| r[0])
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .features
            .iter()
            .map(|r| r[0])
            .fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }
}

/// Parse a family spec string: `bernoulli`, `categorical:K`, or
/// `custom:<path>` pointing at a JSON document.
pub fn parse_family_spec(spec: &str) -> Result<FiniteExpFamily> {
    let bad = |reason: &str| Error::InvalidSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    if spec == "bernoulli" {
        return Ok(FiniteExpFamily::bernoulli());
    }
    if let Some(rest) = spec.strip_prefix("categorical:") {
        let k: usize = rest
            .parse()
            .map_err(|_| bad("alphabet size must be an integer"))?;
        return FiniteExpFamily::categorical(k);
    }
    if let Some(path) = spec.strip_prefix("custom:") {
        return FiniteExpFamily::from_json_file(Path::new(path));
    }
    Err(bad("expected bernoulli | categorical:K | custom:<path>"))
}

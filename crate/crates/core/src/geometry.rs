//! Information-geometric objects of the Fisher metric in natural
//! coordinates: the Jeffreys density, Christoffel symbols, and the shift
//! vector field that measures the O(1/t) displacement from the ML estimate
//! to the center of the Jeffreys posterior.
//!
//! The shift vector is computed two independent ways: as the skewness
//! contraction `V^i = (1/4) I^{ij} I^{kl} T_{jkl}`, and from the log-det
//! derivative form `V = (1/2) (hess L)^{-1} d ln det(-I^{-1} hess L)` with
//! the covariant Hessian evaluated numerically around the ML point. For
//! exponential families the two agree and depend only on the ML estimate,
//! not on the realized sequence.

use crate::bayes::{self, Prior, QuadratureGrid};
use crate::error::{Error, Result};
use crate::family::{FiniteExpFamily, NaturalParam};
use crate::fit::{self, SufficientStatSummary};
use crate::linalg;

/// Christoffel symbols `G[i][j][k] = Gamma^i_{jk}` of the Fisher metric's
/// Levi-Civita connection in natural coordinates, symmetric in (j, k).
#[derive(Debug, Clone)]
pub struct ChristoffelSymbols(pub Vec<Vec<Vec<f64>>>);

/// The shift vector at a point, in natural coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftVector(pub Vec<f64>);

impl ShiftVector {
    pub fn max_abs_diff(&self, other: &ShiftVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Jeffreys density `sqrt(det I(theta))` w.r.t. Lebesgue measure in theta.
pub fn jeffreys_density(family: &FiniteExpFamily, theta: &NaturalParam) -> f64 {
    linalg::det_spd(&family.fisher_matrix(theta))
        .map(f64::sqrt)
        .unwrap_or(0.0)
}

/// `Gamma^i_{jk} = (1/2) I^{il} T_{jkl}` in natural coordinates.
pub fn christoffel(family: &FiniteExpFamily, theta: &NaturalParam) -> ChristoffelSymbols {
    let d = family.dim();
    let fisher = family.fisher_matrix(theta);
    let inv = linalg::invert_spd(&fisher).expect("Fisher matrix is positive-definite");
    let t = family.skewness_tensor(theta);
    let mut g = vec![vec![vec![0.0; d]; d]; d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += inv[i][l] * t.0[j][k][l];
                }
                g[i][j][k] = 0.5 * s;
            }
        }
    }
    ChristoffelSymbols(g)
}

/// Skewness-contraction form of the shift vector:
/// `V^i = (1/4) I^{ij} I^{kl} T_{jkl}`. Data-independent given the point.
pub fn shift_vector_skewness(family: &FiniteExpFamily, theta: &NaturalParam) -> ShiftVector {
    let d = family.dim();
    let fisher = family.fisher_matrix(theta);
    let inv = linalg::invert_spd(&fisher).expect("Fisher matrix is positive-definite");
    let t = family.skewness_tensor(theta);
    let mut v = vec![0.0; d];
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    s += inv[i][j] * inv[k][l] * t.0[j][k][l];
                }
            }
        }
        v[i] = 0.25 * s;
    }
    ShiftVector(v)
}

/// Covariant Hessian of the average log-likelihood at `theta`:
/// `(hess L)_{jk} = -I_{jk}(theta) - Gamma^i_{jk}(theta) (m - mu(theta))_i`
/// where `m` is the empirical feature mean. The coordinate Hessian is
/// `-I` identically; only the connection term carries the data.
fn covariant_hessian(family: &FiniteExpFamily, mean: &[f64], theta: &[f64]) -> Vec<Vec<f64>> {
    let d = family.dim();
    let tp = NaturalParam(theta.to_vec());
    let fisher = family.fisher_matrix(&tp);
    let mu = family.mean_params(&tp);
    let grad_l: Vec<f64> = mean.iter().zip(mu.as_slice()).map(|(m, u)| m - u).collect();
    let gamma = christoffel(family, &tp);
    let mut h = vec![vec![0.0; d]; d];
    for j in 0..d {
        for k in 0..d {
            let mut conn = 0.0;
            for i in 0..d {
                conn += gamma.0[i][j][k] * grad_l[i];
            }
            h[j][k] = -fisher[j][k] - conn;
        }
    }
    h
}

/// Determinant form of the shift vector, evaluated at the ML estimate of
/// the summary: the gradient of `ln det(-I^{-1} hess L)` is taken by
/// central finite differences in theta (step `1e-4 * max(1, |theta_i|)`,
/// with a Richardson pass when the half-step estimate disagrees).
pub fn shift_vector_detform(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
) -> Result<ShiftVector> {
    let fit = fit::ml_fit(family, summary)?;
    if !fit.interior {
        return Err(Error::BoundaryMl);
    }
    let mean = fit.mean.as_slice().to_vec();
    let theta = fit.theta.0.clone();
    let d = family.dim();
    let log_det_ratio = |th: &[f64]| -> f64 {
        let h = covariant_hessian(family, &mean, th);
        let tp = NaturalParam(th.to_vec());
        let fisher = family.fisher_matrix(&tp);
        let inv = linalg::invert_spd(&fisher).expect("Fisher matrix is positive-definite");
        // M = -I^{-1} hess L
        let mut m = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for c in 0..d {
                    s += inv[a][c] * h[c][b];
                }
                m[a][b] = -s;
            }
        }
        log_det_general(&m)
    };
    let mut grad = vec![0.0; d];
    let mut probe = theta.clone();
    for i in 0..d {
        let h = 1e-4 * theta[i].abs().max(1.0);
        let central = |step: f64, probe: &mut Vec<f64>| {
            probe[i] = theta[i] + step;
            let fp = log_det_ratio(probe);
            probe[i] = theta[i] - step;
            let fm = log_det_ratio(probe);
            probe[i] = theta[i];
            (fp - fm) / (2.0 * step)
        };
        let full = central(h, &mut probe);
        let half = central(0.5 * h, &mut probe);
        let agree = (full - half).abs() <= 1e-5 * half.abs().max(1.0);
        let g = if agree {
            half
        } else {
            // Richardson extrapolation of the two central estimates.
            (4.0 * half - full) / 3.0
        };
        if !g.is_finite() {
            return Err(Error::QuadratureUnsupported(
                "non-finite log-det derivative in shift field".into(),
            ));
        }
        grad[i] = g;
    }
    // V = (1/2) (hess L)^{-1} d ln det(-I^{-1} hess L); at the ML point the
    // covariant Hessian is exactly -I.
    let fisher = family.fisher_matrix(&fit.theta);
    let dir = linalg::solve_spd(&fisher, &grad)
        .ok_or_else(|| Error::InvalidFamily("singular Fisher matrix at ML".into()))?;
    Ok(ShiftVector(dir.iter().map(|v| -0.5 * v).collect()))
}

fn log_det_general(m: &[Vec<f64>]) -> f64 {
    // LU determinant; matrices here are small perturbations of identity.
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let (pivot, pval) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .fold((col, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pval <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    det.ln()
}

/// Posterior-center diagnostic for the Jeffreys prior.
#[derive(Debug, Clone)]
pub struct PosteriorShift {
    /// Riemannian center of the posterior minus the ML estimate. The
    /// center is the exp-map (Karcher) center computed from quadrature
    /// moments: `E[theta] + (1/2) Gamma : Cov`, the point whose tangent
    /// Gaussian best matches the posterior.
    pub measured_shift: Vec<f64>,
    /// Plain coordinate-wise posterior mean minus the ML estimate. Under
    /// the Jeffreys prior this is O(1/t^2) by the posterior-mean expansion
    /// (the curvature correction above is what carries the 1/t shift).
    pub coordinate_mean_shift: Vec<f64>,
    /// Predicted shift `V(theta_ML) / t` from the skewness form.
    pub predicted_shift: Vec<f64>,
}

impl PosteriorShift {
    pub fn residual_norm(&self) -> f64 {
        self.measured_shift
            .iter()
            .zip(&self.predicted_shift)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Compare the measured center of the Jeffreys posterior against the
/// predicted `V(theta_ML) / t` displacement. `measured_shift` uses the
/// posterior's Riemannian center of mass (quadrature mean plus the
/// exp-map curvature correction built from the posterior covariance);
/// the raw coordinate mean is also reported.
pub fn posterior_shift_check(
    family: &FiniteExpFamily,
    summary: &SufficientStatSummary,
    grid: &QuadratureGrid,
) -> Result<PosteriorShift> {
    let fit = fit::ml_fit(family, summary)?;
    if !fit.interior {
        return Err(Error::BoundaryMl);
    }
    let d = family.dim();
    let t = summary.t() as f64;
    let prior = Prior::jeffreys();
    let (post_mean, post_cov) = bayes::quad_posterior_theta_moments(family, summary, &prior, grid)?;
    let gamma = christoffel(family, &fit.theta);
    // Karcher center c solves E[log_c(theta)] = 0; to the order used here
    // c = E[theta] + (1/2) Gamma^m_{jk} Cov^{jk}.
    let mut center = post_mean.clone();
    for m in 0..d {
        let mut corr = 0.0;
        for j in 0..d {
            for k in 0..d {
                corr += gamma.0[m][j][k] * post_cov[j][k];
            }
        }
        center[m] += 0.5 * corr;
    }
    let v = shift_vector_skewness(family, &fit.theta);
    Ok(PosteriorShift {
        measured_shift: center
            .iter()
            .zip(&fit.theta.0)
            .map(|(c, t)| c - t)
            .collect(),
        coordinate_mean_shift: post_mean
            .iter()
            .zip(&fit.theta.0)
            .map(|(c, t)| c - t)
            .collect(),
        predicted_shift: v.0.iter().map(|vi| vi / t).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::SufficientStatSummary;
    use approx::assert_abs_diff_eq;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jeffreys_density_known_values() {
        let fam = FiniteExpFamily::bernoulli();
        assert_abs_diff_eq!(
            jeffreys_density(&fam, &NaturalParam(vec![0.0])),
            0.5,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            jeffreys_density(&fam, &NaturalParam(vec![(9.0_f64).ln()])),
            0.3,
            epsilon = 1e-14
        );
    }

    #[test]
    fn christoffel_known_values() {
        let fam = FiniteExpFamily::bernoulli();
        assert_abs_diff_eq!(
            christoffel(&fam, &NaturalParam(vec![0.0])).0[0][0][0],
            0.0,
            epsilon = 1e-14
        );
        // mu = 0.9: Gamma = T / (2 I) = -0.072 / 0.18 = -0.4
        assert_abs_diff_eq!(
            christoffel(&fam, &NaturalParam(vec![(9.0_f64).ln()])).0[0][0][0],
            -0.4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn christoffel_lower_symmetry_and_metric_compatibility() {
        // nabla I = 0: d_l I_jk = Gamma^m_lj I_mk + Gamma^m_lk I_jm,
        // with the left side from finite differences of the Fisher matrix.
        let cat = FiniteExpFamily::categorical(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = cat.dim();
        for _ in 0..10 {
            let theta: Vec<f64> = (0..d)
                .map(|_| 2.0 * (rng.next_u64() as f64 / u64::MAX as f64) - 1.0)
                .collect();
            let tp = NaturalParam(theta.clone());
            let gamma = christoffel(&cat, &tp);
            let fisher = cat.fisher_matrix(&tp);
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        assert_eq!(gamma.0[i][j][k], gamma.0[i][k][j]);
                    }
                }
            }
            for l in 0..d {
                let h = f64::EPSILON.powf(0.25) * theta[l].abs().max(1.0);
                let mut probe = theta.clone();
                probe[l] = theta[l] + h;
                let fp = cat.fisher_matrix(&NaturalParam(probe.clone()));
                probe[l] = theta[l] - h;
                let fm = cat.fisher_matrix(&NaturalParam(probe));
                for j in 0..d {
                    for k in 0..d {
                        let fd = (fp[j][k] - fm[j][k]) / (2.0 * h);
                        let mut conn = 0.0;
                        for m in 0..d {
                            conn +=
                                gamma.0[m][l][j] * fisher[m][k] + gamma.0[m][l][k] * fisher[j][m];
                        }
                        assert!(
                            (fd - conn).abs() <= 1e-8,
                            "metric compatibility residual {} at l={l} j={j} k={k}",
                            (fd - conn).abs()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn shift_vector_hand_values() {
        let fam = FiniteExpFamily::bernoulli();
        assert_abs_diff_eq!(
            shift_vector_skewness(&fam, &NaturalParam(vec![0.0])).0[0],
            0.0,
            epsilon = 1e-14
        );
        // mu = 0.9: V = (1/4)(1 - 2 mu)/(mu(1-mu)) = -0.8/0.36 = -2.2222...
        let v = shift_vector_skewness(&fam, &NaturalParam(vec![(9.0_f64).ln()]));
        assert_abs_diff_eq!(v.0[0], -0.8 / 0.36, epsilon = 1e-11);
        // pulls the estimate back toward the center
        assert!(v.0[0] < 0.0);
    }

    #[test]
    fn shift_vector_zero_at_uniform_categorical() {
        let cat = FiniteExpFamily::categorical(3).unwrap();
        let v = shift_vector_skewness(&cat, &NaturalParam::zeros(2));
        assert!(v.0.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn detform_matches_skewness_form() {
        let fam = FiniteExpFamily::bernoulli();
        let s = SufficientStatSummary::from_counts(&fam, vec![2, 18]).unwrap(); // mu = 0.9
        let det = shift_vector_detform(&fam, &s).unwrap();
        let fit = fit::ml_fit(&fam, &s).unwrap();
        let skew = shift_vector_skewness(&fam, &fit.theta);
        assert!(
            det.max_abs_diff(&skew) < 1e-5,
            "detform {det:?} vs {skew:?}"
        );

        let cat = FiniteExpFamily::categorical(3).unwrap();
        let s = SufficientStatSummary::from_counts(&cat, vec![5, 2, 9]).unwrap();
        let det = shift_vector_detform(&cat, &s).unwrap();
        let fit = fit::ml_fit(&cat, &s).unwrap();
        let skew = shift_vector_skewness(&cat, &fit.theta);
        assert!(det.max_abs_diff(&skew) < 1e-5);
    }

    #[test]
    fn detform_near_zero_at_symmetric_point() {
        let fam = FiniteExpFamily::bernoulli();
        let s = SufficientStatSummary::from_counts(&fam, vec![10, 10]).unwrap();
        let det = shift_vector_detform(&fam, &s).unwrap();
        assert!(det.0[0].abs() < 1e-6);
    }

    #[test]
    fn detform_is_data_independent_given_the_ml_point() {
        // Summaries with the same empirical ratio share theta_ML and V.
        let fam = FiniteExpFamily::bernoulli();
        let a = SufficientStatSummary::from_counts(&fam, vec![1, 3]).unwrap();
        let b = SufficientStatSummary::from_counts(&fam, vec![4, 12]).unwrap();
        let va = shift_vector_detform(&fam, &a).unwrap();
        let vb = shift_vector_detform(&fam, &b).unwrap();
        assert!(va.max_abs_diff(&vb) < 1e-6);
    }

    #[test]
    fn detform_boundary_errors() {
        let fam = FiniteExpFamily::bernoulli();
        let s = SufficientStatSummary::from_counts(&fam, vec![3, 0]).unwrap();
        assert!(matches!(
            shift_vector_detform(&fam, &s),
            Err(Error::BoundaryMl)
        ));
    }

    #[test]
    fn posterior_shift_symmetric_point_is_tiny() {
        let fam = FiniteExpFamily::bernoulli();
        let s = SufficientStatSummary::from_counts(&fam, vec![32, 32]).unwrap();
        let shift = posterior_shift_check(&fam, &s, &QuadratureGrid::default()).unwrap();
        assert!(shift.predicted_shift[0].abs() < 1e-12);
        assert!(shift.measured_shift[0].abs() < 1e-6);
    }

    #[test]
    fn posterior_center_tracks_predicted_shift_in_two_dims() {
        let cat = FiniteExpFamily::categorical(3).unwrap();
        let s = SufficientStatSummary::from_counts(&cat, vec![64, 32, 32]).unwrap();
        let shift = posterior_shift_check(&cat, &s, &QuadratureGrid::default()).unwrap();
        let predicted_norm = shift
            .predicted_shift
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!(predicted_norm > 1e-3);
        assert!(
            shift.residual_norm() < 0.05 * predicted_norm,
            "residual {} vs predicted {predicted_norm}",
            shift.residual_norm()
        );
    }

    #[test]
    fn posterior_center_tracks_predicted_shift() {
        // mu = 0.8 at t = 100: the Riemannian center sits at V/t up to
        // O(1/t^2), while the raw coordinate mean carries no 1/t shift.
        let fam = FiniteExpFamily::bernoulli();
        let s = SufficientStatSummary::from_counts(&fam, vec![20, 80]).unwrap();
        let shift = posterior_shift_check(&fam, &s, &QuadratureGrid::default()).unwrap();
        let predicted = shift.predicted_shift[0];
        assert_abs_diff_eq!(predicted, -0.25 * 0.6 / 0.16 / 100.0, epsilon = 1e-10);
        assert!(
            shift.residual_norm() < 0.02 * predicted.abs(),
            "residual {} vs predicted {predicted}",
            shift.residual_norm()
        );
        assert!(shift.coordinate_mean_shift[0].abs() < 0.02 * predicted.abs());
    }
}

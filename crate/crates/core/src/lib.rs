//! Sequential prediction on finite-alphabet exponential families.
//!
//! The crate builds the chain of predictors used in universal coding:
//! the maximum-likelihood plug-in, sequential normalized maximum
//! likelihood (SNML) and its weighted variant, exact Bayesian predictors
//! (conjugate closed forms and quadrature), and the equal-weight ML/SNML
//! mixture that tracks a chosen Bayesian predictor up to O(1/t^2). The
//! [`geometry`] module carries the Fisher-metric objects (Christoffel
//! symbols, the posterior shift field) and [`harness`] turns rate claims
//! into measured log-log slopes.
//!
//! ```
//! use expfam::{family::FiniteExpFamily, fit, predictor, bayes};
//!
//! let fam = FiniteExpFamily::bernoulli();
//! let s = fit::summarize(&fam, &[1, 1, 1, 0, 1, 1, 1, 0]).unwrap();
//! let snml = predictor::snml_predict(&fam, &s).unwrap();
//! // SNML on a coin is the add-one rule
//! assert!((snml.probs[1] - 7.0 / 10.0).abs() < 1e-12);
//! let kt = bayes::conjugate_predict(&fam, &s, &bayes::Prior::jeffreys()).unwrap();
//! assert!((kt.probs[1] - 6.5 / 9.0).abs() < 1e-15);
//! ```

// Index-matched loops mirror the tensor contractions they implement;
// iterator rewrites obscure which index contracts with which.
#![allow(clippy::needless_range_loop)]

pub mod bayes;
pub mod error;
pub mod family;
pub mod fit;
pub mod geometry;
pub mod harness;
mod linalg;
mod numdiff;
pub mod predictor;

pub use error::{Error, Result};
pub use family::{FiniteExpFamily, MeanParam, NaturalParam, SkewnessTensor};
pub use fit::{MLFit, SufficientStatSummary};
pub use predictor::{PredictiveDistribution, WeightFunction};

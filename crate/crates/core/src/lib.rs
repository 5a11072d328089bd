//! Weighted-average least squares (WALS) model averaging for negative
//! binomial (NB2) count regression, with the maximum-likelihood baseline,
//! proper scoring rules, a Monte-Carlo experiment engine and K-fold
//! cross-validated learning curves.

pub mod cv;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod ml;
pub mod quadrature;
pub mod scoring;
pub mod shrinkage;
pub mod sim;
pub mod special;
pub mod sum;
pub mod wals;

pub use cv::{learning_curve, make_folds, CvConfig, FoldPlan, LearningCurve};
pub use data::{Dataset, RestrictionMatrix};
pub use error::{Error, Result};
pub use kernels::{kernel_values, log_likelihood, nb2_log_pmf, nb2_variance, KernelValues, Link, Nb2Params};
pub use ml::{fit_ml, MlFit, MlOptions};
pub use scoring::{PredictiveDistribution, ScoreReport};
pub use shrinkage::{posterior_mean, PriorConstants, PriorSpec};
pub use wals::{fit_walsnb, fit_walsnb_with, predict_mean, WalsFit, WalsPrepared, WeightRule};

/// Library version, embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

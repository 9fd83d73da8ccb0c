//! Distributed lag regression with a random lasting time.
//!
//! The exposure's delayed effect on the response is switched off by a hidden
//! absorbing two-state chain running over backwards time, so the maximum lag
//! ("lasting time") is a day-specific random variable rather than a fixed
//! constant. The crate fits the resulting mixture-of-Gaussians regression by
//! marginal maximum likelihood, reports Hessian-based inference, extracts
//! empirical-Bayes posteriors of the daily lasting time, and provides the
//! conventional fixed-lag baselines for comparison.
//!
//! Modules:
//! * [`data`] — aligned daily datasets and period partitions.
//! * [`model`] — model variants, parameter vectors, flat packing.
//! * [`lasting`] — transition families and the lasting-time law.
//! * [`likelihood`] — marginal log-likelihood of all variants.
//! * [`optimize`] — box-constrained quasi-Newton minimizer.
//! * [`estimation`] — fitting, covariance, Wald tests, AIC.
//! * [`posterior`] — empirical-Bayes posterior of the daily lasting time.
//! * [`baselines`] — fixed-lag OLS, polynomial-lag, and monotone fits.
//! * [`simulation`] — forward simulator for recovery and calibration studies.
//! * [`preprocess`] — spline imputation, moving averages, soft weights.
//! * [`io`] — CSV/JSON schemas and run configuration.

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimation;
pub mod io;
pub mod lasting;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod posterior;
pub mod preprocess;
pub mod simulation;

pub use data::{PeriodPartition, TimeSeriesDataset};
pub use error::{Error, Result};
pub use estimation::{FitOptions, FitResult};
pub use lasting::{LastingLaw, TransitionFamily};
pub use likelihood::LikelihoodContext;
pub use model::{ModelSpec, ParamVector, SoftWeights, Variant};

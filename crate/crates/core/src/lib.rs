//! Censorship-aware demand prediction.
//!
//! Four learner families (OLS, ridge, lasso, random forest) are each wrapped
//! in a two-stage estimator: a classifier for the zero-sales indicator, a
//! probability threshold chosen on validation RMSE, and a regressor for the
//! continuous part. Members are stacked with nonnegative weights summing to
//! one; inference uses a bootstrap over SKUs.

pub mod censored;
pub mod datamodel;
pub mod dgp;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod test_support;

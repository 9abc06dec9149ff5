//! Random-forest estimation of first-order Quantile Oriented Sensitivity
//! Analysis (QOSA) indices.
//!
//! The index of an input `X_i` at a level `alpha` compares the mean pinball
//! loss of the output against its conditional quantile given `X_i` (the `O`
//! term) to the same loss against its unconditional quantile (the `P` term):
//! `S_i = 1 - O / P`. The `O` term is the hard part; this crate estimates it
//! with CART regression forests, either by plugging forest-weighted
//! conditional quantiles or by minimizing weighted empirical contrasts, with
//! bootstrap or original-sample weights. The critical `min_samples_leaf`
//! hyperparameter is tuned by K-fold cross-validation or by an out-of-bag
//! quantile error.
//!
//! Modules:
//! - [`dataset`]: CSV ingestion, synthetic toy models, fold plans.
//! - [`forest`]: CART regression trees, bootstrap multiplicities, weights.
//! - [`cond_dist`]: conditional CDF / quantile estimators and OOB variants.
//! - [`qosa`]: pinball contrast, P and O estimators, index assembly.
//! - [`tuning`]: leaf-size selection (cross-validation and OOB).
//! - [`oracle`]: analytical ground truth for the toy models.
//! - [`bench`]: replicated error studies against the oracles.

pub mod bench;
pub mod cond_dist;
pub mod dataset;
mod error;
pub mod forest;
pub mod oracle;
pub mod qosa;
pub mod seeding;
mod sweep;
pub mod tuning;

pub use error::{Error, Result};

//! Probabilistic longitudinal response prediction.
//!
//! A baseline classifier predicts the response at the first follow-up on many
//! stratified train/test splits. The test-set probabilities each patient
//! collects across splits are smoothed with a 1-D Gaussian KDE, sampled, and
//! thresholded into intermediate labels. A longitudinal classifier trained on
//! baseline features plus the true first-follow-up label is then evaluated on
//! the second follow-up with those sampled labels in place of the true ones.
//!
//! Modules, bottom-up:
//!
//! - [`tabular`]: cohort model, CSV I/O, stratified split plans, min-max scaling
//! - [`glm`]: L1-penalized, sample-weighted logistic regression
//! - [`resample`]: inverse-frequency weights and SMOTE
//! - [`density`]: 1-D Gaussian KDE with Silverman bandwidth
//! - [`calib`]: Brier score, log loss, isotonic calibration, reliability bins
//! - [`metrics`]: skill scores, across-split confidence intervals, PCA
//! - [`synthgen`]: synthetic longitudinal cohort generator
//! - [`pipeline`]: the full experiment, benchmark models and report data

pub mod calib;
pub mod density;
pub mod error;
pub mod glm;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod seed;
pub mod synthgen;
pub mod tabular;

pub use error::{Error, Result};

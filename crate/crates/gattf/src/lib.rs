//! Geographically aware transformer-based traffic forecasting.
//!
//! The pipeline turns a multivariate motorway sensor dataset into per-sensor
//! probabilistic forecasts in four stages:
//!
//! 1. [`ingest`] / [`synthgen`] — load (or synthesize) regularly sampled
//!    flow series with explicit missing-value masks.
//! 2. [`mi`] — discretize each series with Freedman–Diaconis binning and
//!    estimate pairwise mutual information, then rank covariate sensors for
//!    hard-to-predict targets.
//! 3. [`featurize`] / [`model`] / [`trainer`] — build context/prediction
//!    window instances (lags, calendar features, past-only covariate
//!    channels) and fit an encoder–decoder transformer with a probabilistic
//!    output head on a reverse-mode [`autodiff`] tape.
//! 4. [`metrics`] — score forecasts with MASE, sMAPE, MAE and RMSE, including
//!    the four-way covariate ablation driver in [`trainer`].

pub mod autodiff;
pub mod error;
pub mod featurize;
pub mod ingest;
pub mod metrics;
pub mod mi;
pub mod model;
pub mod synthgen;
pub mod timeseries;
pub mod trainer;

pub(crate) mod stats;

pub use error::{Error, Result};

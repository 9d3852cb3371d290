//! Probabilistic hourly load forecasting.
//!
//! Log-load is split into a slowly varying trend and a seasonal remainder.
//! The trend comes from a moving average of OLS residuals; the remainder is
//! modelled with one linear quantile regression per hour of day and decile.

pub mod calendar;
pub mod cli;
pub mod features;
pub mod ingest;
pub mod linalg;
pub mod model_io;
pub mod pipeline;
pub mod quantreg;
pub mod scoring;
pub mod stats;
pub mod synth;
pub mod trend;

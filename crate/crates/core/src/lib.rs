//! Long-horizon air-quality forecasting.
//!
//! Daily meteorological series go in, pollutant-concentration series come
//! out. The crate covers the whole path: CSV ingestion ([`ingest`]), daily
//! resampling with gap filling and windowing ([`preprocess`]), a small
//! reverse-mode differentiation engine ([`autodiff`]), the attention +
//! stacked LSTM network ([`model`]), Adam/MAE training ([`training`]) and
//! evaluation with permutation importance ([`analysis`]).
//!
//! Data-parallel inner loops (matrix products, batch prediction,
//! permutation repeats) use rayon when the `parallel` feature is enabled
//! (the default). Every parallel path keeps a fixed reduction order, so
//! results are bitwise identical with and without the feature.

pub mod analysis;
pub mod autodiff;
pub mod error;
pub mod ingest;
pub mod model;
pub mod parallel;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};

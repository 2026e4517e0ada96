//! Coopetitive soft-gating ensemble (CSGE) for combining power forecasts
//! from several weather-model and power-model pairs.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod forecasters;
pub mod gating;
pub mod io;
pub mod metrics;
pub mod neighbors;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod weighting;

pub use error::{CsgeError, Result};

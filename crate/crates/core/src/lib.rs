//! Sensor placement for indoor contaminant detection under uncertain airflow.
//!
//! Flow realizations become sparse Markov (transfer) operators, operators
//! become contaminant tracking matrices over a time horizon, and a greedy
//! set-cover search picks the sensor states that maximize probability-weighted
//! volumetric coverage.

pub mod config;
pub mod error;
pub mod flowfield;
pub mod grid;
pub mod oracle;
pub mod parallel;
pub mod pipeline;
pub mod placement;
pub mod sparse;
pub mod tracking;
pub mod transfer_operator;
pub mod uncertainty;

pub use error::{Error, Result};

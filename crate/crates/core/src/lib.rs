//! Precipitation nowcasting from radar rainfall and wind grids.
//!
//! The crate covers the whole pipeline: gridded data and unit handling
//! ([`grid`]), sequence datasets with week-alternating splits and
//! oversampling ([`dataset`]), a U-Net classifier with hand-written
//! gradients ([`nn`]), its training loop ([`training`]), persistence and
//! variational optical-flow baselines ([`optflow`]) and verification
//! scores ([`metrics`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod optflow;
pub mod training;

pub use error::{Error, ErrorCategory, Result};

//! Activation dumps, essay datasets, per-head probe sweeps, direction
//! analyses and report files, on top of `headprobe-core`.

pub mod analysis;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod store;
pub mod synth;
pub mod sweep;

pub use error::{Error, Result};

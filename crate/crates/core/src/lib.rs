//! Numerical core for probing per-attention-head activations.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std` (only `alloc` is required). File IO, dataset parsing and
//! the command line live in the `headprobe` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod directions;
pub mod error;
pub mod evaluate;
pub mod format;
pub mod grid;
pub mod linalg;
pub mod mlp;
pub mod pca;
pub mod probe;
pub mod qwk;
pub mod ridge;
pub mod scale;
pub mod split;

pub use error::{Error, Result};
pub use format::{DType, DumpHeader, HeadCoord, TokenMode};
pub use grid::{BestHead, HeadGrid, ProbeKind, Protocol};
pub use linalg::Matrix;
pub use mlp::{MlpFitConfig, MlpProbe};
pub use probe::{FitParams, Probe};
pub use ridge::RidgeProbe;
pub use scale::TraitRange;
pub use split::SplitPlan;

/// Default ridge regularization strength.
pub const DEFAULT_LAMBDA: f64 = 0.01;

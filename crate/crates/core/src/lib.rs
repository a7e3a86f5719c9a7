//! Partial-reconstruction masked image modeling at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f64` tensors and a reverse-mode tape.
//! - [`geometry`]: token grids, mask plans, random and furthest token
//!   throwing, the dispersion objective and its brute-force oracle.
//! - [`model`]: the encoder/decoder network with zero-fill spatial
//!   aggregation of thrown tokens.
//! - [`training`]: masked loss, AdamW, the toy training loop and the
//!   gradient-deviation experiment.
//! - [`cost`]: analytic FLOPs and activation-memory accounting.
//! - [`harness`]: configuration, synthetic data, PPM and checkpoint I/O,
//!   report writers and the command line front end.
//!
//! Independent work items (sampling sweeps, per-image gradients, throw
//! resamples) fan out through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and a plain loop otherwise. Results are
//! always collected in index order, so outputs do not depend on the
//! thread count.

pub mod cost;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

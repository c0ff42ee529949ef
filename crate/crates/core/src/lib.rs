//! Calendar-structured graph neural networks for user attribute prediction
//! from spatiotemporal behavior logs.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape, recurrent cells, Adam
//!   and a finite-difference gradient checker.
//! - [`data`]: CSV ingestion, per-user tripartite behavior graphs, calendar
//!   unit mapping and dataset splits.
//! - [`model`]: item/location embedding layers, the session → unit → pattern
//!   aggregation hierarchy, pattern fusion (concatenation or interactive
//!   attention) and the prediction head.
//! - [`train`]: the training protocol, ablation variants, checkpoints and
//!   evaluation.
//! - [`metrics`]: classification and regression metrics.
//! - [`synth`]: a synthetic log generator with planted spatiotemporal rules.

pub mod autodiff;
pub mod config;
pub mod data;
mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

//! Spectral diagnostics and regularizers for episodic meta-learning.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod maml;
pub mod mtr_linear;
pub mod oracle;
pub mod protonet;
pub mod regularizers;
pub mod rng;
pub mod stats;
pub mod tasks;

pub use error::{Error, Result};

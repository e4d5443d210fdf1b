//! Weakly-supervised anomaly detection by ordinal regression over randomly
//! paired instances.
//!
//! A handful of labeled anomalies `A` and a large, possibly contaminated,
//! unlabeled set `U` are turned into a balanced stream of (aa, au, uu) pairs
//! with ordinal targets. A two-stream network with shared feature weights
//! regresses those targets; at test time an instance is paired with sampled
//! members of `A` and `U`, and the averaged pair scores rank it.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod harness;
pub mod model;
pub mod ndcore;
pub mod pairgen;

pub use error::{Error, Result};

//! Joint multi-surface signed-distance atlas.
//!
//! A single decoder network maps `(point, latent code)` to signed distances for
//! several nested closed surfaces at once. The crate covers training the decoder
//! together with a bank of per-shape latent codes, completing unseen shapes from
//! sparse observations, the mesh geometry needed to produce training data and to
//! extract surfaces, and the reconstruction metrics used to evaluate results.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod completion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rng;
pub mod ssm;
pub mod training;

pub use error::{Error, Result};

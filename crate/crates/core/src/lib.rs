//! Closed-loop optimal transport for unsupervised temporal action segmentation.
//!
//! Three coupled transport problems (frame→action, segment→action and
//! refined-frame→action) produce soft pseudo-labels that self-train a small
//! encoder/decoder model. The crate also ships the evaluation protocol
//! (Hungarian matching, MoF, F1, mIoU), dataset formats and a synthetic data
//! generator.

pub mod cost;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod numeric;
pub mod ot;
pub mod pipeline;
pub mod swd;

pub use error::{ClotError, Result};
pub use numeric::{DenseMatrix, Rng};

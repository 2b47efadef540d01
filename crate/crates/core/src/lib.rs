//! Surrogate gradients for neural networks whose latent layer is a structured
//! argmax.
//!
//! The crate is organised bottom-up:
//!
//! - [`polytope`]: finite structure families, MAP decoding, Gibbs marginals,
//!   softmax/sparsemax and Euclidean projection onto the marginal polytope.
//! - [`estimators`]: surrogate gradient rules (SPIGOT, straight-through, the
//!   cross-entropy and exponentiated-gradient variants) plus the exact
//!   relaxed and minimum-risk baselines.
//! - [`model`]: an affine encoder, argmax node and one-hidden-layer decoder
//!   with hand-written backward passes.
//! - [`harness`]: synthetic tasks, the training loop and CSV metrics.
//! - [`oracle`] and [`check`]: brute-force and finite-difference references
//!   used by the test suites and the `check` subcommand.

pub mod check;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod plot;
pub mod polytope;

pub use error::{Error, Result};

//! Noise-robust few-shot meta-learning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense network with exact reverse-mode gradients and
//!   finite-difference oracles.
//! - [`episodes`]: datasets, N-way K-shot task sampling and symmetric label
//!   noise.
//! - [`manifold`]: manifold (Man) sampling, batched manifold (BatMan)
//!   sampling, the random-manifold and self-supervised ablation samplers.
//! - [`contrastive`]: the decoupled contrastive loss.
//! - [`meta`]: inner-loop adaptation and the Reptile, Eigen-Reptile,
//!   foMAML+ZO and iMAML outer updates.
//! - [`eval`]: zero-head meta-testing with CI95 aggregation.
//! - [`noise_analysis`]: probability that a manifold sample covers distinct
//!   ground-truth classes, analytic and simulated.
//! - [`experiment`]: configuration, sweeps, checkpoints and result files.

pub mod contrastive;
pub mod episodes;
mod error;
pub mod eval;
pub mod experiment;
pub mod manifold;
pub mod meta;
pub mod nn;
pub mod noise_analysis;
mod par;
pub mod seed;

pub use error::{Error, Result};

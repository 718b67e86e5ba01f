//! Training laboratory for plain (Elman) recurrent networks.
//!
//! The crate covers the full experimental loop for studying how regularizers
//! interact with recurrent dynamics:
//!
//! - [`model`]: parameters, forward pass and frame-level cross-entropy.
//! - [`grad`]: hand-derived backpropagation through time and a
//!   finite-difference oracle.
//! - [`init`]: sparse Gaussian initialization with spectral-radius control.
//! - [`perturb`]: weight noise (additive, multiplicative, feedforward),
//!   DropConnect, L1/L2 penalties and the noisy-activation moment analysis.
//! - [`optim`]: momentum, Nesterov and rmsprop-with-momentum.
//! - [`data`]: piano-roll corpora, chunking and a synthetic memory task.
//! - [`harness`]: training with spectral tracking, random search, sweeps
//!   and the single-unit loss-surface demo.
//! - [`cli`]: the `rnnlab` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod harness;
pub mod init;
pub mod model;
pub mod optim;
pub mod perturb;
pub mod rng;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use grad::Gradients;
pub use model::{ForwardTrace, HiddenActivation, RnnParams, SequenceBatch, Shapes};

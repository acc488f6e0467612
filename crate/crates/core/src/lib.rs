//! Verification-friendly training for ReLU networks.
//!
//! The crate bundles everything needed to train networks with the
//! neuron-behavior-consistency (NBC) regularizer and to measure how easy the
//! result is to verify:
//!
//! - [`tensor`], [`autograd`], [`network`], [`optim`]: dense f64 tensors, a
//!   reverse-mode tape, feed-forward networks and Adam.
//! - [`training`]: NBC score and loss, baseline losses (Madry, TRADES, RS),
//!   PGD and the phased training loop.
//! - [`bounds`]: interval and backward linear bound propagation, neuron
//!   stability and the Stable% metric.
//! - [`lp`]: a dense two-phase bounded-variable simplex solver.
//! - [`bab`]: a complete branch-and-bound local-robustness verifier.
//! - [`data`]: MNIST IDX files, synthetic 2-D datasets and seeded RNG streams.
//! - [`experiment`]: end-to-end metric runs and report rendering.

pub mod autograd;
pub mod bab;
pub mod bounds;
pub mod data;
mod error;
pub mod experiment;
pub mod lp;
pub mod network;
pub mod optim;
pub mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{Layer, Network};
pub use tensor::Tensor;

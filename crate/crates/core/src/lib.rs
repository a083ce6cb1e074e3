//! Channel-as-layer modelling of split edge inference.
//!
//! A wireless link between two halves of a dense network is treated as an
//! extra, non-learnable affine layer `f -> M f + B` whose weights are drawn
//! from the channel law. That turns the accuracy lost to the channel into a
//! generalization gap over weights, which the [`bound`] module bounds in
//! closed form and the [`trainer`] module minimizes with a diagonal-Gaussian
//! posterior.
//!
//! Module map:
//!
//! * [`nn`]: dense ReLU network with exact backpropagation.
//! * [`channel`]: identity, binary erasure and Rayleigh zero-forcing channels.
//! * [`bound`]: penalty terms, bound composition and their numerical oracles.
//! * [`trainer`]: ERM baseline and the channel-aware variational trainer.
//! * [`edge`]: population-risk and generalization-gap estimation under a channel.
//! * [`data`]: IDX (MNIST) ingestion and synthetic Gaussian blobs.
//! * [`checkpoint`]: binary model checkpoints.
//! * [`gradcheck`]: finite-difference checks of the analytic gradients.
//! * [`experiment`]: configs and the ERM vs channel-aware comparison table.
//! * [`cli`]: the `channel-pac` command line.

pub mod bound;
pub mod channel;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod edge;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod nn;
pub mod quad;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

//! Split-latent variational autoencoder for neural population activity.
//!
//! The latent code is divided into a *content* block, aligned across two
//! augmented views of the same sample, and a *style* block regularized
//! toward an isotropic Gaussian. Content blocks are exchanged between views
//! before decoding (block swap), which pushes view-invariant information
//! into content and view-specific variation into style.
//!
//! Besides the model the crate contains the comparison baselines, a
//! synthetic benchmark with known content/style factors, dataset I/O, and
//! the evaluation metrics used to compare representations.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod matrix;
pub mod models;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
pub use matrix::Matrix;
pub use rng::RngState;

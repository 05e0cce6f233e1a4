//! Configuration-driven experiment runner for the split-latent VAE.
//!
//! Every command reads one JSON [`config::ExperimentConfig`], writes its
//! outputs to a directory and finishes with a [`manifest::RunManifest`]
//! listing a SHA-256 digest of each file.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;

pub use error::{CliError, CliResult};

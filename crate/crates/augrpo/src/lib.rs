//! File formats and command-line front end for `augrpo-core`: PNG images,
//! pair manifests, dataset directories, policy checkpoints and metrics
//! streams.

pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod jsonl;
pub mod manifest;
pub mod png;
pub mod store;

pub use error::{CliError, CliResult};

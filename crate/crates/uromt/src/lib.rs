//! File formats, configuration, run manifests and the `uromt` command line
//! on top of [`uromt_core`].
//!
//! - [`volume`]: text header + raw payload volumes.
//! - [`config`]: TOML run configuration and the named presets.
//! - [`manifest`]: SHA-256 digests of every input and output of a run.
//! - [`export`]: CSV and legacy VTK polyline writers.
//! - [`pipeline`]: `synth`, `solve`, `post` and `metrics` as library calls.
//! - [`cli`]: argument parsing and exit codes.

pub mod cli;
pub mod config;
mod error;
pub mod export;
pub mod manifest;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};

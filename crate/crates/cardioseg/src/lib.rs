//! File formats, checkpoints and command implementations around
//! [`cardioseg_core`].
//!
//! - [`io`]: PNG images and masks, TOML manifests
//! - [`checkpoint`]: versioned JSON parameter containers
//! - [`config`]: the run configuration shared by all commands
//! - [`commands`]: generate-phantoms, train, predict, ctr, evaluate
//! - [`overlay`], [`report`]: human-facing outputs

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod overlay;
pub mod report;

pub use cardioseg_core as core;
pub use error::{Error, Result};

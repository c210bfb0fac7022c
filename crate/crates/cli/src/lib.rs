//! File formats, checkpoints and the command-line front end of
//! `cifrenet-core`.
//!
//! - [`container`]: the little-endian named-tensor container.
//! - [`pnm`]: binary PPM/PGM images.
//! - [`config`]: `key = value` run configuration.
//! - [`checkpoint`]: network weights plus configuration in one container.
//! - [`dataset`]: directories of image/label pairs.
//! - [`commands`]: argument parsing and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod fsio;
pub mod pnm;

pub use error::{Error, Result};

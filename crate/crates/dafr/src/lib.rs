//! Files, formats and the command layer for the DAFR super-resolution
//! engine: PNG IO, the bit-exact checkpoint format, TOML training plans
//! and manifests, CSV training reports, and the subcommand
//! implementations the `dafr` binary dispatches to.
//!
//! The numeric core lives in `dafr-core`; everything here is plumbing
//! around it. The split keeps the engine `no_std`-clean while this crate
//! owns every filesystem and terminal concern.

pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod io;
pub mod plan;
pub mod report;

pub use error::{CliError, Result};

//! Core engine for the DAFR ("Deep Artifact-Free Residual") single-image
//! super-resolution network: tensors, layers with hand-derived backward
//! passes, the network builders, the two-step training procedure, and the
//! bicubic/YCbCr/PSNR imaging kit the protocol depends on.
//!
//! The crate is `no_std` + `alloc` so the numeric core can run anywhere;
//! file formats, PNG handling and the CLI live in the companion `dafr`
//! crate.
//!
//! Everything here is deterministic: all randomness flows from a single
//! user-supplied seed through ChaCha8, and every loop runs in a fixed
//! order on a single thread. Two runs with the same seed produce
//! bit-identical weights.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

use alloc::string::String;
use core::fmt;

pub mod imaging;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

#[cfg(any(test, feature = "reference"))]
pub mod reference;

pub use tensor::{Scalar, Shape, Tensor};

/// Errors surfaced by the numeric core.
///
/// Everything user-facing (file IO, CLI argument problems) belongs to the
/// companion crate; this enum only covers contract violations of the
/// in-memory API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A tensor shape would overflow `usize` when flattened.
    SizeOverflow,
    /// Operands disagree on shape (or a buffer disagrees with its shape).
    ShapeMismatch(String),
    /// A parameter value is outside its documented domain.
    InvalidArgument(String),
    /// Two models (or a model and a checkpoint) disagree on configuration.
    ConfigMismatch(String),
    /// An optimizer step was requested before any backward pass.
    MissingGradients,
    /// A training set resolved to zero usable patches.
    EmptyDataset,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SizeOverflow => write!(f, "tensor size overflows usize"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ConfigMismatch(msg) => write!(f, "config mismatch: {msg}"),
            Error::MissingGradients => {
                write!(f, "optimizer step requested but no gradients are populated")
            }
            Error::EmptyDataset => write!(f, "dataset produced no training patches"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

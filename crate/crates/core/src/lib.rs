//! Routed-window image restoration network on a small reverse-mode
//! autodiff core.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO; file formats,
//! image decoding and the command line live in the `rwf` companion crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod fft;
pub mod gradcheck;
mod kernels;
pub mod network;
pub mod objective;
pub mod ops;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod tensor;
pub mod train;
pub mod windowing;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

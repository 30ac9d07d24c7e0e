//! File formats, image IO, training runs, attention analysis, verification
//! and the `rwf` command line, on top of [`rwf_core`].

pub mod analyze;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod report;
pub mod run;
pub mod synth;
pub mod verify;

pub use error::{Result, RwfError};
pub use rwf_core;

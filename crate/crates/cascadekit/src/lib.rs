//! File formats, reports and the command-line driver for calibrated model
//! cascades. The algorithms live in [`cascadekit_core`].

pub mod cli;
pub mod demo;
pub mod error;
pub mod files;
pub mod jsonl;
pub mod manifest;

pub use error::{Error, Result};

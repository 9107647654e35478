//! Calibrated model cascades over precomputed logits.
//!
//! A cascade runs an ordered ladder of models, cheapest first, and stops at the
//! first model whose (temperature-scaled) confidence clears a single global
//! threshold. This crate holds the pure algorithmic half of the toolkit:
//!
//! - [`dataset`]: record types, ladders and alignment of multi-model dumps.
//! - [`calibration`]: confidence scoring, temperature fitting, the
//!   logit-normalized loss and generation-mode sequence confidence.
//! - [`cascade`]: per-example routing and cost accounting.
//! - [`thresholds`]: threshold enumeration, speed-up solving and sweeps.
//! - [`metrics`]: ECE, reliability bins and per-group accuracy tables.
//! - [`toytrain`]: a small seeded trainer that produces shifted synthetic
//!   benchmarks and logits dumps.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! All floating-point transcendental functions go through `libm`, so results
//! are bit-identical regardless of the platform's `std` math library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod calibration;
pub mod cascade;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod thresholds;
pub mod toytrain;

mod num;

pub use calibration::{LogitNormParams, SequenceConfidence, Temperature, TemperatureSet};
pub use cascade::{CascadeDecision, Prediction, RouteMode, RunSummary};
pub use dataset::{
    AlignedDataset, AlignedExample, GenerationRecord, Header, LogitsRecord, Mode, ModelLadder,
    ModelProfile, Record, StageOutput,
};
pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

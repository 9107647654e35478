use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Mode;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // dataset
    #[error("record ({example_id}, {model_id}): {reason}")]
    InvalidRecord {
        example_id: String,
        model_id: String,
        reason: String,
    },
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error("model '{0}' is not part of the ladder")]
    UnknownModel(String),
    #[error("duplicate record for example '{example_id}' and model '{model_id}'")]
    DuplicateRecord { example_id: String, model_id: String },
    #[error("missing (example, stage) pairs: {}", format_pairs(.0))]
    MissingStages(Vec<(String, usize)>),
    #[error("example '{example_id}' has inconsistent {field} across stages")]
    InconsistentExample {
        example_id: String,
        field: &'static str,
    },
    #[error("mode mismatch: expected {expected}, found {found}")]
    ModeMismatch { expected: Mode, found: Mode },
    #[error("dataset is empty")]
    EmptyDataset,

    // calibration
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("logits have zero norm; the normalized direction is undefined")]
    ZeroNormLogits,
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("token id {token_id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token_id: u32, vocab_size: usize },
    #[error("class token id {0} used by more than one class")]
    DuplicateClassToken(u32),
    #[error("probability must lie in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("relevance {value} at token {index} outside [0, 1]")]
    InvalidRelevance { index: usize, value: f64 },
    #[error("similarity plug-in '{plugin}' returned {value} for token {index}, outside [0, 1]")]
    InvalidSimilarity {
        plugin: &'static str,
        index: usize,
        value: f64,
    },
    #[error("generated sequence is empty")]
    EmptySequence,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // cascade
    #[error("no temperature for model '{0}'")]
    MissingTemperature(String),
    #[error("example '{example_id}': {source}")]
    Example {
        example_id: String,
        source: Box<Error>,
    },

    // metrics
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("unknown group '{0}'")]
    UnknownGroup(String),
    #[error("calibration error is only defined for classification runs")]
    NotClassification,

    // toytrain
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl Error {
    /// Name of the module that raised the error, for attributed messages.
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidRecord { .. }
            | InvalidLadder(_)
            | UnknownModel(_)
            | DuplicateRecord { .. }
            | MissingStages(_)
            | InconsistentExample { .. }
            | ModeMismatch { .. }
            | EmptyDataset => "datamodel",
            NonFiniteLogits
            | InvalidTemperature(_)
            | ZeroNormLogits
            | InvalidLabel { .. }
            | TooFewClasses(_)
            | EmptyValidationSet
            | TokenOutOfRange { .. }
            | DuplicateClassToken(_)
            | InvalidProbability(_)
            | LengthMismatch { .. }
            | InvalidRelevance { .. }
            | InvalidSimilarity { .. }
            | EmptySequence
            | InvalidParameter(_) => "calibration",
            MissingTemperature(_) => "cascade",
            Example { source, .. } => source.module(),
            InvalidConfidence(_) | UnknownGroup(_) | NotClassification => "metrics",
            InvalidConfig(_) | NonFiniteLoss { .. } | DimensionMismatch { .. } => "toytrain",
        }
    }

    pub(crate) fn for_example(self, example_id: &str) -> Self {
        Error::Example {
            example_id: example_id.into(),
            source: Box::new(self),
        }
    }
}

fn format_pairs(pairs: &[(String, usize)]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, (id, stage)) in pairs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "({id}, {stage})");
    }
    out
}

//! Records, model ladders and alignment of multi-model dumps.
//!
//! A dump holds one record per (example, model). [`align`] groups those
//! records by example and orders them by ladder stage, producing an
//! [`AlignedDataset`] in which every example has an output for every stage.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classification,
    Generation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Classification => "classification",
            Mode::Generation => "generation",
        })
    }
}

/// First line of every dump. Declares the mode and, for classification, `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub mode: Mode,
}

impl Header {
    pub fn classification(num_classes: usize) -> Self {
        Header {
            num_classes: Some(num_classes),
            mode: Mode::Classification,
        }
    }

    pub fn generation() -> Self {
        Header {
            num_classes: None,
            mode: Mode::Generation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.num_classes) {
            (Mode::Classification, None) => Err(Error::InvalidParameter(
                "classification header must declare num_classes".into(),
            )),
            (Mode::Classification, Some(q)) if q < 2 => Err(Error::TooFewClasses(q)),
            _ => Ok(()),
        }
    }
}

/// One example's logits from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub example_id: String,
    pub model_id: String,
    pub logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl LogitsRecord {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidRecord {
            example_id: self.example_id.clone(),
            model_id: self.model_id.clone(),
            reason,
        };
        if num_classes < 2 {
            return Err(Error::TooFewClasses(num_classes));
        }
        if self.logits.len() != num_classes {
            return Err(fail(format!(
                "logits length {} does not match num_classes {}",
                self.logits.len(),
                num_classes
            )));
        }
        if let Some(i) = self.logits.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("logit {i} is not finite")));
        }
        if let Some(label) = self.label {
            if label >= num_classes {
                return Err(fail(format!(
                    "label {label} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(())
    }
}

/// Token-level output of one generated sequence from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub example_id: String,
    pub model_id: String,
    pub token_ids: Vec<u32>,
    pub token_probs: Vec<f64>,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    pub group: String,
}

impl GenerationRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidRecord {
            example_id: self.example_id.clone(),
            model_id: self.model_id.clone(),
            reason,
        };
        if self.token_ids.len() != self.token_probs.len() {
            return Err(fail(format!(
                "{} token ids but {} token probabilities",
                self.token_ids.len(),
                self.token_probs.len()
            )));
        }
        if self.token_ids.is_empty() {
            return Err(fail("empty generation".into()));
        }
        if let Some((i, p)) = self
            .token_probs
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0 && p <= 1.0))
        {
            return Err(fail(format!("token probability {p} at {i} outside (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Logits(LogitsRecord),
    Generation(GenerationRecord),
}

impl Record {
    pub fn example_id(&self) -> &str {
        match self {
            Record::Logits(r) => &r.example_id,
            Record::Generation(r) => &r.example_id,
        }
    }

    pub fn model_id(&self) -> &str {
        match self {
            Record::Logits(r) => &r.model_id,
            Record::Generation(r) => &r.model_id,
        }
    }

    pub fn group(&self) -> &str {
        match self {
            Record::Logits(r) => &r.group,
            Record::Generation(r) => &r.group,
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Record::Logits(_) => Mode::Classification,
            Record::Generation(_) => Mode::Generation,
        }
    }

    /// Checks record invariants against a dump header.
    pub fn validate(&self, header: &Header) -> Result<()> {
        if self.mode() != header.mode {
            return Err(Error::ModeMismatch {
                expected: header.mode,
                found: self.mode(),
            });
        }
        match self {
            Record::Logits(r) => r.validate(header.num_classes.unwrap_or(0)),
            Record::Generation(r) => r.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub stage_index: usize,
    /// FLOPs per example, or any other consistent cost unit.
    pub cost_units: f64,
}

#[derive(Deserialize)]
struct LadderFile {
    #[serde(default)]
    num_classes: Option<usize>,
    models: Vec<ModelProfile>,
}

/// Models ordered by ascending cost. Stage `i` is `profiles()[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LadderFile")]
pub struct ModelLadder {
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    #[serde(rename = "models")]
    profiles: Vec<ModelProfile>,
}

impl TryFrom<LadderFile> for ModelLadder {
    type Error = Error;

    fn try_from(file: LadderFile) -> Result<Self> {
        ModelLadder::new(file.models, file.num_classes)
    }
}

impl ModelLadder {
    /// Builds a ladder; profiles may arrive in any order.
    pub fn new(mut profiles: Vec<ModelProfile>, num_classes: Option<usize>) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidLadder("ladder has no models".into()));
        }
        if let Some(q) = num_classes {
            if q < 2 {
                return Err(Error::TooFewClasses(q));
            }
        }
        profiles.sort_by_key(|p| p.stage_index);
        for (i, p) in profiles.iter().enumerate() {
            if p.stage_index != i {
                return Err(Error::InvalidLadder(format!(
                    "stage indices must be 0..{} without gaps; found {} at position {i}",
                    profiles.len(),
                    p.stage_index
                )));
            }
            if !(p.cost_units > 0.0 && p.cost_units.is_finite()) {
                return Err(Error::InvalidLadder(format!(
                    "model '{}' has non-positive cost {}",
                    p.model_id, p.cost_units
                )));
            }
            if i > 0 && p.cost_units <= profiles[i - 1].cost_units {
                return Err(Error::InvalidLadder(format!(
                    "cost must strictly increase with stage; '{}' costs {} after {}",
                    p.model_id,
                    p.cost_units,
                    profiles[i - 1].cost_units
                )));
            }
            if profiles[..i].iter().any(|q| q.model_id == p.model_id) {
                return Err(Error::InvalidLadder(format!(
                    "model '{}' appears twice",
                    p.model_id
                )));
            }
        }
        Ok(ModelLadder {
            num_classes,
            profiles,
        })
    }

    /// Convenience constructor naming models `m0`, `m1`, ...
    pub fn from_costs(costs: &[f64], num_classes: Option<usize>) -> Result<Self> {
        let profiles = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| ModelProfile {
                model_id: format!("m{i}"),
                stage_index: i,
                cost_units: c,
            })
            .collect();
        ModelLadder::new(profiles, num_classes)
    }

    pub fn profiles(&self) -> &[ModelProfile] {
        &self.profiles
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn cost(&self, stage: usize) -> f64 {
        self.profiles[stage].cost_units
    }

    /// Cost of always running the largest model.
    pub fn largest_cost(&self) -> f64 {
        self.profiles[self.profiles.len() - 1].cost_units
    }

    pub fn stage_of(&self, model_id: &str) -> Option<usize> {
        self.profiles.iter().position(|p| p.model_id == model_id)
    }

    pub fn model_id(&self, stage: usize) -> &str {
        &self.profiles[stage].model_id
    }
}

/// What one ladder stage produced for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageOutput {
    Logits(Vec<f64>),
    Generation {
        token_ids: Vec<u32>,
        token_probs: Vec<f64>,
        answer_text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedExample {
    pub example_id: String,
    pub group: String,
    pub label: Option<usize>,
    pub reference_answer: Option<String>,
    /// Indexed by stage.
    pub outputs: Vec<StageOutput>,
}

/// Examples sorted lexicographically by id, each with one output per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedDataset {
    pub mode: Mode,
    pub num_classes: Option<usize>,
    pub num_stages: usize,
    pub examples: Vec<AlignedExample>,
}

impl AlignedDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct group tags in lexicographic order.
    pub fn groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self.examples.iter().map(|e| e.group.clone()).collect();
        groups.sort();
        groups.dedup();
        groups
    }

    /// Keeps only the examples whose group is listed.
    pub fn filter_groups(&self, groups: &[&str]) -> Result<AlignedDataset> {
        let present = self.groups();
        if let Some(missing) = groups.iter().find(|g| !present.iter().any(|p| p == *g)) {
            return Err(Error::UnknownGroup((*missing).into()));
        }
        Ok(AlignedDataset {
            examples: self
                .examples
                .iter()
                .filter(|e| groups.contains(&e.group.as_str()))
                .cloned()
                .collect(),
            ..self.clone_empty()
        })
    }

    fn clone_empty(&self) -> AlignedDataset {
        AlignedDataset {
            mode: self.mode,
            num_classes: self.num_classes,
            num_stages: self.num_stages,
            examples: Vec::new(),
        }
    }
}

struct Partial {
    group: String,
    label: Option<usize>,
    reference_answer: Option<String>,
    outputs: Vec<Option<StageOutput>>,
}

/// Groups `records` by example and orders them by ladder stage.
///
/// The result does not depend on the order of `records`.
pub fn align(records: &[Record], ladder: &ModelLadder) -> Result<AlignedDataset> {
    let first = records.first().ok_or(Error::EmptyDataset)?;
    let mode = first.mode();
    let num_stages = ladder.len();
    // Without a declared q on the ladder, every record must agree with the first.
    let num_classes = match first {
        Record::Logits(r) => Some(ladder.num_classes().unwrap_or(r.logits.len())),
        Record::Generation(_) => None,
    };
    let mut by_example: BTreeMap<&str, Partial> = BTreeMap::new();

    for record in records {
        if record.mode() != mode {
            return Err(Error::ModeMismatch {
                expected: mode,
                found: record.mode(),
            });
        }
        let stage = ladder
            .stage_of(record.model_id())
            .ok_or_else(|| Error::UnknownModel(record.model_id().into()))?;
        let (label, reference, output) = match record {
            Record::Logits(r) => {
                r.validate(num_classes.unwrap_or(0))?;
                (r.label, None, StageOutput::Logits(r.logits.clone()))
            }
            Record::Generation(r) => {
                r.validate()?;
                (
                    None,
                    r.reference_answer.clone(),
                    StageOutput::Generation {
                        token_ids: r.token_ids.clone(),
                        token_probs: r.token_probs.clone(),
                        answer_text: r.answer_text.clone(),
                    },
                )
            }
        };
        let entry = by_example
            .entry(record.example_id())
            .or_insert_with(|| Partial {
                group: record.group().into(),
                label,
                reference_answer: reference.clone(),
                outputs: alloc::vec![None; num_stages],
            });
        let inconsistent = |field| Error::InconsistentExample {
            example_id: record.example_id().into(),
            field,
        };
        if entry.group != record.group() {
            return Err(inconsistent("group"));
        }
        if entry.label != label {
            return Err(inconsistent("label"));
        }
        if entry.reference_answer != reference {
            return Err(inconsistent("reference_answer"));
        }
        if entry.outputs[stage].is_some() {
            return Err(Error::DuplicateRecord {
                example_id: record.example_id().into(),
                model_id: record.model_id().into(),
            });
        }
        entry.outputs[stage] = Some(output);
    }

    let mut missing = Vec::new();
    for (id, partial) in &by_example {
        for (stage, out) in partial.outputs.iter().enumerate() {
            if out.is_none() {
                missing.push((String::from(*id), stage));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingStages(missing));
    }

    let examples = by_example
        .into_iter()
        .map(|(id, p)| AlignedExample {
            example_id: id.into(),
            group: p.group,
            label: p.label,
            reference_answer: p.reference_answer,
            outputs: p.outputs.into_iter().map(|o| o.expect("checked")).collect(),
        })
        .collect();

    Ok(AlignedDataset {
        mode,
        num_classes,
        num_stages,
        examples,
    })
}

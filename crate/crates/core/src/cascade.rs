//! Routing examples through a model ladder.
//!
//! Stages run in ascending cost order. A classification example exits at the
//! first stage whose temperature-scaled max probability is strictly greater
//! than the threshold; a generation example exits at the first stage whose
//! sequence entropy is strictly below it. The last stage always answers.
//! Cost accumulates over every visited stage.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::calibration::{self, Similarity, TemperatureSet};
use crate::dataset::{AlignedDataset, AlignedExample, Mode, ModelLadder, StageOutput};
use crate::error::{Error, Result};
use crate::num;

/// How stage outputs turn into confidence scores.
#[derive(Clone, Copy)]
pub enum RouteMode<'a> {
    Classification,
    /// Sequence entropy with relevances from the given similarity plug-in.
    Generation(&'a dyn Similarity),
}

impl fmt::Debug for RouteMode<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteMode::Classification => f.write_str("Classification"),
            RouteMode::Generation(s) => write!(f, "Generation({})", s.name()),
        }
    }
}

impl RouteMode<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            RouteMode::Classification => Mode::Classification,
            RouteMode::Generation(_) => Mode::Generation,
        }
    }

    /// Whether a stage with this score may answer at threshold `lambda`.
    pub fn exits(&self, score: f64, lambda: f64) -> bool {
        match self {
            RouteMode::Classification => score > lambda,
            RouteMode::Generation(_) => score < lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Answer(String),
}

/// Routing trace of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeDecision {
    pub example_id: String,
    pub group: String,
    pub stages_visited: Vec<usize>,
    /// Max probability (classification) or sequence entropy (generation).
    pub per_stage_confidence: Vec<f64>,
    pub chosen_stage: usize,
    pub prediction: Prediction,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

/// Confidence score and prediction of one stage for one example.
pub fn score_stage(
    output: &StageOutput,
    model_id: &str,
    temperatures: &TemperatureSet,
    mode: RouteMode<'_>,
) -> Result<(f64, Prediction)> {
    match (mode, output) {
        (RouteMode::Classification, StageOutput::Logits(logits)) => {
            let t = temperatures.get(model_id)?;
            let (c, class) = calibration::confidence(logits, t)?;
            Ok((c, Prediction::Class(class)))
        }
        (
            RouteMode::Generation(sim),
            StageOutput::Generation {
                token_ids,
                token_probs,
                answer_text,
            },
        ) => {
            let relevances = calibration::relevance_scores(token_ids, sim)?;
            let seq = calibration::sequence_confidence(token_probs, &relevances)?;
            Ok((seq.entropy, Prediction::Answer(answer_text.clone())))
        }
        (mode, StageOutput::Logits(_)) => Err(Error::ModeMismatch {
            expected: mode.mode(),
            found: Mode::Classification,
        }),
        (mode, StageOutput::Generation { .. }) => Err(Error::ModeMismatch {
            expected: mode.mode(),
            found: Mode::Generation,
        }),
    }
}

fn normalize_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact match after trimming and lowercasing; numeric strings also compare
/// by parsed value.
pub fn answers_match(answer: &str, reference: &str) -> bool {
    let (a, r) = (normalize_answer(answer), normalize_answer(reference));
    if a == r {
        return true;
    }
    matches!((a.parse::<f64>(), r.parse::<f64>()), (Ok(x), Ok(y)) if x == y)
}

fn correctness(example: &AlignedExample, prediction: &Prediction) -> Option<bool> {
    match prediction {
        Prediction::Class(c) => example.label.map(|y| y == *c),
        Prediction::Answer(a) => example
            .reference_answer
            .as_deref()
            .map(|r| answers_match(a, r)),
    }
}

fn check_shape(example: &AlignedExample, ladder: &ModelLadder) -> Result<()> {
    if example.outputs.len() != ladder.len() {
        return Err(Error::LengthMismatch {
            expected: ladder.len(),
            found: example.outputs.len(),
        });
    }
    Ok(())
}

/// Routes one example. Only visited stages are scored.
pub fn route_example(
    example: &AlignedExample,
    ladder: &ModelLadder,
    temperatures: &TemperatureSet,
    lambda: f64,
    mode: RouteMode<'_>,
) -> Result<CascadeDecision> {
    check_shape(example, ladder)?;
    let last = ladder.len() - 1;
    let mut stages_visited = Vec::new();
    let mut per_stage_confidence = Vec::new();
    let mut cost = 0.0;
    for stage in 0..=last {
        let (score, prediction) =
            score_stage(&example.outputs[stage], ladder.model_id(stage), temperatures, mode)?;
        stages_visited.push(stage);
        per_stage_confidence.push(score);
        cost += ladder.cost(stage);
        if stage == last || mode.exits(score, lambda) {
            return Ok(CascadeDecision {
                example_id: example.example_id.clone(),
                group: example.group.clone(),
                stages_visited,
                per_stage_confidence,
                chosen_stage: stage,
                correct: correctness(example, &prediction),
                prediction,
                cost,
            });
        }
    }
    unreachable!("the last stage always exits")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n: usize,
    pub mean_cost: f64,
    pub speedup: f64,
    pub accuracy: Option<f64>,
}

/// Outcome of routing a whole dataset at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub lambda: f64,
    pub n: usize,
    pub mean_cost: f64,
    /// Largest model's cost divided by `mean_cost`.
    pub speedup: f64,
    /// Over examples that carry a label or reference answer.
    pub accuracy: Option<f64>,
    pub exit_histogram: Vec<usize>,
    pub per_group: Vec<GroupSummary>,
    pub decisions: Vec<CascadeDecision>,
}

fn accuracy_of<'a>(decisions: impl Iterator<Item = &'a CascadeDecision>) -> Option<f64> {
    num::mean(decisions.filter_map(|d| d.correct).map(|c| if c { 1.0 } else { 0.0 }))
}

pub fn summarize(
    mode: Mode,
    lambda: f64,
    ladder: &ModelLadder,
    decisions: Vec<CascadeDecision>,
) -> Result<RunSummary> {
    if decisions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let largest = ladder.largest_cost();
    let mean_cost = num::mean(decisions.iter().map(|d| d.cost)).expect("non-empty");
    let mut exit_histogram = alloc::vec![0; ladder.len()];
    for d in &decisions {
        exit_histogram[d.chosen_stage] += 1;
    }
    let mut groups: Vec<&str> = decisions.iter().map(|d| d.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    let per_group = groups
        .into_iter()
        .map(|g| {
            let members = || decisions.iter().filter(move |d| d.group == g);
            let mean_cost = num::mean(members().map(|d| d.cost)).expect("non-empty");
            GroupSummary {
                group: g.into(),
                n: members().count(),
                mean_cost,
                speedup: largest / mean_cost,
                accuracy: accuracy_of(members()),
            }
        })
        .collect();
    Ok(RunSummary {
        mode,
        lambda,
        n: decisions.len(),
        mean_cost,
        speedup: largest / mean_cost,
        accuracy: accuracy_of(decisions.iter()),
        exit_histogram,
        per_group,
        decisions,
    })
}

/// Routes every example in dataset order.
pub fn route_dataset(
    dataset: &AlignedDataset,
    ladder: &ModelLadder,
    temperatures: &TemperatureSet,
    lambda: f64,
    mode: RouteMode<'_>,
) -> Result<RunSummary> {
    if dataset.mode != mode.mode() {
        return Err(Error::ModeMismatch {
            expected: mode.mode(),
            found: dataset.mode,
        });
    }
    let decisions = dataset
        .examples
        .iter()
        .map(|e| {
            route_example(e, ladder, temperatures, lambda, mode)
                .map_err(|err| err.for_example(&e.example_id))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(dataset.mode, lambda, ladder, decisions)
}

/// Every stage's score for every example, computed once so that many
/// thresholds can be evaluated cheaply.
#[derive(Debug, Clone)]
pub struct ScoreTable<'a> {
    mode: RouteMode<'a>,
    /// `scores[example][stage]`
    scores: Vec<Vec<f64>>,
    /// `correct[example][stage]`
    correct: Vec<Vec<Option<bool>>>,
    /// `prefix_cost[stage]` is the cost of exiting at `stage`.
    prefix_cost: Vec<f64>,
    largest_cost: f64,
}

/// Aggregate outcome of one threshold over a [`ScoreTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub mean_cost: f64,
    pub speedup: f64,
    pub accuracy: Option<f64>,
    pub exit_histogram: Vec<usize>,
}

impl<'a> ScoreTable<'a> {
    pub fn new(
        dataset: &AlignedDataset,
        ladder: &ModelLadder,
        temperatures: &TemperatureSet,
        mode: RouteMode<'a>,
    ) -> Result<Self> {
        if dataset.mode != mode.mode() {
            return Err(Error::ModeMismatch {
                expected: mode.mode(),
                found: dataset.mode,
            });
        }
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut scores = Vec::with_capacity(dataset.len());
        let mut correct = Vec::with_capacity(dataset.len());
        for e in &dataset.examples {
            check_shape(e, ladder).map_err(|err| err.for_example(&e.example_id))?;
            let mut row = Vec::with_capacity(ladder.len());
            let mut hits = Vec::with_capacity(ladder.len());
            for (stage, out) in e.outputs.iter().enumerate() {
                let (s, p) = score_stage(out, ladder.model_id(stage), temperatures, mode)
                    .map_err(|err| err.for_example(&e.example_id))?;
                row.push(s);
                hits.push(correctness(e, &p));
            }
            scores.push(row);
            correct.push(hits);
        }
        let mut prefix_cost = Vec::with_capacity(ladder.len());
        let mut acc = 0.0;
        for stage in 0..ladder.len() {
            acc += ladder.cost(stage);
            prefix_cost.push(acc);
        }
        Ok(ScoreTable {
            mode,
            scores,
            correct,
            prefix_cost,
            largest_cost: ladder.largest_cost(),
        })
    }

    pub fn mode(&self) -> RouteMode<'a> {
        self.mode
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn exit_stage(&self, example: usize, lambda: f64) -> usize {
        let row = &self.scores[example];
        let last = row.len() - 1;
        row[..last]
            .iter()
            .position(|&s| self.mode.exits(s, lambda))
            .unwrap_or(last)
    }

    pub fn evaluate(&self, lambda: f64) -> Outcome {
        let mut exit_histogram = alloc::vec![0; self.prefix_cost.len()];
        let mut cost_sum = 0.0;
        let (mut hits, mut labeled) = (0usize, 0usize);
        for i in 0..self.scores.len() {
            let stage = self.exit_stage(i, lambda);
            exit_histogram[stage] += 1;
            cost_sum += self.prefix_cost[stage];
            if let Some(c) = self.correct[i][stage] {
                labeled += 1;
                hits += c as usize;
            }
        }
        let mean_cost = cost_sum / self.scores.len() as f64;
        Outcome {
            mean_cost,
            speedup: self.largest_cost / mean_cost,
            accuracy: (labeled > 0).then(|| hits as f64 / labeled as f64),
            exit_histogram,
        }
    }
}

//! Accuracy, expected calibration error and per-group tables.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeDecision, RunSummary};
use crate::dataset::{AlignedDataset, Mode, StageOutput};
use crate::error::{Error, Result};
use crate::num;

pub const DEFAULT_BINS: usize = 10;

/// One equal-width bin `(lower, upper]`; the first bin also holds 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Absent for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Whatever confidences the caller passed in.
    Given,
    /// Every example's stage-0 confidence.
    FirstStage,
    /// The confidence of the stage each example exited at.
    CascadeFinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
    pub n: usize,
    pub scope: Scope,
}

fn edge(k: usize, num_bins: usize) -> f64 {
    if k == num_bins {
        1.0
    } else {
        k as f64 / num_bins as f64
    }
}

/// Bin holding `c`, using the same edges that [`ReliabilityBin`] reports.
pub fn bin_index(c: f64, num_bins: usize) -> usize {
    let mut b = (libm::ceil(c * num_bins as f64) as usize).clamp(1, num_bins) - 1;
    while b > 0 && c <= edge(b, num_bins) {
        b -= 1;
    }
    while b + 1 < num_bins && c > edge(b + 1, num_bins) {
        b += 1;
    }
    b
}

/// Equal-width ECE: `sum_b (n_b / n) |acc_b - conf_b|` over non-empty bins.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<CalibrationReport> {
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            expected: confidences.len(),
            found: correct.len(),
        });
    }
    if num_bins == 0 {
        return Err(Error::InvalidParameter("num_bins must be at least 1".into()));
    }
    if confidences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::InvalidConfidence(bad));
    }
    let mut count = alloc::vec![0usize; num_bins];
    let mut conf_sum = alloc::vec![0.0f64; num_bins];
    let mut hits = alloc::vec![0usize; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, num_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    let n = confidences.len();
    let mut total = 0.0;
    let bins = (0..num_bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (None, None)
            } else {
                let conf = conf_sum[b] / count[b] as f64;
                let acc = hits[b] as f64 / count[b] as f64;
                total += (count[b] as f64 / n as f64) * (acc - conf).abs();
                (Some(conf), Some(acc))
            };
            ReliabilityBin {
                lower: edge(b, num_bins),
                upper: edge(b + 1, num_bins),
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(CalibrationReport {
        ece: total,
        bins,
        n,
        scope: Scope::Given,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub rows: Vec<GroupRow>,
    /// Unweighted mean of per-group accuracies.
    pub macro_accuracy: f64,
    /// Accuracy over all pooled examples.
    pub micro_accuracy: f64,
}

/// Per-group accuracy of labeled decisions, optionally restricted to `only`.
pub fn group_report(decisions: &[CascadeDecision], only: Option<&[&str]>) -> Result<GroupReport> {
    let labeled: Vec<(&str, bool)> = decisions
        .iter()
        .filter_map(|d| d.correct.map(|c| (d.group.as_str(), c)))
        .collect();
    let mut groups: Vec<&str> = labeled.iter().map(|(g, _)| *g).collect();
    groups.sort_unstable();
    groups.dedup();
    if let Some(filter) = only {
        if let Some(missing) = filter.iter().find(|g| !groups.contains(g)) {
            return Err(Error::UnknownGroup((*missing).into()));
        }
        groups.retain(|g| filter.contains(g));
    }
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows: Vec<GroupRow> = groups
        .iter()
        .map(|g| {
            let (n, correct) = labeled
                .iter()
                .filter(|(h, _)| h == g)
                .fold((0, 0), |(n, k), (_, c)| (n + 1, k + *c as usize));
            GroupRow {
                group: (*g).into(),
                n,
                correct,
                accuracy: correct as f64 / n as f64,
            }
        })
        .collect();
    let macro_accuracy = num::mean(rows.iter().map(|r| r.accuracy)).expect("non-empty");
    let (n, k) = rows.iter().fold((0, 0), |(n, k), r| (n + r.n, k + r.correct));
    Ok(GroupReport {
        rows,
        macro_accuracy,
        micro_accuracy: k as f64 / n as f64,
    })
}

/// ECE of the smallest model alone and of the cascade's emitted answers.
///
/// Only labeled examples contribute. The first-stage report pairs each
/// example's stage-0 confidence with the correctness of stage 0's argmax.
pub fn cascade_ece_scopes(
    run: &RunSummary,
    dataset: &AlignedDataset,
    num_bins: usize,
) -> Result<(CalibrationReport, CalibrationReport)> {
    if run.mode != Mode::Classification || dataset.mode != Mode::Classification {
        return Err(Error::NotClassification);
    }
    if run.decisions.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            expected: dataset.len(),
            found: run.decisions.len(),
        });
    }
    let mut first = (Vec::new(), Vec::new());
    let mut last = (Vec::new(), Vec::new());
    for (d, e) in run.decisions.iter().zip(&dataset.examples) {
        if d.example_id != e.example_id {
            return Err(Error::InvalidParameter(alloc::format!(
                "decision '{}' does not match example '{}'",
                d.example_id,
                e.example_id
            )));
        }
        let (Some(label), Some(correct)) = (e.label, d.correct) else {
            continue;
        };
        let StageOutput::Logits(l0) = &e.outputs[0] else {
            return Err(Error::NotClassification);
        };
        first.0.push(d.per_stage_confidence[0]);
        first.1.push(num::argmax(l0) == label);
        last.0.push(d.per_stage_confidence[d.chosen_stage]);
        last.1.push(correct);
    }
    let mut a = ece(&first.0, &first.1, num_bins)?;
    let mut b = ece(&last.0, &last.1, num_bins)?;
    a.scope = Scope::FirstStage;
    b.scope = Scope::CascadeFinal;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::Prediction;
    use alloc::vec;

    #[test]
    fn hand_example() {
        let r = ece(&[0.8, 0.6], &[true, false], 1).unwrap();
        assert!((r.ece - 0.2).abs() < 1e-15);
        assert_eq!(r.bins[0].mean_confidence, Some(0.7));
        assert_eq!(r.bins[0].accuracy, Some(0.5));
    }

    #[test]
    fn single_occupied_bin() {
        let conf = vec![0.95; 100];
        let correct: Vec<bool> = (0..100).map(|i| i < 95).collect();
        let r = ece(&conf, &correct, 10).unwrap();
        assert!(r.ece < 1e-12);
        assert_eq!(r.bins.iter().filter(|b| b.count > 0).count(), 1);
        assert!(r.bins[0].mean_confidence.is_none());
    }

    #[test]
    fn bin_edges_are_left_open() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000001, 10), 3);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.5, 1), 0);
    }

    #[test]
    fn ece_errors() {
        assert!(matches!(ece(&[0.5], &[], 10), Err(Error::LengthMismatch { .. })));
        assert_eq!(ece(&[1.5], &[true], 10), Err(Error::InvalidConfidence(1.5)));
        assert!(ece(&[0.5], &[true], 0).is_err());
    }

    fn decision(group: &str, correct: bool) -> CascadeDecision {
        CascadeDecision {
            example_id: "x".into(),
            group: group.into(),
            stages_visited: vec![0],
            per_stage_confidence: vec![0.9],
            chosen_stage: 0,
            prediction: Prediction::Class(0),
            cost: 1.0,
            correct: Some(correct),
        }
    }

    #[test]
    fn macro_and_micro() {
        let mut d = vec![decision("a", true), decision("b", false)];
        let r = group_report(&d, None).unwrap();
        assert_eq!((r.macro_accuracy, r.micro_accuracy), (0.5, 0.5));

        d = (0..10).map(|_| decision("a", true)).collect();
        d.extend((0..90).map(|_| decision("b", false)));
        let r = group_report(&d, None).unwrap();
        assert!((r.macro_accuracy - 0.5).abs() < 1e-12);
        assert!((r.micro_accuracy - 0.1).abs() < 1e-12);

        let r = group_report(&d, Some(&["a"])).unwrap();
        assert_eq!((r.macro_accuracy, r.micro_accuracy), (1.0, 1.0));
        assert_eq!(group_report(&d, Some(&["zz"])), Err(Error::UnknownGroup("zz".into())));
    }
}

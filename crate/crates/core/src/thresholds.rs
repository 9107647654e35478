//! Threshold enumeration, speed-up solving and accuracy/speed-up sweeps.
//!
//! The speed-up `S(lambda)` of a fixed dataset is a step function that can
//! only change at observed confidence scores, so every search here enumerates
//! those candidates exactly instead of bisecting.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calibration::TemperatureSet;
use crate::cascade::{RouteMode, ScoreTable};
use crate::dataset::{AlignedDataset, ModelLadder};
use crate::error::{Error, Result};

pub const DEFAULT_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub speedup: f64,
    pub accuracy: Option<f64>,
    pub mean_cost: f64,
    pub exit_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub lambda: f64,
    #[serde(rename = "achieved_S")]
    pub achieved_speedup: f64,
    #[serde(rename = "target_S")]
    pub target_speedup: f64,
    pub attainable: bool,
    /// Set when even the fastest threshold falls short of the target.
    #[serde(rename = "ceiling_S")]
    pub ceiling_speedup: Option<f64>,
}

fn sorted_distinct(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

/// Every threshold at which routing can change, in ascending order.
///
/// Classification: the observed max probabilities plus the sentinels 0 and 1.
/// Generation: the observed entropies plus 0 (nobody exits early) and one
/// past the largest entropy (everybody exits at stage 0).
pub fn candidates_from_table(table: &ScoreTable<'_>) -> Vec<f64> {
    let observed: Vec<f64> = table.scores().iter().flatten().copied().collect();
    let mut values = observed.clone();
    match table.mode() {
        RouteMode::Classification => {
            values.push(0.0);
            values.push(1.0);
        }
        RouteMode::Generation(_) => {
            let top = observed.iter().copied().fold(0.0, f64::max);
            values.push(0.0);
            values.push(top + 1.0);
        }
    }
    sorted_distinct(values)
}

pub fn candidate_thresholds(
    dev: &AlignedDataset,
    ladder: &ModelLadder,
    temperatures: &TemperatureSet,
    mode: RouteMode<'_>,
) -> Result<Vec<f64>> {
    let table = ScoreTable::new(dev, ladder, temperatures, mode)?;
    Ok(candidates_from_table(&table))
}

/// Picks the candidate whose speed-up is nearest `target`; ties go to the
/// smaller threshold, which routes more examples to larger models.
pub fn solve_on_table(table: &ScoreTable<'_>, target: f64, rel_tol: f64) -> Result<SolveResult> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "rel_tol must be in (0, 1), got {rel_tol}"
        )));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!(
            "target speed-up must be positive, got {target}"
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut ceiling = f64::NEG_INFINITY;
    for lambda in candidates_from_table(table) {
        let s = table.evaluate(lambda).speedup;
        ceiling = ceiling.max(s);
        let closer = match best {
            None => true,
            Some((_, bs)) => (s - target).abs() < (bs - target).abs(),
        };
        if closer {
            best = Some((lambda, s));
        }
    }
    let (lambda, achieved) = best.expect("candidates are never empty");
    let attainable = (achieved - target).abs() <= rel_tol * target;
    let ceiling_speedup = (!attainable && ceiling < target).then_some(ceiling);
    Ok(SolveResult {
        lambda,
        achieved_speedup: achieved,
        target_speedup: target,
        attainable,
        ceiling_speedup,
    })
}

/// Finds the threshold whose speed-up on `dev` is closest to `target`.
pub fn solve_for_speedup(
    dev: &AlignedDataset,
    ladder: &ModelLadder,
    temperatures: &TemperatureSet,
    mode: RouteMode<'_>,
    target: f64,
    rel_tol: f64,
) -> Result<SolveResult> {
    let table = ScoreTable::new(dev, ladder, temperatures, mode)?;
    solve_on_table(&table, target, rel_tol)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// Use [`candidate_thresholds`].
    Auto,
    Values(Vec<f64>),
}

pub fn sweep_table(table: &ScoreTable<'_>, grid: &Grid) -> Result<Vec<SweepPoint>> {
    let lambdas = match grid {
        Grid::Auto => candidates_from_table(table),
        Grid::Values(v) if v.is_empty() => {
            return Err(Error::InvalidParameter("threshold grid is empty".into()))
        }
        Grid::Values(v) => {
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "threshold {bad} is not finite"
                )));
            }
            sorted_distinct(v.clone())
        }
    };
    Ok(lambdas
        .into_iter()
        .map(|lambda| {
            let out = table.evaluate(lambda);
            SweepPoint {
                lambda,
                speedup: out.speedup,
                accuracy: out.accuracy,
                mean_cost: out.mean_cost,
                exit_histogram: out.exit_histogram,
            }
        })
        .collect())
}

/// One operating point per threshold, sorted by threshold.
pub fn sweep(
    dev: &AlignedDataset,
    ladder: &ModelLadder,
    temperatures: &TemperatureSet,
    mode: RouteMode<'_>,
    grid: &Grid,
) -> Result<Vec<SweepPoint>> {
    let table = ScoreTable::new(dev, ladder, temperatures, mode)?;
    sweep_table(&table, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AlignedExample, Mode, StageOutput};
    use alloc::format;
    use alloc::vec;

    fn logits(c: f64) -> Vec<f64> {
        vec![libm::log(c / (1.0 - c)), 0.0]
    }

    fn dataset(rows: &[(f64, f64)]) -> AlignedDataset {
        AlignedDataset {
            mode: Mode::Classification,
            num_classes: Some(2),
            num_stages: 2,
            examples: rows
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| AlignedExample {
                    example_id: format!("e{i}"),
                    group: "en".into(),
                    label: Some(0),
                    reference_answer: None,
                    outputs: vec![StageOutput::Logits(logits(a)), StageOutput::Logits(logits(b))],
                })
                .collect(),
        }
    }

    #[test]
    fn candidates_include_sentinels_and_dedup() {
        let ds = dataset(&[(0.6, 0.8), (0.8, 0.6)]);
        let ladder = ModelLadder::from_costs(&[1.0, 4.0], Some(2)).unwrap();
        let temps = TemperatureSet::identity(&ladder);
        let c = candidate_thresholds(&ds, &ladder, &temps, RouteMode::Classification).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!((c[0], c[3]), (0.0, 1.0));
        assert!((c[1] - 0.6).abs() < 1e-12 && (c[2] - 0.8).abs() < 1e-12);

        let ds = dataset(&[(0.9, 0.9), (0.9, 0.9)]);
        let c = candidate_thresholds(&ds, &ladder, &temps, RouteMode::Classification).unwrap();
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn solver_rejects_bad_tolerance() {
        let ds = dataset(&[(0.6, 0.8)]);
        let ladder = ModelLadder::from_costs(&[1.0, 4.0], Some(2)).unwrap();
        let temps = TemperatureSet::identity(&ladder);
        for tol in [0.0, 1.0, -0.1] {
            assert!(matches!(
                solve_for_speedup(&ds, &ladder, &temps, RouteMode::Classification, 2.0, tol),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn explicit_grid_is_sorted() {
        let ds = dataset(&[(0.6, 0.8), (0.7, 0.9)]);
        let ladder = ModelLadder::from_costs(&[1.0, 4.0], Some(2)).unwrap();
        let temps = TemperatureSet::identity(&ladder);
        let pts = sweep(
            &ds,
            &ladder,
            &temps,
            RouteMode::Classification,
            &Grid::Values(vec![1.0, 0.0, 0.65]),
        )
        .unwrap();
        let lambdas: Vec<f64> = pts.iter().map(|p| p.lambda).collect();
        assert_eq!(lambdas, vec![0.0, 0.65, 1.0]);
        assert_eq!(pts[1].exit_histogram, vec![1, 1]);
        assert!(sweep(&ds, &ladder, &temps, RouteMode::Classification, &Grid::Values(vec![]))
            .is_err());
    }
}

//! Cascade routing, threshold solving and metric oracles.

use cascadekit_core::calibration::{ConstantZero, TemperatureSet};
use cascadekit_core::cascade::{route_dataset, Prediction, RouteMode};
use cascadekit_core::dataset::{AlignedDataset, AlignedExample, Mode, ModelLadder, StageOutput};
use cascadekit_core::metrics::{cascade_ece_scopes, ece};
use cascadekit_core::thresholds::{
    candidate_thresholds, solve_for_speedup, sweep, Grid, DEFAULT_REL_TOL,
};
use proptest::prelude::*;

/// Two-class logits whose T = 1 max probability is `c`.
fn logits_with_confidence(c: f64) -> Vec<f64> {
    vec![(c / (1.0 - c)).ln(), 0.0]
}

fn dataset_from_confidences(rows: &[Vec<f64>], labels: &[usize]) -> AlignedDataset {
    AlignedDataset {
        mode: Mode::Classification,
        num_classes: Some(2),
        num_stages: rows[0].len(),
        examples: rows
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (confs, &label))| AlignedExample {
                example_id: format!("e{i:04}"),
                group: if i % 2 == 0 { "en" } else { "th" }.into(),
                label: Some(label),
                reference_answer: None,
                outputs: confs
                    .iter()
                    .map(|&c| StageOutput::Logits(logits_with_confidence(c)))
                    .collect(),
            })
            .collect(),
    }
}

fn random_dataset(stages: usize, q: usize) -> impl Strategy<Value = AlignedDataset> {
    prop::collection::vec(
        (
            prop::collection::vec(prop::collection::vec(-4.0f64..4.0, q), stages),
            0..q,
        ),
        1..30,
    )
    .prop_map(move |rows| AlignedDataset {
        mode: Mode::Classification,
        num_classes: Some(q),
        num_stages: stages,
        examples: rows
            .into_iter()
            .enumerate()
            .map(|(i, (logits, label))| AlignedExample {
                example_id: format!("e{i:04}"),
                group: format!("g{}", i % 3),
                label: Some(label),
                reference_answer: None,
                outputs: logits.into_iter().map(StageOutput::Logits).collect(),
            })
            .collect(),
    })
}

fn ladder3() -> ModelLadder {
    ModelLadder::from_costs(&[1.0, 3.0, 10.0], None).unwrap()
}

/// Direct transcription of the vanilla cascade: softmax max-probability at
/// T = 1, stop when it exceeds the threshold or the models run out.
fn vanilla_exit_stage(example: &AlignedExample, lambda: f64) -> (usize, usize) {
    let n = example.outputs.len();
    for (i, out) in example.outputs.iter().enumerate() {
        let StageOutput::Logits(l) = out else { unreachable!() };
        let denom: f64 = l.iter().map(|v| v.exp()).sum();
        let probs: Vec<f64> = l.iter().map(|v| v.exp() / denom).collect();
        let mut arg = 0;
        for j in 1..probs.len() {
            if l[j] > l[arg] {
                arg = j;
            }
        }
        if i == n - 1 || probs[arg] > lambda {
            return (i, arg);
        }
    }
    unreachable!()
}

#[test]
fn three_stage_cost_fixtures() {
    let ladder = ladder3();
    let temps = TemperatureSet::identity(&ladder);
    let all_early = dataset_from_confidences(&vec![vec![0.9, 0.9, 0.9]; 4], &[0; 4]);
    let run = route_dataset(&all_early, &ladder, &temps, 0.5, RouteMode::Classification).unwrap();
    assert_eq!(run.mean_cost, 1.0);
    assert_eq!(run.speedup, 10.0);

    let half = dataset_from_confidences(
        &[
            vec![0.9, 0.3, 0.3],
            vec![0.55, 0.55, 0.55],
            vec![0.95, 0.3, 0.3],
            vec![0.6, 0.6, 0.6],
        ],
        &[0; 4],
    );
    let run = route_dataset(&half, &ladder, &temps, 0.8, RouteMode::Classification).unwrap();
    assert_eq!(run.mean_cost, 7.5);
    assert!((run.speedup - 10.0 / 7.5).abs() < 1e-15);

    let run = route_dataset(&half, &ladder, &temps, 1.0, RouteMode::Classification).unwrap();
    assert_eq!(run.mean_cost, 14.0);
    assert!((run.speedup - 10.0 / 14.0).abs() < 1e-15);
}

#[test]
fn solver_fixture_hits_two_exactly() {
    let ladder = ModelLadder::from_costs(&[1.0, 4.0], None).unwrap();
    let temps = TemperatureSet::identity(&ladder);
    let dev = dataset_from_confidences(
        &[vec![0.9, 0.99], vec![0.8, 0.99], vec![0.6, 0.99], vec![0.5, 0.99]],
        &[0; 4],
    );
    // S by candidate: 0 -> 4, 0.5 -> 2, 0.6 -> 4/3.5, 0.8 -> 4/4.25, 0.9 and up -> 0.8.
    let r = solve_for_speedup(&dev, &ladder, &temps, RouteMode::Classification, 2.0, 0.05).unwrap();
    assert!(r.attainable);
    assert_eq!(r.achieved_speedup, 2.0);
    assert!((r.lambda - 0.5).abs() < 1e-12);
    assert!(r.ceiling_speedup.is_none());
}

#[test]
fn saturated_confidences_report_a_ceiling() {
    let ladder = ModelLadder::from_costs(&[1.0, 1.5], None).unwrap();
    let temps = TemperatureSet::identity(&ladder);
    let sat = vec![1000.0, 0.0];
    let mut dev = dataset_from_confidences(&vec![vec![0.5, 0.5]; 4], &[0; 4]);
    for e in &mut dev.examples {
        e.outputs = vec![StageOutput::Logits(sat.clone()), StageOutput::Logits(sat.clone())];
    }
    let cands = candidate_thresholds(&dev, &ladder, &temps, RouteMode::Classification).unwrap();
    assert_eq!(cands, vec![0.0, 1.0]);
    let r = solve_for_speedup(&dev, &ladder, &temps, RouteMode::Classification, 2.0, 0.05).unwrap();
    assert!(!r.attainable);
    assert_eq!(r.ceiling_speedup, Some(1.5));
    assert_eq!(r.achieved_speedup, 1.5);
}

#[test]
fn saturated_confidences_with_a_gap_are_unattainable() {
    let ladder = ModelLadder::from_costs(&[1.0, 4.0], None).unwrap();
    let temps = TemperatureSet::identity(&ladder);
    let sat = vec![1000.0, 0.0];
    let mut dev = dataset_from_confidences(&vec![vec![0.5, 0.5]; 3], &[0; 3]);
    for e in &mut dev.examples {
        e.outputs = vec![StageOutput::Logits(sat.clone()), StageOutput::Logits(sat.clone())];
    }
    // Only S = 4 (lambda < 1) and S = 0.8 (lambda = 1) are reachable.
    let r = solve_for_speedup(&dev, &ladder, &temps, RouteMode::Classification, 2.0, 0.05).unwrap();
    assert!(!r.attainable);
    assert_eq!(r.achieved_speedup, 0.8);
    assert!(r.ceiling_speedup.is_none());
}

#[test]
fn target_one_prefers_full_traversal() {
    let ladder = ModelLadder::from_costs(&[1.0, 10.0], None).unwrap();
    let temps = TemperatureSet::identity(&ladder);
    let dev = dataset_from_confidences(&[vec![0.7, 0.9], vec![0.8, 0.9]], &[0, 0]);
    let r = solve_for_speedup(&dev, &ladder, &temps, RouteMode::Classification, 1.0, 0.05).unwrap();
    assert!((r.achieved_speedup - 10.0 / 11.0).abs() < 1e-15);
    assert!(!r.attainable);
}

#[test]
fn grid_zero_one_gives_extreme_operating_points() {
    let ladder = ladder3();
    let temps = TemperatureSet::identity(&ladder);
    let ds = dataset_from_confidences(&[vec![0.7, 0.6, 0.9], vec![0.55, 0.8, 0.6]], &[0, 1]);
    let pts = sweep(&ds, &ladder, &temps, RouteMode::Classification, &Grid::Values(vec![0.0, 1.0]))
        .unwrap();
    assert_eq!(pts.len(), 2);
    assert_eq!(pts[0].exit_histogram, vec![2, 0, 0]);
    assert_eq!(pts[1].exit_histogram, vec![0, 0, 2]);
    let auto = sweep(&ds, &ladder, &temps, RouteMode::Classification, &Grid::Auto).unwrap();
    let cands = candidate_thresholds(&ds, &ladder, &temps, RouteMode::Classification).unwrap();
    assert_eq!(auto.len(), cands.len());
}

#[test]
fn mixed_exit_ece_scopes_match_hand_oracle() {
    let ladder = ModelLadder::from_costs(&[1.0, 4.0], None).unwrap();
    let temps = TemperatureSet::identity(&ladder);
    // Stage-0 confidences 0.9, 0.6, 0.75, 0.55 all predict class 0.
    let ds = dataset_from_confidences(
        &[vec![0.9, 0.8], vec![0.6, 0.95], vec![0.75, 0.65], vec![0.55, 0.85]],
        &[0, 1, 0, 0],
    );
    let run = route_dataset(&ds, &ladder, &temps, 0.7, RouteMode::Classification).unwrap();
    assert_eq!(
        run.decisions.iter().map(|d| d.chosen_stage).collect::<Vec<_>>(),
        vec![0, 1, 0, 1]
    );
    let (first, last) = cascade_ece_scopes(&run, &ds, 2).unwrap();
    // First stage: all four in bin (0.5, 1]; mean conf 0.7, accuracy 3/4.
    assert!((first.ece - 0.05).abs() < 1e-12);
    // Final: confidences 0.9, 0.95, 0.75, 0.85 with example 1 wrong at stage 1.
    assert!((last.ece - 0.1125).abs() < 1e-12);
    assert_eq!(last.n, 4);

    let all_first = route_dataset(&ds, &ladder, &temps, 0.0, RouteMode::Classification).unwrap();
    let (a, b) = cascade_ece_scopes(&all_first, &ds, 10).unwrap();
    assert_eq!(a.ece, b.ece);
    assert_eq!(a.bins, b.bins);

    let full = route_dataset(&ds, &ladder, &temps, 1.0, RouteMode::Classification).unwrap();
    let (_, b) = cascade_ece_scopes(&full, &ds, 10).unwrap();
    let last_confs: Vec<f64> = full.decisions.iter().map(|d| d.per_stage_confidence[1]).collect();
    let last_ok = vec![true, false, true, true];
    assert!((b.ece - ece(&last_confs, &last_ok, 10).unwrap().ece).abs() < 1e-15);
}

#[test]
fn generation_runs_cannot_produce_ece() {
    let ladder = ModelLadder::from_costs(&[1.0, 4.0], None).unwrap();
    let ds = AlignedDataset {
        mode: Mode::Generation,
        num_classes: None,
        num_stages: 2,
        examples: vec![AlignedExample {
            example_id: "g".into(),
            group: "en".into(),
            label: None,
            reference_answer: Some("1".into()),
            outputs: vec![
                StageOutput::Generation {
                    token_ids: vec![1],
                    token_probs: vec![0.5],
                    answer_text: "1".into(),
                };
                2
            ],
        }],
    };
    let run = route_dataset(
        &ds,
        &ladder,
        &TemperatureSet::default(),
        0.1,
        RouteMode::Generation(&ConstantZero),
    )
    .unwrap();
    assert!(cascade_ece_scopes(&run, &ds, 10).is_err());
}

/// Quadratic-time ECE: for every bin, scan every example.
fn naive_ece(conf: &[f64], ok: &[bool], bins: usize) -> f64 {
    let n = conf.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = if b + 1 == bins { 1.0 } else { (b + 1) as f64 / bins as f64 };
        let members: Vec<usize> = (0..conf.len())
            .filter(|&i| (conf[i] > lo || (b == 0 && conf[i] >= lo)) && conf[i] <= hi)
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let c = members.iter().map(|&i| conf[i]).sum::<f64>() / m;
        let a = members.iter().filter(|&&i| ok[i]).count() as f64 / m;
        total += (m / n) * (a - c).abs();
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn raising_threshold_never_speeds_up(ds in random_dataset(3, 3), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let r_lo = route_dataset(&ds, &ladder, &temps, lo, RouteMode::Classification).unwrap();
        let r_hi = route_dataset(&ds, &ladder, &temps, hi, RouteMode::Classification).unwrap();
        for (x, y) in r_lo.decisions.iter().zip(&r_hi.decisions) {
            prop_assert!(x.chosen_stage <= y.chosen_stage);
        }
        prop_assert!(r_lo.mean_cost <= r_hi.mean_cost);
        prop_assert!(r_lo.speedup >= r_hi.speedup);
    }

    #[test]
    fn sweep_speedup_is_non_increasing(ds in random_dataset(3, 4)) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let pts = sweep(&ds, &ladder, &temps, RouteMode::Classification, &Grid::Auto).unwrap();
        for w in pts.windows(2) {
            prop_assert!(w[0].lambda < w[1].lambda);
            prop_assert!(w[0].speedup >= w[1].speedup);
        }
        for p in &pts {
            prop_assert_eq!(p.exit_histogram.iter().sum::<usize>(), ds.len());
        }
        prop_assert!(pts.len() <= ds.len() * 3 + 2);
    }

    #[test]
    fn traces_are_prefixes_with_matching_costs(ds in random_dataset(3, 2), lambda in 0.0f64..=1.0) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let run = route_dataset(&ds, &ladder, &temps, lambda, RouteMode::Classification).unwrap();
        for d in &run.decisions {
            prop_assert_eq!(&d.stages_visited, &(0..=d.chosen_stage).collect::<Vec<_>>());
            prop_assert_eq!(d.per_stage_confidence.len(), d.stages_visited.len());
            let cost: f64 = d.stages_visited.iter().map(|&s| ladder.cost(s)).sum();
            prop_assert_eq!(d.cost, cost);
        }
        prop_assert_eq!(run.speedup, ladder.largest_cost() / run.mean_cost);
    }

    #[test]
    fn uncalibrated_mode_is_the_vanilla_cascade(ds in random_dataset(3, 3), lambda in 0.0f64..=1.0) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let run = route_dataset(&ds, &ladder, &temps, lambda, RouteMode::Classification).unwrap();
        for (d, e) in run.decisions.iter().zip(&ds.examples) {
            let (stage, class) = vanilla_exit_stage(e, lambda);
            prop_assert_eq!(d.chosen_stage, stage);
            prop_assert_eq!(&d.prediction, &Prediction::Class(class));
        }
    }

    #[test]
    fn solving_for_a_swept_speedup_recovers_its_class(ds in random_dataset(3, 3), pick in 0usize..1000) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let pts = sweep(&ds, &ladder, &temps, RouteMode::Classification, &Grid::Auto).unwrap();
        let target = &pts[pick % pts.len()];
        let r = solve_for_speedup(&ds, &ladder, &temps, RouteMode::Classification, target.speedup, 1e-9)
            .unwrap();
        prop_assert!(r.attainable);
        prop_assert_eq!(r.achieved_speedup, target.speedup);
        // Smallest threshold of the equivalence class.
        let first = pts.iter().find(|p| p.speedup == target.speedup).unwrap();
        prop_assert_eq!(r.lambda, first.lambda);
    }

    #[test]
    fn ceiling_is_the_speedup_at_zero(ds in random_dataset(3, 3), target in 1.0f64..20.0) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let r = solve_for_speedup(&ds, &ladder, &temps, RouteMode::Classification, target, DEFAULT_REL_TOL)
            .unwrap();
        if let Some(ceiling) = r.ceiling_speedup {
            prop_assert!(!r.attainable);
            prop_assert!(ceiling < target);
            let at_zero = route_dataset(&ds, &ladder, &temps, 0.0, RouteMode::Classification).unwrap();
            prop_assert_eq!(ceiling, at_zero.speedup);
        }
    }

    #[test]
    fn routing_is_deterministic(ds in random_dataset(3, 3), lambda in 0.0f64..1.0) {
        let ladder = ladder3();
        let temps = TemperatureSet::identity(&ladder);
        let a = route_dataset(&ds, &ladder, &temps, lambda, RouteMode::Classification).unwrap();
        let b = route_dataset(&ds, &ladder, &temps, lambda, RouteMode::Classification).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ece_matches_naive_oracle(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        bins in 1usize..25
    ) {
        let conf: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ok: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let r = ece(&conf, &ok, bins).unwrap();
        prop_assert!((r.ece - naive_ece(&conf, &ok, bins)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.ece));
        prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), conf.len());
    }

    #[test]
    fn ece_is_permutation_invariant(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100)
            .prop_shuffle()
    ) {
        let mut sorted = pairs.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let unpack = |v: &[(f64, bool)]| {
            let c: Vec<f64> = v.iter().map(|p| p.0).collect();
            let o: Vec<bool> = v.iter().map(|p| p.1).collect();
            ece(&c, &o, 10).unwrap().ece
        };
        prop_assert!((unpack(&pairs) - unpack(&sorted)).abs() < 1e-12);
    }
}

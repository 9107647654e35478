//! End-to-end synthetic experiment: a cross-entropy ladder with raw softmax
//! confidences against a logit-normalized ladder with fitted temperatures, both
//! routed at matched speed-ups on shifted test groups.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use cascadekit_core::calibration::{fit_ladder_temperatures, FitOptions, Temperature, TemperatureSet};
use cascadekit_core::cascade::route_dataset;
use cascadekit_core::dataset::align;
use cascadekit_core::metrics::{cascade_ece_scopes, group_report, GroupRow, ReliabilityBin};
use cascadekit_core::thresholds::{solve_for_speedup, DEFAULT_REL_TOL};
use cascadekit_core::toytrain::{
    dump_logits, gen_shift, group_name, ladder_for, train, Architecture, LossKind, ModelSpec,
    Sample, ShiftConfig, ShiftedData, ToyModel, TrainOptions,
};
use cascadekit_core::{AlignedDataset, Header, ModelLadder, Record, RouteMode};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::files;
use crate::jsonl::{self, Strictness};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    /// `seed` is replaced by the run seed.
    pub shift: ShiftConfig,
    pub ladder: Vec<ModelSpec>,
    pub tau: f64,
    /// `seed` is replaced by one derived from the run seed and stage.
    pub baseline_training: TrainOptions,
    pub calibrated_training: TrainOptions,
    pub target_speedups: Vec<f64>,
    pub rel_tol: f64,
    pub bins: usize,
    pub fit: FitOptions,
    /// Also report cross-entropy with temperatures and logitnorm without.
    pub ablations: bool,
    /// Extra calibrated pipelines, one per τ.
    pub tau_sweep: Vec<f64>,
}

fn linear(id: &str, input_dims: usize) -> ModelSpec {
    ModelSpec {
        model_id: id.into(),
        architecture: Architecture::Linear { input_dims },
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        let training = |learning_rate| TrainOptions {
            learning_rate,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        };
        DemoConfig {
            shift: ShiftConfig::default(),
            ladder: vec![
                linear("lin2", 2),
                linear("lin8", 8),
                ModelSpec {
                    model_id: "mlp32".into(),
                    architecture: Architecture::Mlp { hidden: 32 },
                },
            ],
            tau: 0.04,
            baseline_training: training(0.03),
            calibrated_training: training(0.003),
            target_speedups: vec![2.0, 3.0],
            rel_tol: DEFAULT_REL_TOL,
            bins: 10,
            fit: FitOptions::default(),
            ablations: false,
            tau_sweep: Vec::new(),
        }
    }
}

pub const BASELINE: &str = "baseline";
pub const CALIBRATED: &str = "calibrated";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub branch: String,
    pub model_id: String,
    pub params: usize,
    pub final_train_loss: f64,
    pub source_dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRow {
    pub pipeline: String,
    pub target_speedup: f64,
    pub lambda: f64,
    pub attainable: bool,
    pub dev_speedup: f64,
    pub test_speedup: f64,
    pub test_accuracy: f64,
    /// Unweighted mean over the non-source groups.
    pub shifted_accuracy: f64,
    pub ece_first: f64,
    pub ece_final: f64,
    pub groups: Vec<GroupRow>,
    pub exit_histogram: Vec<usize>,
    #[serde(skip)]
    pub final_bins: Vec<ReliabilityBin>,
}

/// Per-pipeline means over the target speed-ups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineMeans {
    pub pipeline: String,
    pub ece_final: f64,
    pub shifted_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub config: DemoConfig,
    pub models: Vec<ModelRow>,
    pub temperatures: BTreeMap<String, Vec<Temperature>>,
    pub rows: Vec<DemoRow>,
    pub means: Vec<PipelineMeans>,
}

impl DemoReport {
    pub fn means_of(&self, pipeline: &str) -> Option<&PipelineMeans> {
        self.means.iter().find(|m| m.pipeline == pipeline)
    }
}

/// Report plus the intermediate files, for writing to disk.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub report: DemoReport,
    /// `(relative path, contents)` in a fixed order.
    pub artifacts: Vec<(String, String)>,
}

struct Branch {
    name: String,
    ladder: ModelLadder,
    dev: AlignedDataset,
    test: AlignedDataset,
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(stage as u64)
}

/// Dumps, re-parses and aligns, so the experiment goes through the same file
/// format as user data.
fn roundtrip(
    models: &[ToyModel],
    ladder: &ModelLadder,
    split: &str,
    samples: &[Sample],
    path: String,
    artifacts: &mut Vec<(String, String)>,
) -> Result<AlignedDataset> {
    let (header, records): (Header, Vec<_>) = dump_logits(models, split, samples)?;
    let records: Vec<Record> = records.into_iter().map(Record::Logits).collect();
    let mut buf = Vec::new();
    jsonl::write_dump(&mut buf, &header, &records).expect("in-memory write");
    let dump = jsonl::parse_dump(buf.as_slice(), &path, Strictness::Strict)?;
    artifacts.push((path, String::from_utf8(buf).expect("utf-8")));
    Ok(align(&dump.records, ladder)?)
}

fn train_branch(
    name: &str,
    loss: LossKind,
    options: &TrainOptions,
    config: &DemoConfig,
    data: &ShiftedData,
    seed: u64,
    models_out: &mut Vec<ModelRow>,
    artifacts: &mut Vec<(String, String)>,
) -> Result<Branch> {
    let q = config.shift.num_classes;
    let d = config.shift.input_dim;
    let mut models = Vec::with_capacity(config.ladder.len());
    for (stage, spec) in config.ladder.iter().enumerate() {
        let opts = TrainOptions {
            seed: stage_seed(seed, stage),
            ..*options
        };
        let (m, log) = train(&data.train, spec.clone(), d, q, loss, &opts)?;
        models_out.push(ModelRow {
            branch: name.into(),
            model_id: spec.model_id.clone(),
            params: m.params.len(),
            final_train_loss: log.final_loss(),
            source_dev_accuracy: m.accuracy(&data.dev)?,
        });
        models.push(m);
    }
    let ladder = ladder_for(&models)?;
    artifacts.push((format!("{name}/ladder.json"), files::to_json(&ladder)));
    let dev = roundtrip(&models, &ladder, "dev", &data.dev, format!("{name}/dev.jsonl"), artifacts)?;
    let pooled: Vec<Sample> = data.test.iter().flatten().cloned().collect();
    let test = roundtrip(&models, &ladder, "test", &pooled, format!("{name}/test.jsonl"), artifacts)?;
    Ok(Branch {
        name: name.into(),
        ladder,
        dev,
        test,
    })
}

fn evaluate(
    pipeline: &str,
    branch: &Branch,
    temps: &TemperatureSet,
    config: &DemoConfig,
    shifted: &[String],
) -> Result<Vec<DemoRow>> {
    let shifted: Vec<&str> = shifted.iter().map(String::as_str).collect();
    let mode = RouteMode::Classification;
    config
        .target_speedups
        .iter()
        .map(|&target| {
            let solved = solve_for_speedup(&branch.dev, &branch.ladder, temps, mode, target, config.rel_tol)?;
            let run = route_dataset(&branch.test, &branch.ladder, temps, solved.lambda, mode)?;
            let (first, last) = cascade_ece_scopes(&run, &branch.test, config.bins)?;
            let groups = group_report(&run.decisions, None)?;
            let shifted_accuracy = if shifted.is_empty() {
                f64::NAN
            } else {
                group_report(&run.decisions, Some(&shifted))?.macro_accuracy
            };
            Ok(DemoRow {
                pipeline: pipeline.into(),
                target_speedup: target,
                lambda: solved.lambda,
                attainable: solved.attainable,
                dev_speedup: solved.achieved_speedup,
                test_speedup: run.speedup,
                test_accuracy: groups.micro_accuracy,
                shifted_accuracy,
                ece_first: first.ece,
                ece_final: last.ece,
                groups: groups.rows,
                exit_histogram: run.exit_histogram,
                final_bins: last.bins,
            })
        })
        .collect()
}

fn fit(
    branch: &Branch,
    pipeline: &str,
    config: &DemoConfig,
    temperatures: &mut BTreeMap<String, Vec<Temperature>>,
    artifacts: &mut Vec<(String, String)>,
) -> Result<TemperatureSet> {
    let t = fit_ladder_temperatures(&branch.dev, &branch.ladder, &config.fit)?;
    artifacts.push((format!("{}/temps.json", branch.name), files::to_json(&t)));
    let set = TemperatureSet::from_fitted(&t);
    temperatures.insert(pipeline.into(), t);
    Ok(set)
}

/// Runs the whole experiment for one seed. Deterministic in `(seed, config)`.
pub fn run_demo(seed: u64, config: &DemoConfig) -> Result<DemoRun> {
    let shift = ShiftConfig {
        seed,
        ..config.shift.clone()
    };
    let data = gen_shift(&shift)?;
    let shifted: Vec<String> = (1..shift.num_groups()).map(group_name).collect();
    let mut models = Vec::new();
    let mut artifacts = Vec::new();
    let mut temperatures = BTreeMap::new();
    let mut rows = Vec::new();

    let ce = train_branch(
        "ce",
        LossKind::CrossEntropy,
        &config.baseline_training,
        config,
        &data,
        seed,
        &mut models,
        &mut artifacts,
    )?;
    let ln = train_branch(
        "logitnorm",
        LossKind::LogitNorm { tau: config.tau },
        &config.calibrated_training,
        config,
        &data,
        seed,
        &mut models,
        &mut artifacts,
    )?;
    let identity = TemperatureSet::identity(&ce.ladder);
    rows.extend(evaluate(BASELINE, &ce, &identity, config, &shifted)?);
    let t = fit(&ln, CALIBRATED, config, &mut temperatures, &mut artifacts)?;
    rows.extend(evaluate(CALIBRATED, &ln, &t, config, &shifted)?);
    if config.ablations {
        let t = fit(&ce, "ce+temperature", config, &mut temperatures, &mut artifacts)?;
        rows.extend(evaluate("ce+temperature", &ce, &t, config, &shifted)?);
        let identity = TemperatureSet::identity(&ln.ladder);
        rows.extend(evaluate("logitnorm", &ln, &identity, config, &shifted)?);
    }
    for &tau in &config.tau_sweep {
        let name = format!("calibrated(tau={tau})");
        let branch = train_branch(
            &format!("logitnorm-tau{tau}"),
            LossKind::LogitNorm { tau },
            &config.calibrated_training,
            config,
            &data,
            seed,
            &mut models,
            &mut artifacts,
        )?;
        let t = fit(&branch, &name, config, &mut temperatures, &mut artifacts)?;
        rows.extend(evaluate(&name, &branch, &t, config, &shifted)?);
    }
    for r in &rows {
        artifacts.push((
            format!("bins/{}_S{}.csv", r.pipeline, r.target_speedup),
            files::bins_csv(&r.final_bins),
        ));
    }

    let mut pipelines: Vec<&str> = Vec::new();
    for r in &rows {
        if !pipelines.contains(&r.pipeline.as_str()) {
            pipelines.push(&r.pipeline);
        }
    }
    let means = pipelines
        .iter()
        .map(|p| {
            let mine: Vec<&DemoRow> = rows.iter().filter(|r| r.pipeline == *p).collect();
            let n = mine.len() as f64;
            PipelineMeans {
                pipeline: (*p).into(),
                ece_final: mine.iter().map(|r| r.ece_final).sum::<f64>() / n,
                shifted_accuracy: mine.iter().map(|r| r.shifted_accuracy).sum::<f64>() / n,
            }
        })
        .collect();
    let report = DemoReport {
        seed,
        config: DemoConfig {
            shift,
            ..config.clone()
        },
        models,
        temperatures,
        rows,
        means,
    };
    Ok(DemoRun { report, artifacts })
}

/// Fixed-width text rendering of the report rows.
pub fn render_table(report: &DemoReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<24} {:>6} {:>8} {:>6} {:>6} {:>7} {:>8} {:>9} {:>9}",
        "pipeline", "target", "lambda", "dev_S", "test_S", "acc", "shifted", "ece_first", "ece_final"
    )
    .unwrap();
    for r in &report.rows {
        writeln!(
            out,
            "{:<24} {:>6.2} {:>8.4} {:>6.2} {:>6.2} {:>7.4} {:>8.4} {:>9.4} {:>9.4}{}",
            r.pipeline,
            r.target_speedup,
            r.lambda,
            r.dev_speedup,
            r.test_speedup,
            r.test_accuracy,
            r.shifted_accuracy,
            r.ece_first,
            r.ece_final,
            if r.attainable { "" } else { "  (target not attained)" }
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    for m in &report.means {
        writeln!(
            out,
            "{:<24} mean ece_final {:.4} ({:.2}%)  mean shifted accuracy {:.4}",
            m.pipeline,
            m.ece_final,
            100.0 * m.ece_final,
            m.shifted_accuracy
        )
        .unwrap();
    }
    out
}

//! Command-line driver. Every command that produces files writes a
//! `manifest.json` beside them.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use cascadekit_core::calibration::{
    fit_ladder_temperatures, ConstantZero, FitOptions, Jaccard, Similarity, TemperatureSet,
};
use cascadekit_core::cascade::route_dataset;
use cascadekit_core::dataset::align;
use cascadekit_core::metrics::{cascade_ece_scopes, group_report};
use cascadekit_core::thresholds::{solve_for_speedup, sweep, Grid, DEFAULT_REL_TOL};
use cascadekit_core::toytrain::{
    dump_logits, gen_shift, ladder_for, train, LossKind, ModelSpec, ShiftConfig, ToyModel,
    TrainLog, TrainOptions,
};
use cascadekit_core::{AlignedDataset, Mode, ModelLadder, Record, RouteMode, RunSummary};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::demo::{render_table, run_demo, DemoConfig};
use crate::error::{Error, Result};
use crate::files::{self, to_json};
use crate::jsonl::{self, Dump, Strictness};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "cascadekit", version, about = "Calibrated model cascades over logits dumps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dump against the schema and print a summary.
    Validate(ValidateArgs),
    /// Align a dump against a ladder into one row per example.
    Align(AlignArgs),
    /// Fit one temperature per model on validation logits.
    FitTemp(FitTempArgs),
    /// Route a dump through the cascade at a fixed threshold.
    Route(RouteArgs),
    /// Find the threshold that hits a target speed-up on a dev dump.
    Solve(SolveArgs),
    /// Accuracy and speed-up over a grid of thresholds.
    Sweep(SweepArgs),
    /// Calibration and per-group accuracy at a fixed threshold.
    Report(ReportArgs),
    /// Train a toy ladder and dump its logits.
    TrainToy(TrainToyArgs),
    /// Generate the shifted synthetic benchmark.
    GenData(GenDataArgs),
    /// Run the full synthetic comparison of calibrated and uncalibrated cascades.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Logits or generation dump (JSONL).
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Fail on the first bad line (the default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip bad record lines and report them.
    #[arg(long)]
    pub lenient: bool,
}

impl InputArgs {
    fn strictness(&self) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Classification,
    Generation,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Classification => Mode::Classification,
            ModeArg::Generation => Mode::Generation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceArg {
    /// Every token fully relevant to the discount: R_i = 0.
    Zero,
    /// Token-set Jaccard similarity with token i removed.
    Jaccard,
}

#[derive(Debug, Args)]
pub struct RoutingArgs {
    #[arg(long, value_name = "PATH")]
    pub ladder: PathBuf,
    /// Fitted temperatures; T = 1 for every model when omitted.
    #[arg(long, value_name = "PATH")]
    pub temps: Option<PathBuf>,
    /// Expected mode; defaults to the dump header's.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Relevance plug-in for generation mode.
    #[arg(long, value_enum, default_value = "zero")]
    pub relevance: RelevanceArg,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Also align against this ladder.
    #[arg(long, value_name = "PATH")]
    pub ladder: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "PATH")]
    pub ladder: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitTempArgs {
    /// Labeled validation dump.
    #[arg(long, value_name = "PATH")]
    pub val: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub ladder: PathBuf,
    /// Output file (`*.json`) or directory.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub t_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_max: f64,
    /// Fit only on examples from these groups (comma-separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<String>>,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub routing: RoutingArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Dev dump the threshold is chosen on.
    #[arg(long, value_name = "PATH")]
    pub dev: PathBuf,
    #[command(flatten)]
    pub routing: RoutingArgs,
    #[arg(long)]
    pub target_speedup: f64,
    /// Relative tolerance for calling the target attained.
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub routing: RoutingArgs,
    /// Comma-separated thresholds; every distinct score when omitted.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub routing: RoutingArgs,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Restrict the group table to these groups (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<String>>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ce,
    Logitnorm,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    #[arg(long, env = "CASCADEKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// JSON with optional `shift`, `ladder`, `loss` and `training` keys.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Shift configuration JSON; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Demo configuration JSON; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Extra calibrated pipelines at these τ values (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub tau_sweep: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub target_speedup: Option<Vec<f64>>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Add cross-entropy + temperature and logitnorm-only rows.
    #[arg(long)]
    pub ablations: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.module());
            1
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Align(a) => align_cmd(a),
        Command::FitTemp(a) => fit_temp(a),
        Command::Route(a) => route(a),
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Report(a) => report(a),
        Command::TrainToy(a) => train_toy(a),
        Command::GenData(a) => gen_data(a),
        Command::Demo(a) => demo(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_diagnostics(path: &Path, dump: &Dump) {
    for d in &dump.diagnostics {
        eprintln!("warning: {}:{}: {}", path.display(), d.line, d.reason);
    }
}

fn load_dump(path: &Path, strictness: Strictness, manifest: &mut Manifest) -> Result<Dump> {
    let dump = jsonl::read_dump(path, strictness)?;
    print_diagnostics(path, &dump);
    manifest.input(path)?;
    Ok(dump)
}

fn expect_mode(dump: &Dump, expected: Option<ModeArg>) -> Result<()> {
    match expected.map(Mode::from) {
        Some(m) if m != dump.mode() => Err(cascadekit_core::Error::ModeMismatch {
            expected: m,
            found: dump.mode(),
        }
        .into()),
        _ => Ok(()),
    }
}

/// Ladder, temperatures and the aligned dataset for a routing command.
struct Routed {
    ladder: ModelLadder,
    temps: TemperatureSet,
    dataset: AlignedDataset,
}

fn load_routed(
    dump_path: &Path,
    strictness: Strictness,
    routing: &RoutingArgs,
    manifest: &mut Manifest,
) -> Result<Routed> {
    let dump = load_dump(dump_path, strictness, manifest)?;
    expect_mode(&dump, routing.mode)?;
    let ladder = files::read_ladder(&routing.ladder)?;
    manifest.input(&routing.ladder)?;
    let temps = match &routing.temps {
        Some(p) => {
            manifest.input(p)?;
            files::read_temperatures(p)?
        }
        None => TemperatureSet::identity(&ladder),
    };
    let dataset = align(&dump.records, &ladder)?;
    manifest
        .flag("mode", dump.mode())
        .flag("relevance", routing.relevance)
        .flag("temps", routing.temps.is_some());
    Ok(Routed {
        ladder,
        temps,
        dataset,
    })
}

fn route_mode(mode: Mode, relevance: RelevanceArg) -> RouteMode<'static> {
    static ZERO: ConstantZero = ConstantZero;
    static JACCARD: Jaccard = Jaccard;
    match mode {
        Mode::Classification => RouteMode::Classification,
        Mode::Generation => RouteMode::Generation(match relevance {
            RelevanceArg::Zero => &ZERO as &dyn Similarity,
            RelevanceArg::Jaccard => &JACCARD,
        }),
    }
}

/// The run summary without its per-example decisions.
fn summary_json(run: &RunSummary) -> Value {
    let mut v = serde_json::to_value(run).expect("serializable");
    v.as_object_mut().expect("object").remove("decisions");
    v
}

#[derive(Serialize)]
struct ValidationSummary {
    path: String,
    mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    records: usize,
    examples: usize,
    models: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    aligned_examples: Option<usize>,
    diagnostics: Vec<jsonl::Diagnostic>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let mut m = Manifest::new("validate");
    m.flag("strictness", if a.input.lenient { "lenient" } else { "strict" });
    let dump = load_dump(&a.input.input, a.input.strictness(), &mut m)?;
    let count_distinct = |f: fn(&Record) -> &str| {
        let mut v: Vec<&str> = dump.records.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let aligned_examples = match &a.ladder {
        Some(p) => {
            m.input(p)?;
            Some(align(&dump.records, &files::read_ladder(p)?)?.len())
        }
        None => None,
    };
    let summary = ValidationSummary {
        path: a.input.input.display().to_string(),
        mode: dump.mode(),
        num_classes: dump.header.num_classes,
        records: dump.records.len(),
        examples: count_distinct(Record::example_id),
        models: count_distinct(Record::model_id),
        aligned_examples,
        diagnostics: dump.diagnostics.clone(),
    };
    println!(
        "ok: {}: {} {} records, {} examples, {} models, {} diagnostics{}",
        summary.path,
        summary.records,
        summary.mode,
        summary.examples,
        summary.models,
        summary.diagnostics.len(),
        summary
            .aligned_examples
            .map(|n| format!(", {n} aligned"))
            .unwrap_or_default()
    );
    if let Some(out) = &a.out {
        create_dir(out)?;
        m.output(out, "validation.json", &to_json(&summary))?;
        m.write(&out.join("manifest.json"))?;
    }
    Ok(())
}

fn align_cmd(a: &AlignArgs) -> Result<()> {
    let mut m = Manifest::new("align");
    let dump = load_dump(&a.input.input, a.input.strictness(), &mut m)?;
    let ladder = files::read_ladder(&a.ladder)?;
    m.input(&a.ladder)?;
    let ds = align(&dump.records, &ladder)?;
    create_dir(&a.out)?;
    m.output(&a.out, "aligned.json", &to_json(&ds))?;
    m.write(&a.out.join("manifest.json"))?;
    println!("aligned {} examples across {} stages", ds.len(), ds.num_stages);
    Ok(())
}

/// `--out x.json` names the file; anything else is a directory.
fn split_out(out: &Path, default_name: &str) -> (PathBuf, String, PathBuf) {
    if out.extension().is_some_and(|e| e == "json") {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = out.file_name().unwrap().to_string_lossy().into_owned();
        let stem = out.file_stem().unwrap().to_string_lossy();
        let manifest = dir.join(format!("{stem}.manifest.json"));
        (dir, name, manifest)
    } else {
        (out.to_path_buf(), default_name.into(), out.join("manifest.json"))
    }
}

fn fit_temp(a: &FitTempArgs) -> Result<()> {
    let mut m = Manifest::new("fit-temp");
    let strictness = if a.lenient { Strictness::Lenient } else { Strictness::Strict };
    let dump = load_dump(&a.val, strictness, &mut m)?;
    let ladder = files::read_ladder(&a.ladder)?;
    m.input(&a.ladder)?;
    let opts = FitOptions {
        t_min: a.t_min,
        t_max: a.t_max,
        ..FitOptions::default()
    };
    m.flag("fit", opts).flag("groups", &a.groups);
    let mut ds = align(&dump.records, &ladder)?;
    if let Some(groups) = &a.groups {
        ds.examples.retain(|e| groups.contains(&e.group));
        if ds.examples.is_empty() {
            return Err(Error::Usage(format!("no validation examples in groups {groups:?}")));
        }
    }
    let temps = fit_ladder_temperatures(&ds, &ladder, &opts)?;
    for t in &temps {
        println!(
            "{:<16} T = {:.6}  nll = {:.6}  n = {}{}",
            t.model_id,
            t.value,
            t.fit_nll,
            t.fit_size,
            if t.pinned { "  (pinned at bound)" } else { "" }
        );
    }
    let (dir, name, manifest) = split_out(&a.out, "temps.json");
    if !dir.as_os_str().is_empty() {
        create_dir(&dir)?;
    }
    m.output(&dir, &name, &to_json(&temps))?;
    m.write(&manifest)
}

fn route(a: &RouteArgs) -> Result<()> {
    let mut m = Manifest::new("route");
    m.flag("lambda", a.lambda);
    let r = load_routed(&a.input.input, a.input.strictness(), &a.routing, &mut m)?;
    let mode = route_mode(r.dataset.mode, a.routing.relevance);
    let run = route_dataset(&r.dataset, &r.ladder, &r.temps, a.lambda, mode)?;
    println!(
        "lambda {}: n {}, speed-up {:.4}, mean cost {:.4}, accuracy {}, exits {:?}",
        a.lambda,
        run.n,
        run.speedup,
        run.mean_cost,
        fmt_opt(run.accuracy),
        run.exit_histogram
    );
    create_dir(&a.out)?;
    m.output(&a.out, "summary.json", &to_json(&summary_json(&run)))?;
    m.output(&a.out, "traces.jsonl", &files::traces_jsonl(&run.decisions))?;
    m.write(&a.out.join("manifest.json"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn solve(a: &SolveArgs) -> Result<()> {
    let mut m = Manifest::new("solve");
    m.flag("target_speedup", a.target_speedup).flag("rel_tol", a.rel_tol);
    let strictness = if a.lenient { Strictness::Lenient } else { Strictness::Strict };
    let r = load_routed(&a.dev, strictness, &a.routing, &mut m)?;
    let mode = route_mode(r.dataset.mode, a.routing.relevance);
    let s = solve_for_speedup(&r.dataset, &r.ladder, &r.temps, mode, a.target_speedup, a.rel_tol)?;
    println!(
        "lambda {} achieves speed-up {:.4} (target {})",
        s.lambda, s.achieved_speedup, s.target_speedup
    );
    if !s.attainable {
        match s.ceiling_speedup {
            Some(c) => eprintln!("warning: target not attainable; speed-up is capped at {c:.4}"),
            None => eprintln!("warning: target not attainable within the tolerance"),
        }
    }
    create_dir(&a.out)?;
    m.output(&a.out, "solve.json", &to_json(&s))?;
    m.write(&a.out.join("manifest.json"))
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let mut m = Manifest::new("sweep");
    m.flag("grid", &a.grid);
    let r = load_routed(&a.input.input, a.input.strictness(), &a.routing, &mut m)?;
    let mode = route_mode(r.dataset.mode, a.routing.relevance);
    let grid = match &a.grid {
        Some(v) => Grid::Values(v.clone()),
        None => Grid::Auto,
    };
    let points = sweep(&r.dataset, &r.ladder, &r.temps, mode, &grid)?;
    println!("{} thresholds", points.len());
    create_dir(&a.out)?;
    m.output(&a.out, "sweep.csv", &files::sweep_csv(&points, r.ladder.len()))?;
    m.output(&a.out, "sweep.json", &to_json(&points))?;
    m.write(&a.out.join("manifest.json"))
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut m = Manifest::new("report");
    m.flag("lambda", a.lambda).flag("bins", a.bins).flag("groups", &a.groups);
    let r = load_routed(&a.input.input, a.input.strictness(), &a.routing, &mut m)?;
    let mode = route_mode(r.dataset.mode, a.routing.relevance);
    let run = route_dataset(&r.dataset, &r.ladder, &r.temps, a.lambda, mode)?;
    let only: Option<Vec<&str>> = a.groups.as_ref().map(|g| g.iter().map(String::as_str).collect());
    let groups = group_report(&run.decisions, only.as_deref())?;
    create_dir(&a.out)?;
    let mut out = serde_json::Map::new();
    out.insert("run".into(), summary_json(&run));
    out.insert("groups".into(), serde_json::to_value(&groups).expect("serializable"));
    for g in &groups.rows {
        println!("{:<12} n {:>6}  accuracy {:.4}", g.group, g.n, g.accuracy);
    }
    println!(
        "macro accuracy {:.4}, micro accuracy {:.4}, speed-up {:.4}",
        groups.macro_accuracy, groups.micro_accuracy, run.speedup
    );
    if r.dataset.mode == Mode::Classification {
        let (first, last) = cascade_ece_scopes(&run, &r.dataset, a.bins)?;
        println!(
            "ECE first stage {:.4} ({:.2}%), cascade final {:.4} ({:.2}%)",
            first.ece,
            100.0 * first.ece,
            last.ece,
            100.0 * last.ece
        );
        m.output(&a.out, "bins_first.csv", &files::bins_csv(&first.bins))?;
        m.output(&a.out, "bins_final.csv", &files::bins_csv(&last.bins))?;
        out.insert("ece_first".into(), serde_json::to_value(&first).expect("serializable"));
        out.insert("ece_final".into(), serde_json::to_value(&last).expect("serializable"));
    }
    m.output(&a.out, "report.json", &to_json(&Value::Object(out)))?;
    m.write(&a.out.join("manifest.json"))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainToyConfig {
    pub shift: Option<ShiftConfig>,
    pub ladder: Option<Vec<ModelSpec>>,
    pub loss: Option<LossKind>,
    pub training: Option<TrainOptions>,
}

#[derive(Serialize)]
struct TrainedModel<'a> {
    model: &'a ToyModel,
    log: &'a TrainLog,
}

fn train_toy(a: &TrainToyArgs) -> Result<()> {
    let mut m = Manifest::new("train-toy");
    let cfg: TrainToyConfig = match &a.config {
        Some(p) => {
            m.input(p)?;
            files::read_json(p)?
        }
        None => TrainToyConfig::default(),
    };
    let demo = DemoConfig::default();
    let tau = a.tau.unwrap_or(demo.tau);
    let loss = match (a.loss, cfg.loss) {
        (Some(LossArg::Ce), _) => LossKind::CrossEntropy,
        (Some(LossArg::Logitnorm), _) => LossKind::LogitNorm { tau },
        (None, Some(LossKind::LogitNorm { tau: t })) => LossKind::LogitNorm {
            tau: a.tau.unwrap_or(t),
        },
        (None, Some(l)) => l,
        (None, None) => LossKind::CrossEntropy,
    };
    let training = cfg.training.unwrap_or(match loss {
        LossKind::CrossEntropy => demo.baseline_training,
        LossKind::LogitNorm { .. } => demo.calibrated_training,
    });
    let shift = ShiftConfig {
        seed: a.seed.seed,
        ..cfg.shift.unwrap_or(demo.shift)
    };
    let specs = cfg.ladder.unwrap_or(demo.ladder);
    m.seed = Some(a.seed.seed);
    m.flag("loss", loss).flag("training", training).flag("shift", &shift);
    let data = gen_shift(&shift)?;
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for (stage, spec) in specs.iter().enumerate() {
        let opts = TrainOptions {
            seed: a.seed.seed.wrapping_mul(1000).wrapping_add(stage as u64),
            ..training
        };
        let (model, log) = train(&data.train, spec.clone(), shift.input_dim, shift.num_classes, loss, &opts)?;
        println!(
            "{:<12} params {:>5}  loss {:.4} -> {:.4}  dev accuracy {:.4}",
            spec.model_id,
            model.params.len(),
            log.initial_loss,
            log.final_loss(),
            model.accuracy(&data.dev)?
        );
        models.push(model);
        logs.push(log);
    }
    let ladder = ladder_for(&models)?;
    create_dir(&a.out)?;
    let trained: Vec<TrainedModel> = models
        .iter()
        .zip(&logs)
        .map(|(model, log)| TrainedModel { model, log })
        .collect();
    m.output(&a.out, "models.json", &to_json(&trained))?;
    m.output(&a.out, "ladder.json", &to_json(&ladder))?;
    let pooled: Vec<_> = data.test.iter().flatten().cloned().collect();
    for (split, samples) in [("dev", &data.dev), ("test", &pooled)] {
        let (header, records) = dump_logits(&models, split, samples)?;
        let records: Vec<Record> = records.into_iter().map(Record::Logits).collect();
        let mut buf = Vec::new();
        jsonl::write_dump(&mut buf, &header, &records).map_err(|e| Error::io(&a.out, e))?;
        m.output(&a.out, &format!("{split}.jsonl"), &String::from_utf8(buf).expect("utf-8"))?;
    }
    m.write(&a.out.join("manifest.json"))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut m = Manifest::new("gen-data");
    let base: ShiftConfig = match &a.config {
        Some(p) => {
            m.input(p)?;
            files::read_json(p)?
        }
        None => ShiftConfig::default(),
    };
    let cfg = ShiftConfig {
        seed: a.seed.seed,
        ..base
    };
    m.seed = Some(a.seed.seed);
    let data = gen_shift(&cfg)?;
    create_dir(&a.out)?;
    #[derive(Serialize)]
    struct Row<'a> {
        split: &'a str,
        group: String,
        label: usize,
        features: &'a [f64],
    }
    let lines = |split: &str, samples: &[cascadekit_core::toytrain::Sample]| {
        let mut s = String::new();
        for x in samples {
            let row = Row {
                split,
                group: cascadekit_core::toytrain::group_name(x.group),
                label: x.label,
                features: &x.features,
            };
            s.push_str(&serde_json::to_string(&row).expect("serializable"));
            s.push('\n');
        }
        s
    };
    let pooled: Vec<_> = data.test.iter().flatten().cloned().collect();
    m.output(&a.out, "config.json", &to_json(&cfg))?;
    m.output(&a.out, "train.jsonl", &lines("train", &data.train))?;
    m.output(&a.out, "dev.jsonl", &lines("dev", &data.dev))?;
    m.output(&a.out, "test.jsonl", &lines("test", &pooled))?;
    println!(
        "{} train, {} dev, {} test examples over {} groups",
        data.train.len(),
        data.dev.len(),
        pooled.len(),
        cfg.num_groups()
    );
    m.write(&a.out.join("manifest.json"))
}

fn demo(a: &DemoArgs) -> Result<()> {
    let mut m = Manifest::new("demo");
    let mut cfg: DemoConfig = match &a.config {
        Some(p) => {
            m.input(p)?;
            files::read_json(p)?
        }
        None => DemoConfig::default(),
    };
    if let Some(t) = a.tau {
        cfg.tau = t;
    }
    if let Some(t) = &a.tau_sweep {
        cfg.tau_sweep = t.clone();
    }
    if let Some(t) = &a.target_speedup {
        cfg.target_speedups = t.clone();
    }
    if let Some(b) = a.bins {
        cfg.bins = b;
    }
    cfg.ablations |= a.ablations;
    m.seed = Some(a.seed.seed);
    m.flag("config", &cfg);
    let run = run_demo(a.seed.seed, &cfg)?;
    create_dir(&a.out)?;
    for (name, text) in &run.artifacts {
        m.output(&a.out, name, text)?;
    }
    let table = render_table(&run.report);
    m.output(&a.out, "report.json", &to_json(&run.report))?;
    m.output(&a.out, "report.txt", &table)?;
    print!("{table}");
    m.write(&a.out.join("manifest.json"))
}

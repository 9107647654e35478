//! Seeded synthetic benchmark and a small trainer for cascade ladders.
//!
//! Data are class-conditional Gaussians. Each evaluation group applies a mean
//! shift and a rotation to the source geometry, a stand-in for test languages
//! that drift away from the training language. Models are linear classifiers
//! (optionally restricted to a prefix of the input features) or one-hidden-layer
//! tanh networks, trained by plain mini-batch gradient descent with either
//! cross-entropy or the logit-normalized loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calibration::{self, LogitNormParams};
use crate::dataset::{Header, LogitsRecord, ModelLadder, ModelProfile};
use crate::error::{Error, Result};
use crate::num;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train_size: usize,
    pub dev_size: usize,
    /// Test examples per group.
    pub test_size: usize,
    /// One entry per group; group 0 is the source domain and must be 0.
    pub shift_magnitudes: Vec<f64>,
    /// Rotation (radians) in the plane of the first two features, per group.
    pub rotation_angles: Vec<f64>,
    pub noise_scale: f64,
    /// Distance of each mixture component mean from the origin.
    pub class_separation: f64,
    /// Gaussian components per class; more than one makes the classes
    /// non-linearly separable.
    #[serde(default = "one")]
    pub components_per_class: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            num_classes: 4,
            input_dim: 8,
            train_size: 1200,
            dev_size: 800,
            test_size: 2000,
            shift_magnitudes: vec![0.0, 0.8, 1.6, 2.4],
            rotation_angles: vec![0.0, 0.25, 0.5, 0.75],
            noise_scale: 1.0,
            class_separation: 3.0,
            components_per_class: 3,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn num_groups(&self) -> usize {
        self.shift_magnitudes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes = {}", self.num_classes));
        }
        if self.input_dim < 2 {
            return bad(format!("input_dim = {} (need 2 for rotations)", self.input_dim));
        }
        if self.components_per_class == 0 {
            return bad("components_per_class must be at least 1".into());
        }
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return bad("split sizes must be at least 1".into());
        }
        if self.shift_magnitudes.is_empty() {
            return bad("need at least the source group".into());
        }
        if self.shift_magnitudes.len() != self.rotation_angles.len() {
            return bad("shift_magnitudes and rotation_angles differ in length".into());
        }
        if self.shift_magnitudes[0] != 0.0 || self.rotation_angles[0] != 0.0 {
            return bad("group 0 is the source domain and must be unshifted".into());
        }
        let finite = |v: &f64| v.is_finite();
        if !self.shift_magnitudes.iter().all(finite)
            || !self.rotation_angles.iter().all(finite)
            || !(self.noise_scale > 0.0 && self.noise_scale.is_finite())
            || !self.class_separation.is_finite()
        {
            return bad("shifts, rotations, noise and separation must be finite".into());
        }
        Ok(())
    }
}

pub fn group_name(group: usize) -> String {
    format!("g{group}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedData {
    /// Source domain only.
    pub train: Vec<Sample>,
    /// Source domain only.
    pub dev: Vec<Sample>,
    /// `test[g]` holds group `g`.
    pub test: Vec<Vec<Sample>>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = num::l2_norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

struct Geometry {
    /// `[class][component]` mean vectors.
    class_means: Vec<Vec<Vec<f64>>>,
    shift_direction: Vec<f64>,
}

fn draw(
    rng: &mut ChaCha8Rng,
    geo: &Geometry,
    cfg: &ShiftConfig,
    group: usize,
    count: usize,
) -> Vec<Sample> {
    let (sin, cos) = libm::sincos(cfg.rotation_angles[group]);
    let shift = cfg.shift_magnitudes[group];
    (0..count)
        .map(|_| {
            let label = rng.random_range(0..cfg.num_classes);
            let component = rng.random_range(0..cfg.components_per_class);
            let noise = gaussian_vec(rng, cfg.input_dim);
            let mut x: Vec<f64> = geo.class_means[label][component]
                .iter()
                .zip(&noise)
                .map(|(m, e)| m + cfg.noise_scale * e)
                .collect();
            let (a, b) = (x[0], x[1]);
            x[0] = cos * a - sin * b;
            x[1] = sin * a + cos * b;
            for (xi, ui) in x.iter_mut().zip(&geo.shift_direction) {
                *xi += shift * ui;
            }
            Sample {
                features: x,
                label,
                group,
            }
        })
        .collect()
}

/// Draws train/dev from the source group and one test split per group.
pub fn gen_shift(config: &ShiftConfig) -> Result<ShiftedData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let class_means = (0..config.num_classes)
        .map(|_| {
            (0..config.components_per_class)
                .map(|_| {
                    unit(gaussian_vec(&mut rng, config.input_dim))
                        .into_iter()
                        .map(|v| v * config.class_separation)
                        .collect()
                })
                .collect()
        })
        .collect();
    let geo = Geometry {
        class_means,
        shift_direction: unit(gaussian_vec(&mut rng, config.input_dim)),
    };
    let train = draw(&mut rng, &geo, config, 0, config.train_size);
    let dev = draw(&mut rng, &geo, config, 0, config.dev_size);
    let test = (0..config.num_groups())
        .map(|g| draw(&mut rng, &geo, config, g, config.test_size))
        .collect();
    Ok(ShiftedData { train, dev, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Linear classifier over the first `input_dims` features.
    Linear { input_dims: usize },
    /// `W2 tanh(W1 x + b1) + b2` over all features.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    LogitNorm { tau: f64 },
}

impl LossKind {
    pub fn loss(&self, logits: &[f64], label: usize) -> Result<f64> {
        match self {
            LossKind::CrossEntropy => calibration::cross_entropy(logits, label),
            LossKind::LogitNorm { tau } => {
                calibration::logitnorm_loss(logits, label, &LogitNormParams::with_tau(*tau))
            }
        }
    }

    pub fn grad(&self, logits: &[f64], label: usize) -> Result<Vec<f64>> {
        match self {
            LossKind::CrossEntropy => calibration::cross_entropy_grad(logits, label),
            LossKind::LogitNorm { tau } => {
                calibration::logitnorm_grad(logits, label, &LogitNormParams::with_tau(*tau))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub architecture: Architecture,
}

/// A trained (or freshly initialized) toy classifier with flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub num_classes: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Linear: `W (q x k)` row-major then `b (q)`.
    /// Mlp: `W1 (h x d)`, `b1 (h)`, `W2 (q x h)`, `b2 (q)`.
    pub params: Vec<f64>,
}

pub fn param_count(arch: &Architecture, input_dim: usize, num_classes: usize) -> usize {
    match *arch {
        Architecture::Linear { input_dims } => num_classes * input_dims + num_classes,
        Architecture::Mlp { hidden } => {
            hidden * input_dim + hidden + num_classes * hidden + num_classes
        }
    }
}

impl ToyModel {
    /// Small seeded initial weights, none exactly zero.
    pub fn init(
        spec: ModelSpec,
        input_dim: usize,
        num_classes: usize,
        loss: LossKind,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 || input_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "model '{}' needs q >= 2 and d >= 1",
                spec.model_id
            )));
        }
        match spec.architecture {
            Architecture::Linear { input_dims } if input_dims == 0 || input_dims > input_dim => {
                return Err(Error::InvalidConfig(format!(
                    "model '{}' reads {input_dims} of {input_dim} features",
                    spec.model_id
                )))
            }
            Architecture::Mlp { hidden: 0 } => {
                return Err(Error::InvalidConfig(format!(
                    "model '{}' has an empty hidden layer",
                    spec.model_id
                )))
            }
            _ => {}
        }
        if let LossKind::LogitNorm { tau } = loss {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidConfig(format!("tau = {tau}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = match spec.architecture {
            Architecture::Linear { input_dims } => input_dims,
            Architecture::Mlp { .. } => input_dim,
        };
        let scale = 0.1 / libm::sqrt(fan_in as f64);
        let n = param_count(&spec.architecture, input_dim, num_classes);
        let params = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-scale..scale);
                if v.abs() < scale * 1e-3 {
                    libm::copysign(scale * 1e-3, v)
                } else {
                    v
                }
            })
            .collect();
        Ok(ToyModel {
            spec,
            input_dim,
            num_classes,
            loss,
            seed,
            params,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.spec.model_id
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).0)
    }

    /// Logits and, for the MLP, the hidden activations.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.num_classes;
        let p = &self.params;
        match self.spec.architecture {
            Architecture::Linear { input_dims: k } => {
                let logits = (0..q)
                    .map(|c| {
                        let row = &p[c * k..(c + 1) * k];
                        row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[q * k + c]
                    })
                    .collect();
                (logits, Vec::new())
            }
            Architecture::Mlp { hidden: h } => {
                let d = self.input_dim;
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(q * h);
                let act: Vec<f64> = (0..h)
                    .map(|j| {
                        let z = w1[j * d..(j + 1) * d]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                            + b1[j];
                        libm::tanh(z)
                    })
                    .collect();
                let logits = (0..q)
                    .map(|c| {
                        w2[c * h..(c + 1) * h]
                            .iter()
                            .zip(&act)
                            .map(|(w, a)| w * a)
                            .sum::<f64>()
                            + b2[c]
                    })
                    .collect();
                (logits, act)
            }
        }
    }

    /// Adds `d loss / d params` for one sample into `grad`.
    fn accumulate_grad(&self, x: &[f64], dlogits: &[f64], act: &[f64], grad: &mut [f64]) {
        let q = self.num_classes;
        match self.spec.architecture {
            Architecture::Linear { input_dims: k } => {
                for c in 0..q {
                    for (j, v) in x[..k].iter().enumerate() {
                        grad[c * k + j] += dlogits[c] * v;
                    }
                    grad[q * k + c] += dlogits[c];
                }
            }
            Architecture::Mlp { hidden: h } => {
                let d = self.input_dim;
                let w2 = &self.params[h * d + h..h * d + h + q * h];
                let (g_w1, rest) = grad.split_at_mut(h * d);
                let (g_b1, rest) = rest.split_at_mut(h);
                let (g_w2, g_b2) = rest.split_at_mut(q * h);
                for c in 0..q {
                    for j in 0..h {
                        g_w2[c * h + j] += dlogits[c] * act[j];
                    }
                    g_b2[c] += dlogits[c];
                }
                for j in 0..h {
                    let back: f64 = (0..q).map(|c| dlogits[c] * w2[c * h + j]).sum();
                    let dz = back * (1.0 - act[j] * act[j]);
                    for (i, v) in x.iter().enumerate() {
                        g_w1[j * d + i] += dz * v;
                    }
                    g_b1[j] += dz;
                }
            }
        }
    }

    /// Mean training loss over `batch` and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for s in batch {
            self.check_input(&s.features)?;
            let (logits, act) = self.forward(&s.features);
            total += self.loss.loss(&logits, s.label)?;
            let dlogits = self.loss.grad(&logits, s.label)?;
            self.accumulate_grad(&s.features, &dlogits, &act, &mut grad);
        }
        let n = batch.len().max(1) as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((total / n, grad))
    }

    pub fn mean_loss(&self, samples: &[Sample]) -> Result<f64> {
        let refs: Vec<&Sample> = samples.iter().collect();
        Ok(self.loss_and_grad(&refs)?.0)
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        let mut hits = 0usize;
        for s in samples {
            hits += (num::argmax(&self.logits(&s.features)?) == s.label) as usize;
        }
        Ok(hits as f64 / samples.len().max(1) as f64)
    }

    /// Mean max-probability of the raw (T = 1) softmax.
    pub fn mean_confidence(&self, samples: &[Sample]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            total += calibration::confidence(&self.logits(&s.features)?, 1.0)?.0;
        }
        Ok(total / samples.len().max(1) as f64)
    }

    pub fn logit_norms(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|s| Ok(num::l2_norm(&self.logits(&s.features)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.1,
            epochs: 40,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_loss: f64,
    /// Full-data training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Plain mini-batch gradient descent with a seeded shuffle every epoch.
pub fn train(
    data: &[Sample],
    spec: ModelSpec,
    input_dim: usize,
    num_classes: usize,
    loss: LossKind,
    options: &TrainOptions,
) -> Result<(ToyModel, TrainLog)> {
    train_with(data, spec, input_dim, num_classes, loss, options, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    data: &[Sample],
    spec: ModelSpec,
    input_dim: usize,
    num_classes: usize,
    loss: LossKind,
    options: &TrainOptions,
    mut on_epoch: impl FnMut(usize, &ToyModel),
) -> Result<(ToyModel, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if options.batch_size == 0 || !(options.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} and learning_rate {} must be positive",
            options.batch_size, options.learning_rate
        )));
    }
    if let Some(bad) = data.iter().find(|s| s.label >= num_classes) {
        return Err(Error::InvalidLabel {
            label: bad.label,
            num_classes,
        });
    }
    let mut model = ToyModel::init(spec, input_dim, num_classes, loss, options.seed)?;
    let initial_loss = model.mean_loss(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        for (batch_index, chunk) in order.chunks(options.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, grad) = model.loss_and_grad(&batch)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= options.learning_rate * g;
            }
        }
        let l = model.mean_loss(data)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        epoch_losses.push(l);
        on_epoch(epoch, &model);
    }
    Ok((
        model,
        TrainLog {
            initial_loss,
            epoch_losses,
        },
    ))
}

/// Ladder whose stage costs are the models' parameter counts.
pub fn ladder_for(models: &[ToyModel]) -> Result<ModelLadder> {
    let q = models.first().map(|m| m.num_classes);
    if let Some(bad) = models.iter().find(|m| Some(m.num_classes) != q) {
        return Err(Error::DimensionMismatch {
            expected: q.unwrap_or(0),
            found: bad.num_classes,
        });
    }
    let profiles = models
        .iter()
        .enumerate()
        .map(|(i, m)| ModelProfile {
            model_id: m.spec.model_id.clone(),
            stage_index: i,
            cost_units: m.params.len() as f64,
        })
        .collect();
    ModelLadder::new(profiles, q)
}

/// Example id of the `index`-th sample of `split`.
pub fn example_id(split: &str, group: usize, index: usize) -> String {
    format!("{split}-{}-{index:05}", group_name(group))
}

/// One logits record per (sample, model), model-major within each sample.
pub fn dump_logits(
    models: &[ToyModel],
    split: &str,
    samples: &[Sample],
) -> Result<(Header, Vec<LogitsRecord>)> {
    let q = models.first().ok_or(Error::EmptyDataset)?.num_classes;
    let mut records = Vec::with_capacity(models.len() * samples.len());
    for m in models {
        if m.num_classes != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: m.num_classes,
            });
        }
    }
    for (i, s) in samples.iter().enumerate() {
        if s.label >= q {
            return Err(Error::InvalidLabel {
                label: s.label,
                num_classes: q,
            });
        }
        for m in models {
            records.push(LogitsRecord {
                example_id: example_id(split, s.group, i),
                model_id: m.model_id().into(),
                logits: m.logits(&s.features)?,
                label: Some(s.label),
                group: group_name(s.group),
                raw_text: None,
            });
        }
    }
    Ok((Header::classification(q), records))
}

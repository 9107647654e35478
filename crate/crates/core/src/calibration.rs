//! Confidence scoring and calibration.
//!
//! Classification confidence is the maximum of the temperature-scaled softmax.
//! Temperatures are fitted per model by minimizing validation NLL. Training-time
//! calibration is the logit-normalized cross-entropy, which scores the logits
//! after rescaling them to norm `1 / tau`. Generation confidence is a
//! relevance-weighted mean token entropy (lower means more confident).
//!
//! All logarithms are natural; entropies and NLL are in nats.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{AlignedDataset, Mode, ModelLadder, StageOutput};
use crate::error::{Error, Result};
use crate::num;

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::TooFewClasses(logits.len()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogits);
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTemperature(t))
    }
}

fn check_label(label: usize, q: usize) -> Result<()> {
    if label < q {
        Ok(())
    } else {
        Err(Error::InvalidLabel {
            label,
            num_classes: q,
        })
    }
}

fn scaled(logits: &[f64], t: f64) -> Vec<f64> {
    logits.iter().map(|v| v / t).collect()
}

/// Softmax of `logits / t`, computed with max-subtraction.
pub fn softmax(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_logits(logits)?;
    check_temperature(t)?;
    Ok(num::softmax_vec(&scaled(logits, t)))
}

/// Maximum scaled-softmax probability and the predicted class.
///
/// The class is the index of the largest raw logit (lowest index on ties), so
/// it never depends on `t`.
pub fn confidence(logits: &[f64], t: f64) -> Result<(f64, usize)> {
    let probs = softmax(logits, t)?;
    let class = num::argmax(logits);
    Ok((probs[class], class))
}

/// Mean negative log-likelihood of `softmax(logits / t)` over labeled pairs.
pub fn mean_nll(val: &[(&[f64], usize)], t: f64) -> Result<f64> {
    check_temperature(t)?;
    if val.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let mut total = 0.0;
    for (logits, label) in val {
        check_logits(logits)?;
        check_label(*label, logits.len())?;
        total += num::cross_entropy(&scaled(logits, t), *label);
    }
    Ok(total / val.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub t_min: f64,
    pub t_max: f64,
    /// Convergence tolerance on `log T`, also the minimum NLL improvement
    /// over `T = 1` required to accept a fitted value.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            t_min: 0.05,
            t_max: 20.0,
            tol: 1e-4,
        }
    }
}

/// A fitted temperature for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    pub model_id: String,
    #[serde(rename = "T")]
    pub value: f64,
    pub fit_nll: f64,
    pub fit_size: usize,
    /// The optimum sat on a bound of the search interval.
    pub pinned: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Fits `T` by golden-section search on `log T` over `[t_min, t_max]`.
///
/// Falls back to `T = 1` when the fitted value does not beat it by at least
/// `tol` in mean NLL.
pub fn fit_temperature(
    model_id: &str,
    val: &[(&[f64], usize)],
    options: &FitOptions,
) -> Result<Temperature> {
    if val.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    let FitOptions { t_min, t_max, tol } = *options;
    if !(t_min > 0.0 && t_max > t_min && t_max.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "temperature bounds [{t_min}, {t_max}] with tol {tol}"
        )));
    }
    let objective = |log_t: f64| mean_nll(val, libm::exp(log_t));

    let (lo, hi) = (libm::log(t_min), libm::log(t_max));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d)?;
        }
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    let mut pinned = false;
    for edge in [lo, hi] {
        let f = objective(edge)?;
        if f < best.1 {
            best = (edge, f);
        }
    }
    if best.0 - lo <= tol || hi - best.0 <= tol {
        pinned = true;
    }

    let identity_nll = mean_nll(val, 1.0)?;
    let (value, fit_nll) = if best.1 > identity_nll - tol {
        pinned = false;
        (1.0, identity_nll)
    } else {
        let t = match best.0 {
            x if x == lo => t_min,
            x if x == hi => t_max,
            x => libm::exp(x),
        };
        (t, best.1)
    };
    Ok(Temperature {
        model_id: model_id.into(),
        value,
        fit_nll,
        fit_size: val.len(),
        pinned,
    })
}

/// Fits one temperature per ladder stage on the labeled examples of `dataset`.
pub fn fit_ladder_temperatures(
    dataset: &AlignedDataset,
    ladder: &ModelLadder,
    options: &FitOptions,
) -> Result<Vec<Temperature>> {
    if dataset.mode != Mode::Classification {
        return Err(Error::ModeMismatch {
            expected: Mode::Classification,
            found: dataset.mode,
        });
    }
    (0..ladder.len())
        .map(|stage| {
            let val: Vec<(&[f64], usize)> = dataset
                .examples
                .iter()
                .filter_map(|e| match (&e.outputs[stage], e.label) {
                    (StageOutput::Logits(l), Some(y)) => Some((l.as_slice(), y)),
                    _ => None,
                })
                .collect();
            fit_temperature(ladder.model_id(stage), &val, options)
        })
        .collect()
}

/// Temperatures keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSet {
    by_model: BTreeMap<String, f64>,
}

impl TemperatureSet {
    /// `T = 1` for every ladder model: the uncalibrated cascade.
    pub fn identity(ladder: &ModelLadder) -> Self {
        TemperatureSet {
            by_model: ladder
                .profiles()
                .iter()
                .map(|p| (p.model_id.clone(), 1.0))
                .collect(),
        }
    }

    pub fn from_fitted(temps: &[Temperature]) -> Self {
        TemperatureSet {
            by_model: temps.iter().map(|t| (t.model_id.clone(), t.value)).collect(),
        }
    }

    pub fn insert(&mut self, model_id: &str, t: f64) -> Result<()> {
        check_temperature(t)?;
        self.by_model.insert(model_id.into(), t);
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Result<f64> {
        self.by_model
            .get(model_id)
            .copied()
            .ok_or_else(|| Error::MissingTemperature(model_id.into()))
    }
}

/// Hyper-parameters of the logit-normalized loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitNormParams {
    pub tau: f64,
    /// Logits with norm at or below this are rejected.
    pub epsilon: f64,
}

impl Default for LogitNormParams {
    fn default() -> Self {
        LogitNormParams {
            tau: 0.04,
            epsilon: 1e-12,
        }
    }
}

impl LogitNormParams {
    pub fn with_tau(tau: f64) -> Self {
        LogitNormParams {
            tau,
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("tau = {}", self.tau)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "epsilon = {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Validates inputs and returns `tau * ||l||`.
    fn scale(&self, logits: &[f64], label: usize) -> Result<f64> {
        self.check()?;
        check_logits(logits)?;
        check_label(label, logits.len())?;
        let norm = num::l2_norm(logits);
        if norm <= self.epsilon {
            return Err(Error::ZeroNormLogits);
        }
        Ok(self.tau * norm)
    }
}

/// Standard softmax cross-entropy `-log softmax(l)[y]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    check_logits(logits)?;
    check_label(label, logits.len())?;
    Ok(num::cross_entropy(logits, label))
}

/// Gradient of [`cross_entropy`] with respect to the logits: `p - e_y`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    check_logits(logits)?;
    check_label(label, logits.len())?;
    let mut g = num::softmax_vec(logits);
    g[label] -= 1.0;
    Ok(g)
}

/// Cross-entropy of `l / (tau * ||l||)`.
pub fn logitnorm_loss(logits: &[f64], label: usize, params: &LogitNormParams) -> Result<f64> {
    let s = params.scale(logits, label)?;
    Ok(num::cross_entropy(&scaled(logits, s), label))
}

/// Gradient of [`logitnorm_loss`] with respect to the raw logits.
///
/// With `z = l / (tau ||l||)` and `g = softmax(z) - e_y`, the chain rule through
/// the normalization gives `(g - l (l.g) / ||l||^2) / (tau ||l||)`, which is
/// orthogonal to `l`.
pub fn logitnorm_grad(logits: &[f64], label: usize, params: &LogitNormParams) -> Result<Vec<f64>> {
    let s = params.scale(logits, label)?;
    let mut g = num::softmax_vec(&scaled(logits, s));
    g[label] -= 1.0;
    let norm_sq: f64 = logits.iter().map(|v| v * v).sum();
    let radial: f64 = logits.iter().zip(&g).map(|(l, g)| l * g).sum::<f64>() / norm_sq;
    Ok(g.iter()
        .zip(logits)
        .map(|(g, l)| (g - l * radial) / s)
        .collect())
}

/// Picks the class logits out of a decoder's vocabulary logits.
pub fn extract_class_logits(vocab_logits: &[f64], class_token_ids: &[u32]) -> Result<Vec<f64>> {
    if class_token_ids.len() < 2 {
        return Err(Error::TooFewClasses(class_token_ids.len()));
    }
    let mut seen = BTreeSet::new();
    class_token_ids
        .iter()
        .map(|&id| {
            if !seen.insert(id) {
                return Err(Error::DuplicateClassToken(id));
            }
            vocab_logits
                .get(id as usize)
                .copied()
                .ok_or(Error::TokenOutOfRange {
                    token_id: id,
                    vocab_size: vocab_logits.len(),
                })
        })
        .collect()
}

/// `-ln p` for a generated token's probability.
pub fn token_entropy(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(-num::ln(p))
}

/// Relevance-weighted entropy of a generated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfidence {
    pub entropy: f64,
    pub per_token_entropies: Vec<f64>,
    pub relevances: Vec<f64>,
}

/// `E = mean_i(-ln p_i * (1 - R_i))`.
pub fn sequence_confidence(token_probs: &[f64], relevances: &[f64]) -> Result<SequenceConfidence> {
    if token_probs.len() != relevances.len() {
        return Err(Error::LengthMismatch {
            expected: token_probs.len(),
            found: relevances.len(),
        });
    }
    if token_probs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some((index, &value)) = relevances
        .iter()
        .enumerate()
        .find(|(_, r)| !(0.0..=1.0).contains(*r))
    {
        return Err(Error::InvalidRelevance { index, value });
    }
    let per_token_entropies = token_probs
        .iter()
        .map(|&p| token_entropy(p))
        .collect::<Result<Vec<_>>>()?;
    let entropy = num::mean(
        per_token_entropies
            .iter()
            .zip(relevances)
            .map(|(e, r)| e * (1.0 - r)),
    )
    .expect("non-empty");
    Ok(SequenceConfidence {
        entropy,
        per_token_entropies,
        relevances: relevances.to_vec(),
    })
}

/// Similarity between a generated sequence and a copy with one token removed.
pub trait Similarity {
    fn name(&self) -> &'static str;

    /// Must return a value in `[0, 1]`.
    fn similarity(&self, full: &[u32], reduced: &[u32]) -> f64;
}

/// `R_i = 0` for every token: plain mean token entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantZero;

impl Similarity for ConstantZero {
    fn name(&self) -> &'static str {
        "constant_zero"
    }

    fn similarity(&self, _full: &[u32], _reduced: &[u32]) -> f64 {
        0.0
    }
}

/// Jaccard index of the two token sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jaccard;

impl Similarity for Jaccard {
    fn name(&self) -> &'static str {
        "jaccard"
    }

    fn similarity(&self, full: &[u32], reduced: &[u32]) -> f64 {
        let a: BTreeSet<u32> = full.iter().copied().collect();
        let b: BTreeSet<u32> = reduced.iter().copied().collect();
        let union = a.union(&b).count();
        if union == 0 {
            return 1.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// `R_i = similarity(full, full without token i)`.
pub fn relevance_scores(token_ids: &[u32], similarity: &dyn Similarity) -> Result<Vec<f64>> {
    let mut reduced = Vec::with_capacity(token_ids.len().saturating_sub(1));
    (0..token_ids.len())
        .map(|i| {
            reduced.clear();
            reduced.extend_from_slice(&token_ids[..i]);
            reduced.extend_from_slice(&token_ids[i + 1..]);
            let value = similarity.similarity(token_ids, &reduced);
            if (0.0..=1.0).contains(&value) {
                Ok(value)
            } else {
                Err(Error::InvalidSimilarity {
                    plugin: similarity.name(),
                    index: i,
                    value,
                })
            }
        })
        .collect()
}

//! Small numeric helpers shared across modules.

use libm::{exp, log, log1p};

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `-log softmax(z)[target]`, accurate even when the loss is tiny.
///
/// The max entry contributes `exp(0) = 1` exactly, so the log-sum-exp is
/// evaluated as `log1p` of the remaining mass.
pub(crate) fn cross_entropy(z: &[f64], target: usize) -> f64 {
    let top = argmax(z);
    let m = z[top];
    let mut rest = 0.0;
    for (i, &v) in z.iter().enumerate() {
        if i != top {
            rest += exp(v - m);
        }
    }
    (m - z[target]) + log1p(rest)
}

/// Stable softmax of `z` written into a new vector.
pub(crate) fn softmax_vec(z: &[f64]) -> alloc::vec::Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: alloc::vec::Vec<f64> = z.iter().map(|&v| exp(v - m)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub(crate) fn ln(x: f64) -> f64 {
    log(x)
}

/// Arithmetic mean with left-to-right summation.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes `softmax(logits) − one_hot(label)` into `grad` and returns
/// `−log softmax(logits)[label]`. Caller guarantees `label < logits.len()`.
pub(crate) fn softmax_cross_entropy_raw(logits: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[label] -= 1.0;
    // log-sum-exp minus the target logit; clamp tiny negative roundoff.
    (max + sum.ln() - logits[label]).max(0.0)
}

pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 1 {
        return Err(Error::Dimension(format!(
            "logits must be 1-D, got {:?}",
            logits.shape()
        )));
    }
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut grad = vec![0.0; logits.len()];
    let loss = softmax_cross_entropy_raw(logits.data(), label, &mut grad);
    Ok((loss, Tensor::new(vec![logits.len()], grad)?))
}

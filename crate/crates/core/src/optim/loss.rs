use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_FLOOR, 1]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Allowed deviation of a probability row from unit sum.
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LossValue<T: Real> {
    /// Mean negative log-likelihood over the batch.
    pub value: f64,
    /// Gradient with respect to the pre-softmax logits, `(p - onehot) / batch`.
    pub grad_logits: Tensor<T>,
}

/// Sparse categorical cross-entropy of softmax outputs `[batch, classes]`
/// (or a single `[classes]` row) against integer labels.
pub fn cross_entropy<T: Real>(probabilities: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    let (batch, classes) = match *probabilities.shape() {
        [n] => (1, n),
        [b, n] => (b, n),
        _ => {
            return Err(Error::shape(format!(
                "cross-entropy expects [batch, classes], got {:?}",
                probabilities.shape()
            )))
        }
    };
    if labels.len() != batch {
        return Err(Error::shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let scale = T::lit(1.0 / batch as f64);
    let mut total = 0.0;
    let mut grad = probabilities.clone();
    for (row, (g, &label)) in grad.data_mut().chunks_mut(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::Label {
                label,
                n_classes: classes,
            });
        }
        let sum: f64 = g.iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || g.iter().any(|&p| p < T::zero()) {
            return Err(Error::Distribution { row, sum });
        }
        total -= g[label].as_f64().clamp(PROB_FLOOR, 1.0).ln();
        g[label] -= T::one();
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(LossValue {
        value: total / batch as f64,
        grad_logits: grad,
    })
}

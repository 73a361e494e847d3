//! Softmax cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss and logit gradient for a single example, computed with the
/// max-subtracted log-sum-exp.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<(T, Tensor<T>)> {
    let (loss, grad) = xent_row(logits.data(), label)?;
    Ok((loss, Tensor::from_vec(logits.dims(), grad)?))
}

fn xent_row<T: Scalar>(z: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= z.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (z[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / total).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean loss over a batch.
#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    pub mean: T,
    /// Per-example losses.
    pub losses: Vec<T>,
    /// Gradient of the mean loss w.r.t. the `batch x classes` logits.
    pub grad: Tensor<T>,
}

pub fn softmax_xent_batch<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<BatchLoss<T>> {
    let batch = logits.dims()[0];
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let classes = logits.len() / batch;
    let scale = T::one() / T::from_usize(batch).unwrap();
    let mut losses = Vec::with_capacity(batch);
    let mut grad = Vec::with_capacity(logits.len());
    for (b, &label) in labels.iter().enumerate() {
        let (l, g) = xent_row(&logits.data()[b * classes..(b + 1) * classes], label)?;
        losses.push(l);
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    let mean = losses.iter().copied().sum::<T>() * scale;
    Ok(BatchLoss {
        mean,
        losses,
        grad: Tensor::from_vec(logits.dims(), grad)?,
    })
}

use super::{fully_connected, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, k] = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let sum: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::from_op(logits.shape().to_vec(), out, "softmax")
}

fn check_labels(labels: &[usize], batch: usize, k: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels supplied for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {bad} is out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let [batch, k] = probs.dims2()?;
    check_labels(labels, batch, k)?;
    let total: f64 = probs
        .data()
        .chunks_exact(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / batch as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients {
    pub weights: Tensor,
    pub bias: Tensor,
    pub loss: f64,
}

/// Analytic gradient of softmax cross-entropy for a linear head.
///
/// With `dlogits = (probs - onehot) / batch`, returns `featuresᵀ · dlogits`,
/// the column sums of `dlogits`, and the loss at the current parameters.
pub fn head_gradients(
    features: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    labels: &[usize],
) -> Result<HeadGradients> {
    let [batch, d] = features.dims2()?;
    let probs = softmax(&fully_connected(features, weights, bias)?)?;
    let k = probs.channels();
    let loss = cross_entropy(&probs, labels)?;

    let mut dlogits = probs.into_data();
    for (row, &l) in dlogits.chunks_exact_mut(k).zip(labels) {
        row[l] -= 1.0;
        row.iter_mut().for_each(|v| *v /= batch as f64);
    }
    let mut dw = vec![0.0; d * k];
    let mut db = vec![0.0; k];
    for (x, g) in features.data().chunks_exact(d).zip(dlogits.chunks_exact(k)) {
        for (i, &xv) in x.iter().enumerate() {
            for (acc, &gv) in dw[i * k..(i + 1) * k].iter_mut().zip(g) {
                *acc += xv * gv;
            }
        }
        for (acc, &gv) in db.iter_mut().zip(g) {
            *acc += gv;
        }
    }
    Ok(HeadGradients {
        weights: Tensor::from_op(vec![d, k], dw, "head_gradients")?,
        bias: Tensor::from_op(vec![k], db, "head_gradients")?,
        loss,
    })
}

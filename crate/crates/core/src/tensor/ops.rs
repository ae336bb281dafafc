use super::Tensor;
use crate::error::{Error, Result};

/// Inference-mode batch normalization statistics, one entry per channel.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams<'a> {
    pub mean: &'a Tensor,
    pub variance: &'a Tensor,
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub epsilon: f64,
}

impl BatchNormParams<'_> {
    /// Number of channels, after checking the parameter shapes and ranges.
    pub fn validate(&self) -> Result<usize> {
        let c = self.mean.dims1()?;
        for (name, t) in [
            ("variance", self.variance),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape(format!(
                    "batch-norm {name} has shape {:?}, expected [{c}]",
                    t.shape()
                )));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("batch-norm epsilon must be positive"));
        }
        if self.variance.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("batch-norm variance must be non-negative"));
        }
        Ok(c)
    }
}

pub fn relu(input: &Tensor) -> Result<Tensor> {
    input.map("relu", |v| v.max(0.0))
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` along the last axis.
pub fn batch_norm(input: &Tensor, p: &BatchNormParams<'_>) -> Result<Tensor> {
    let c = p.validate()?;
    if input.channels() != c {
        return Err(Error::shape(format!(
            "batch-norm expects {c} channels, input has {}",
            input.channels()
        )));
    }
    let (mean, var, gamma, beta) = (p.mean.data(), p.variance.data(), p.gamma.data(), p.beta.data());
    let data = input
        .data()
        .chunks_exact(c)
        .flat_map(|px| {
            px.iter().enumerate().map(move |(i, &x)| {
                gamma[i] * (x - mean[i]) / (var[i] + p.epsilon).sqrt() + beta[i]
            })
        })
        .collect();
    Tensor::from_op(input.shape().to_vec(), data, "batch_norm")
}

/// Concatenates along the last axis; every other dimension must agree.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat needs at least one input"))?;
    let lead = &first.shape()[..first.rank() - 1];
    for t in inputs {
        if t.rank() != first.rank() || &t.shape()[..t.rank() - 1] != lead {
            return Err(Error::shape(format!(
                "concat inputs disagree outside the channel axis: {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
    }
    let widths: Vec<usize> = inputs.iter().map(|t| t.channels()).collect();
    let total: usize = widths.iter().sum();
    let pixels = first.len() / widths[0];
    let mut data = Vec::with_capacity(pixels * total);
    for p in 0..pixels {
        for (t, &cw) in inputs.iter().zip(&widths) {
            data.extend_from_slice(&t.data()[p * cw..(p + 1) * cw]);
        }
    }
    let mut shape = first.shape().to_vec();
    *shape.last_mut().unwrap() = total;
    Tensor::from_op(shape, data, "concat_channels")
}

/// `x · W + b` for `x: [batch, d]`, `W: [d, k]`, `b: [k]`.
pub fn fully_connected(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [batch, d] = x.dims2()?;
    let [wd, k] = weights.dims2()?;
    if wd != d {
        return Err(Error::shape(format!(
            "fully_connected input width {d} does not match weight rows {wd}"
        )));
    }
    if bias.shape() != [k] {
        return Err(Error::shape(format!(
            "fully_connected bias shape {:?} does not match {k} outputs",
            bias.shape()
        )));
    }
    let w = weights.data();
    let mut out = Vec::with_capacity(batch * k);
    for row in x.data().chunks_exact(d) {
        let mut acc = bias.data().to_vec();
        for (i, &xv) in row.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[i * k..(i + 1) * k]) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    Tensor::from_op(vec![batch, k], out, "fully_connected")
}

/// Elementwise sum of two same-shaped tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "add operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_op(a.shape().to_vec(), data, "add")
}

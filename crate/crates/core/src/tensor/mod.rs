//! Dense `f64` tensors in batch-height-width-channel layout and the numeric
//! operators needed to evaluate inception-style graphs.
//!
//! Every operator is a pure function: inputs are borrowed, a fresh tensor is
//! returned, and the result is checked to contain only finite values.

mod conv;
mod image_ops;
mod loss;
mod ops;
mod pool;

pub use conv::{conv2d, output_extent, ConvSpec, Padding};
pub use image_ops::{normalize_pixels, resize_bilinear, PixelNorm};
pub(crate) use image_ops::bilinear_taps;
pub use loss::{cross_entropy, head_gradients, softmax, HeadGradients};
pub use ops::{add, batch_norm, concat_channels, fully_connected, relu, BatchNormParams};
pub use pool::{global_avg_pool, pool, PoolMode};

use crate::error::{Error, Result};

/// Maximum supported rank.
pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating rank (1..=4), positive dimensions, the
    /// element count and finiteness of every value.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {expected} elements but {} values were supplied",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor data contains NaN or infinite values"));
        }
        Ok(Tensor { shape, data })
    }

    /// Result constructor used by operators: the shape is trusted, the values
    /// are checked for finiteness.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: &'static str) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor { shape, data })
    }

    /// A tensor of the given shape filled with `value`.
    ///
    /// Panics if the shape is invalid or `value` is not finite.
    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("valid shape and finite fill value")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, h, w, c] => Ok([n, h, w, c]),
            _ => Err(Error::shape(format!(
                "expected a 4-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::shape(format!(
                "expected a 2-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims1(&self) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(Error::shape(format!(
                "expected a 1-D tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Size of the trailing (channel / feature) axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Channel slice `[start, end)` along the last axis.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let c = self.channels();
        if start >= end || end > c {
            return Err(Error::shape(format!(
                "channel range {start}..{end} is invalid for {c} channels"
            )));
        }
        let width = end - start;
        let data = self
            .data
            .chunks_exact(c)
            .flat_map(|px| px[start..end].iter().copied())
            .collect();
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = width;
        Ok(Tensor { shape, data })
    }

    /// Rows `[start, end)` of the leading (batch) axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(Error::shape(format!(
                "batch range {start}..{end} is invalid for batch size {n}"
            )));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * stride..end * stride].to_vec(),
        })
    }

    /// Gathers the listed batch rows, in order.
    pub fn gather_batch(&self, rows: &[usize]) -> Result<Tensor> {
        let n = self.shape[0];
        if rows.is_empty() {
            return Err(Error::shape("cannot gather an empty set of rows"));
        }
        let stride = self.data.len() / n;
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= n {
                return Err(Error::shape(format!("row {r} out of range for batch {n}")));
            }
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Ok(Tensor { shape, data })
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let inner = &first.shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut batch = 0;
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(Error::shape(format!(
                    "cannot stack shapes {:?} and {:?}",
                    first.shape, p.shape
                )));
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Tensor { shape, data })
    }

    /// Index of the largest value in each row of a 2-D tensor; the lowest
    /// index wins ties.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let [_, k] = self.dims2()?;
        Ok(self
            .data
            .chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Largest absolute elementwise difference; infinite when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy with every value rounded to the nearest `f32`.
    pub fn round_to_f32(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    /// True when every value survives a round trip through `f32` unchanged.
    pub fn is_f32_exact(&self) -> bool {
        self.data.iter().all(|&v| (v as f32 as f64) == v)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::from_op(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect(), op)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank must be between 1 and {MAX_RANK}, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!(
            "every dimension must be positive, got shape {shape:?}"
        )));
    }
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-tensor affine int8 mapping: `value = scale * (q - zero_point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantDescriptor {
    pub scale: f64,
    pub zero_point: i32,
    pub shape: Vec<usize>,
}

impl QuantDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::invalid(format!(
                "quantization scale must be positive, got {}",
                self.scale
            )));
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(Error::invalid(format!(
                "zero point {} is outside [-128, 127]",
                self.zero_point
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dequantize(&self, q: i8) -> f64 {
        self.scale * (i32::from(q) - self.zero_point) as f64
    }
}

/// Storage type of a weight blob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::I8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Quantized {
    desc: QuantDescriptor,
    values: Vec<i8>,
}

/// A constant weight tensor attached to a graph node.
///
/// Float parameters are kept as-is and serialized as `f32` whenever that is
/// lossless (`f64` otherwise). Quantized parameters keep their int8 codes and
/// carry the dequantized tensor used for compute.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    value: Tensor,
    quant: Option<Quantized>,
}

impl Param {
    pub fn float(value: Tensor) -> Self {
        Param { value, quant: None }
    }

    pub fn quantized(values: Vec<i8>, desc: QuantDescriptor) -> Result<Self> {
        desc.validate()?;
        let data = values.iter().map(|&q| desc.dequantize(q)).collect();
        let value = Tensor::new(desc.shape.clone(), data)?;
        Ok(Param {
            value,
            quant: Some(Quantized { desc, values }),
        })
    }

    /// The tensor used for computation.
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    pub fn quant(&self) -> Option<(&QuantDescriptor, &[i8])> {
        self.quant.as_ref().map(|q| (&q.desc, q.values.as_slice()))
    }

    pub fn dtype(&self) -> Dtype {
        match &self.quant {
            Some(_) => Dtype::I8,
            None if self.value.is_f32_exact() => Dtype::F32,
            None => Dtype::F64,
        }
    }

    /// Serialized payload size.
    pub fn payload_bytes(&self) -> usize {
        self.len() * self.dtype().size()
    }
}

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// One output coordinate's source neighbours and interpolation weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre bilinear taps: sample at `(i + 0.5) * in/out - 0.5`,
/// clamped to the source extent.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of an NHWC image batch.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, h, w, c] = image.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(image.clone());
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let x = image.data();
    let at = |b: usize, y: usize, xx: usize, ch: usize| x[((b * h + y) * w + xx) * c + ch];
    let mut out = Vec::with_capacity(n * out_h * out_w * c);
    for b in 0..n {
        for ty in &rows {
            for tx in &cols {
                for ch in 0..c {
                    let top = at(b, ty.lo, tx.lo, ch) * (1.0 - tx.frac) + at(b, ty.lo, tx.hi, ch) * tx.frac;
                    let bottom =
                        at(b, ty.hi, tx.lo, ch) * (1.0 - tx.frac) + at(b, ty.hi, tx.hi, ch) * tx.frac;
                    out.push(top * (1.0 - ty.frac) + bottom * ty.frac);
                }
            }
        }
    }
    Tensor::from_op(vec![n, out_h, out_w, c], out, "resize_bilinear")
}

/// Pixel scaling applied before inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelNorm {
    /// `x / 255`, range `[0, 1]`.
    Unit,
    /// `x / 127.5 - 1`, range `[-1, 1]`.
    #[default]
    Symmetric,
}

impl PixelNorm {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            PixelNorm::Unit => v / 255.0,
            PixelNorm::Symmetric => v / 127.5 - 1.0,
        }
    }
}

pub fn normalize_pixels(image: &Tensor, mode: PixelNorm) -> Result<Tensor> {
    image.map("normalize_pixels", |v| mode.apply(v))
}

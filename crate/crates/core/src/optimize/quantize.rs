use crate::error::{Error, Result};
use crate::graph::{CompGraph, Param, QuantDescriptor};
use crate::tensor::Tensor;

use super::rebuild_with;

/// Per-tensor affine int8 quantization.
///
/// The quantized range always contains zero: `lo = min(min, 0)`,
/// `hi = max(max, 0)`, `scale = (hi - lo) / 255` and the zero point maps `lo`
/// to -128. A tensor whose elements all equal `v`, with `round(v)` in
/// `[-127, 128]`, is stored as `scale = 1`, `zero_point = -round(v)` and all
/// codes 0.
pub fn quantize_tensor(t: &Tensor) -> (Vec<i8>, QuantDescriptor) {
    let data = t.data();
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shape = t.shape().to_vec();

    if min == max && (-127.0..=128.0).contains(&min.round()) {
        let desc = QuantDescriptor {
            scale: 1.0,
            zero_point: -(min.round() as i32),
            shape,
        };
        return (vec![0; data.len()], desc);
    }

    let lo = min.min(0.0);
    let hi = max.max(0.0);
    let scale = (hi - lo) / 255.0;
    let zero_point = (-128.0 - (lo / scale).round()).clamp(-128.0, 127.0) as i32;
    let codes = data
        .iter()
        .map(|&w| ((w / scale).round() + zero_point as f64).clamp(-128.0, 127.0) as i8)
        .collect();
    (
        codes,
        QuantDescriptor {
            scale,
            zero_point,
            shape,
        },
    )
}

/// Quantized copy of a parameter; already-quantized parameters are kept.
pub fn quantize_param(p: &Param) -> Param {
    if p.is_quantized() {
        return p.clone();
    }
    let (codes, desc) = quantize_tensor(p.value());
    Param::quantized(codes, desc).expect("quantizer produces valid descriptors")
}

/// Stores every constant weight tensor as int8. Compute stays in floating
/// point on the dequantized values.
pub fn quantize_weights(graph: &CompGraph, bits: u32) -> Result<CompGraph> {
    if bits != 8 {
        return Err(Error::UnsupportedBits(bits));
    }
    rebuild_with(graph, |mut node| {
        for p in node.op.params_mut() {
            *p = quantize_param(p);
        }
        Ok(Some(node))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip_error(t: &Tensor) -> (f64, QuantDescriptor) {
        let (codes, desc) = quantize_tensor(t);
        let err = t
            .data()
            .iter()
            .zip(&codes)
            .map(|(&w, &q)| (w - desc.dequantize(q)).abs())
            .fold(0.0, f64::max);
        (err, desc)
    }

    #[test]
    fn symmetric_unit_range() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.25, 1.0]).unwrap();
        let (err, desc) = round_trip_error(&t);
        assert!((desc.scale - 2.0 / 255.0).abs() < 1e-15);
        assert!(err <= desc.scale / 2.0);
        assert!(desc.scale / 2.0 <= 0.003922);
    }

    #[test]
    fn zeros_and_constants() {
        let (err, desc) = round_trip_error(&Tensor::zeros(&[5]));
        assert_eq!(err, 0.0);
        assert_eq!((desc.scale, desc.zero_point), (1.0, 0));

        let (err, desc) = round_trip_error(&Tensor::full(&[4], 3.7));
        assert_eq!((desc.scale, desc.zero_point), (1.0, -4));
        assert!(err <= 0.5);

        // Out of zero-point range: falls back to the zero-inclusive range.
        let (err, desc) = round_trip_error(&Tensor::full(&[2], -900.0));
        assert!(err <= desc.scale / 2.0);
    }

    #[test]
    fn one_sided_ranges_keep_zero_point_in_bounds() {
        for data in [vec![0.5, 0.75, 1.0], vec![-3.0, -2.0, -2.5]] {
            let t = Tensor::new(vec![3], data).unwrap();
            let (err, desc) = round_trip_error(&t);
            desc.validate().unwrap();
            assert!(err <= desc.scale / 2.0);
        }
    }

    #[test]
    fn rejects_other_widths() {
        let g = crate::graph::build_mini_inception(2, 0).unwrap();
        assert!(matches!(quantize_weights(&g, 4), Err(Error::UnsupportedBits(4))));
    }
}

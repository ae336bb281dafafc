use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Spatial padding rule.
///
/// `Same` pads with zeros so that `out = ceil(in / stride)`; when the total
/// padding is odd the extra row/column goes on the bottom/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Convolution parameters. The kernel is laid out `[kh, kw, cin, cout]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec<'a> {
    pub kernel: &'a Tensor,
    pub bias: Option<&'a Tensor>,
    pub stride: (usize, usize),
    pub padding: Padding,
}

/// Output length and leading padding along one spatial axis.
pub fn output_extent(
    input: usize,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if window > input {
                return Err(Error::shape(format!(
                    "window {window} exceeds input extent {input} under valid padding"
                )));
            }
            Ok(((input - window) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + window).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// 2-D convolution (cross-correlation) over an NHWC input.
pub fn conv2d(input: &Tensor, spec: &ConvSpec<'_>) -> Result<Tensor> {
    let [n, h, w, cin] = input.dims4()?;
    let [kh, kw, kcin, cout] = spec.kernel.dims4().map_err(|_| {
        Error::shape(format!(
            "conv kernel must be [kh, kw, cin, cout], got {:?}",
            spec.kernel.shape()
        ))
    })?;
    if kcin != cin {
        return Err(Error::shape(format!(
            "conv input has {cin} channels but kernel expects {kcin}"
        )));
    }
    if let Some(bias) = spec.bias {
        if bias.shape() != [cout] {
            return Err(Error::shape(format!(
                "conv bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
    }
    let (sh, sw) = spec.stride;
    let (oh, pad_top) = output_extent(h, kh, sh, spec.padding)?;
    let (ow, pad_left) = output_extent(w, kw, sw, spec.padding)?;

    let x = input.data();
    let k = spec.kernel.data();
    let mut out = vec![0.0; n * oh * ow * cout];
    out.par_chunks_mut(ow * cout)
        .enumerate()
        .for_each(|(row, out_row)| {
            let b = row / oh;
            let oy = row % oh;
            for ox in 0..ow {
                let acc = &mut out_row[ox * cout..(ox + 1) * cout];
                if let Some(bias) = spec.bias {
                    acc.copy_from_slice(bias.data());
                }
                for ky in 0..kh {
                    let Some(iy) = (oy * sh + ky).checked_sub(pad_top).filter(|&y| y < h) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = (ox * sw + kx).checked_sub(pad_left).filter(|&x| x < w)
                        else {
                            continue;
                        };
                        let px = &x[((b * h + iy) * w + ix) * cin..][..cin];
                        let taps = &k[(ky * kw + kx) * cin * cout..][..cin * cout];
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let krow = &taps[ci * cout..(ci + 1) * cout];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += v * kv;
                            }
                        }
                    }
                }
            }
        });
    Tensor::from_op(vec![n, oh, ow, cout], out, "conv2d")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn scaled_identity_kernel() {
        let input = Tensor::full(&[1, 3, 3, 1], 1.0);
        let kernel = Tensor::full(&[1, 1, 1, 1], 2.0);
        let spec = ConvSpec { kernel: &kernel, bias: None, stride: (1, 1), padding: Padding::Same };
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3, 1]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn strided_valid_window_sums() {
        let input = ramp(&[1, 4, 4, 1]);
        let kernel = Tensor::full(&[2, 2, 1, 1], 1.0);
        let spec = ConvSpec { kernel: &kernel, bias: None, stride: (2, 2), padding: Padding::Valid };
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 1]);
        assert_eq!(out.data(), &[10., 18., 42., 50.]);
    }

    #[test]
    fn zero_kernel_annihilates() {
        let input = ramp(&[2, 5, 4, 3]);
        let kernel = Tensor::zeros(&[3, 3, 3, 4]);
        let spec = ConvSpec { kernel: &kernel, bias: None, stride: (1, 2), padding: Padding::Same };
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[2, 5, 2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_names_dimensions() {
        let input = ramp(&[1, 4, 4, 2]);
        let kernel = Tensor::zeros(&[3, 3, 3, 4]);
        let spec = ConvSpec { kernel: &kernel, bias: None, stride: (1, 1), padding: Padding::Same };
        let err = conv2d(&input, &spec).unwrap_err().to_string();
        assert!(err.contains("2 channels") && err.contains("expects 3"), "{err}");
    }

    #[test]
    fn same_padding_puts_extra_on_bottom_right() {
        // 4 wide, window 2, stride 1: total pad 1, all of it after the input.
        assert_eq!(output_extent(4, 2, 1, Padding::Same).unwrap(), (4, 0));
        // window 3: pad 1 before, 1 after.
        assert_eq!(output_extent(4, 3, 1, Padding::Same).unwrap(), (4, 1));
        // 32 wide, window 3, stride 2: out 16, total pad 1 -> 0 before.
        assert_eq!(output_extent(32, 3, 2, Padding::Same).unwrap(), (16, 0));
        assert!(output_extent(2, 3, 1, Padding::Valid).is_err());
    }

    #[test]
    fn asymmetric_kernels_are_supported() {
        let input = ramp(&[1, 7, 7, 2]);
        let k17 = Tensor::full(&[1, 7, 2, 3], 1.0);
        let k71 = Tensor::full(&[7, 1, 3, 1], 1.0);
        let a = conv2d(&input, &ConvSpec { kernel: &k17, bias: None, stride: (1, 1), padding: Padding::Same }).unwrap();
        let b = conv2d(&a, &ConvSpec { kernel: &k71, bias: None, stride: (1, 1), padding: Padding::Same }).unwrap();
        assert_eq!(b.shape(), &[1, 7, 7, 1]);
    }
}

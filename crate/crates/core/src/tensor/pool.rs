use serde::{Deserialize, Serialize};

use super::{output_extent, Padding, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// Windowed max or average pooling over an NHWC tensor.
///
/// Padded positions never contribute: max ignores them and avg divides by the
/// number of in-bounds elements.
pub fn pool(
    input: &Tensor,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let [n, h, w, c] = input.dims4()?;
    let (oh, pad_top) = output_extent(h, window.0, stride.0, padding)?;
    let (ow, pad_left) = output_extent(w, window.1, stride.1, padding)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut acc = vec![0.0; c];
    for b in 0..n {
        for oy in 0..oh {
            let y0 = (oy * stride.0) as isize - pad_top as isize;
            let ys = y0.max(0) as usize..((y0 + window.0 as isize).min(h as isize)).max(0) as usize;
            for ox in 0..ow {
                let x0 = (ox * stride.1) as isize - pad_left as isize;
                let xs =
                    x0.max(0) as usize..((x0 + window.1 as isize).min(w as isize)).max(0) as usize;
                let count = ys.len() * xs.len();
                if count == 0 {
                    return Err(Error::shape(format!(
                        "pool window at ({oy}, {ox}) covers no input elements"
                    )));
                }
                acc.fill(match mode {
                    PoolMode::Max => f64::NEG_INFINITY,
                    PoolMode::Avg => 0.0,
                });
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        let px = &x[((b * h + iy) * w + ix) * c..][..c];
                        for (a, &v) in acc.iter_mut().zip(px) {
                            match mode {
                                PoolMode::Max => *a = a.max(v),
                                PoolMode::Avg => *a += v,
                            }
                        }
                    }
                }
                match mode {
                    PoolMode::Max => out.extend_from_slice(&acc),
                    PoolMode::Avg => out.extend(acc.iter().map(|a| a / count as f64)),
                }
            }
        }
    }
    Tensor::from_op(vec![n, oh, ow, c], out, "pool")
}

/// Spatial mean per channel: `[n, h, w, c] -> [n, c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = input.dims4()?;
    let area = (h * w) as f64;
    let mut out = vec![0.0; n * c];
    for (b, image) in input.data().chunks_exact(h * w * c).enumerate() {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in image.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= area);
    }
    Tensor::from_op(vec![n, c], out, "global_avg_pool")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp16() -> Tensor {
        Tensor::new(vec![1, 4, 4, 1], (0..16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn constant_input_is_invariant() {
        let t = Tensor::full(&[2, 5, 6, 3], 4.25);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            for padding in [Padding::Same, Padding::Valid] {
                let out = pool(&t, mode, (3, 2), (2, 1), padding).unwrap();
                assert!(out.data().iter().all(|&v| v == 4.25), "{mode:?} {padding:?}");
            }
        }
    }

    #[test]
    fn max_pool_2x2() {
        let out = pool(&ramp16(), PoolMode::Max, (2, 2), (2, 2), Padding::Valid).unwrap();
        assert_eq!(out.data(), &[5., 7., 13., 15.]);
    }

    #[test]
    fn avg_of_four() {
        let t = Tensor::new(vec![1, 2, 2, 1], vec![1., 3., 5., 7.]).unwrap();
        let out = pool(&t, PoolMode::Avg, (2, 2), (1, 1), Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.]);
    }

    #[test]
    fn avg_same_divides_by_in_bounds_count() {
        // Corner window of a 3x3 pool over a 2x2 input sees all four values.
        let t = Tensor::new(vec![1, 2, 2, 1], vec![1., 3., 5., 7.]).unwrap();
        let out = pool(&t, PoolMode::Avg, (3, 3), (1, 1), Padding::Same).unwrap();
        assert_eq!(out.data(), &[4., 4., 4., 4.]);
    }

    #[test]
    fn oversized_valid_window_is_rejected() {
        assert!(pool(&ramp16(), PoolMode::Max, (5, 5), (1, 1), Padding::Valid).is_err());
    }

    #[test]
    fn global_pool_basics() {
        let t = Tensor::full(&[2, 3, 3, 4], -1.5);
        let g = global_avg_pool(&t).unwrap();
        assert_eq!(g.shape(), &[2, 4]);
        assert!(g.data().iter().all(|&v| v == -1.5));

        let px = Tensor::new(vec![1, 1, 1, 3], vec![1., -2., 3.]).unwrap();
        assert_eq!(global_avg_pool(&px).unwrap().data(), &[1., -2., 3.]);

        assert!(global_avg_pool(&Tensor::zeros(&[2, 3])).is_err());
    }
}

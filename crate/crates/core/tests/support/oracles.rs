//! Straightforward reference implementations used as test oracles.
//!
//! Everything here works on plain `Vec<f64>` buffers with explicit index
//! arithmetic and deliberately shares no code with the library kernels.
#![allow(dead_code)]

/// `(output_len, pad_before)` for one axis.
pub fn extent(input: usize, window: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = input.div_ceil(stride);
        let needed = (out - 1) * stride + window;
        let total = needed.saturating_sub(input);
        (out, total / 2)
    } else {
        ((input - window) / stride + 1, 0)
    }
}

/// Direct definition of NHWC convolution with HWIO kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [n, h, w, cin]: [usize; 4],
    k: &[f64],
    [kh, kw, _, cout]: [usize; 4],
    bias: Option<&[f64]>,
    (sh, sw): (usize, usize),
    same: bool,
) -> (Vec<f64>, [usize; 4]) {
    let (oh, pt) = extent(h, kh, sh, same);
    let (ow, pl) = extent(w, kw, sw, same);
    let mut out = vec![0.0; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut sum = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * sh + ky) as isize - pt as isize;
                            let ix = (ox * sw + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xi = ((b * h + iy as usize) * w + ix as usize) * cin + ci;
                                let ki = ((ky * kw + kx) * cin + ci) * cout + co;
                                sum += x[xi] * k[ki];
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        sum += bias[co];
                    }
                    out[((b * oh + oy) * ow + ox) * cout + co] = sum;
                }
            }
        }
    }
    (out, [n, oh, ow, cout])
}

/// Max (`max = true`) or in-bounds average pooling.
pub fn pool(
    x: &[f64],
    [n, h, w, c]: [usize; 4],
    max: bool,
    (wh, ww): (usize, usize),
    (sh, sw): (usize, usize),
    same: bool,
) -> (Vec<f64>, [usize; 4]) {
    let (oh, pt) = extent(h, wh, sh, same);
    let (ow, pl) = extent(w, ww, sw, same);
    let mut out = vec![0.0; n * oh * ow * c];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut vals = Vec::new();
                    for dy in 0..wh {
                        for dx in 0..ww {
                            let iy = (oy * sh + dy) as isize - pt as isize;
                            let ix = (ox * sw + dx) as isize - pl as isize;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                vals.push(x[((b * h + iy as usize) * w + ix as usize) * c + ch]);
                            }
                        }
                    }
                    let v = if max {
                        vals.iter().cloned().fold(f64::MIN, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    };
                    out[((b * oh + oy) * ow + ox) * c + ch] = v;
                }
            }
        }
    }
    (out, [n, oh, ow, c])
}

pub fn global_avg_pool(x: &[f64], [n, h, w, c]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut sum = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    sum += x[((b * h + y) * w + xx) * c + ch];
                }
            }
            out[b * c + ch] = sum / (h * w) as f64;
        }
    }
    out
}

/// `x[batch, d] · w[d, k] + b[k]` by the triple loop.
pub fn matmul_bias(x: &[f64], batch: usize, d: usize, w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; batch * k];
    for r in 0..batch {
        for j in 0..k {
            let mut s = 0.0;
            for i in 0..d {
                s += x[r * d + i] * w[i * k + j];
            }
            out[r * k + j] = s + b[j];
        }
    }
    out
}

/// Mean softmax cross-entropy of a linear head, written out scalar by scalar.
pub fn head_loss(x: &[f64], batch: usize, d: usize, w: &[f64], k: usize, b: &[f64], labels: &[usize]) -> f64 {
    let logits = matmul_bias(x, batch, d, w, k, b);
    let mut total = 0.0;
    for r in 0..batch {
        let row = &logits[r * k..(r + 1) * k];
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let p = ((row[labels[r]] - m).exp() / z).max(1e-12);
        total -= p.ln();
    }
    total / batch as f64
}

/// Central finite-difference gradient of `head_loss` w.r.t. `w` and `b`.
pub fn head_grad_fd(
    x: &[f64],
    batch: usize,
    d: usize,
    w: &[f64],
    k: usize,
    b: &[f64],
    labels: &[usize],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; w.len()];
    for i in 0..w.len() {
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[i] += h;
        wm[i] -= h;
        dw[i] = (head_loss(x, batch, d, &wp, k, b, labels) - head_loss(x, batch, d, &wm, k, b, labels)) / (2.0 * h);
    }
    let mut db = vec![0.0; b.len()];
    for j in 0..b.len() {
        let mut bp = b.to_vec();
        let mut bm = b.to_vec();
        bp[j] += h;
        bm[j] -= h;
        db[j] = (head_loss(x, batch, d, w, k, &bp, labels) - head_loss(x, batch, d, w, k, &bm, labels)) / (2.0 * h);
    }
    (dw, db)
}

/// Relative error with a small absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Weight-scalar count of the desk-scale inception network, tallied from its
/// layer table: every conv is bias-free and followed by a 4-vector batch norm.
pub fn mini_inception_param_count(num_classes: usize) -> usize {
    // (kh, kw, cin, cout)
    let convs: &[(usize, usize, usize, usize)] = &[
        (3, 3, 3, 16),
        (3, 3, 16, 32),
        // mixed_a, input 32 channels
        (1, 1, 32, 16),
        (1, 1, 32, 16),
        (3, 3, 16, 24),
        (1, 1, 32, 8),
        (3, 3, 8, 12),
        (3, 3, 12, 12),
        (1, 1, 32, 12),
        // mixed_b, input 64 channels
        (1, 1, 64, 24),
        (1, 1, 64, 24),
        (3, 3, 24, 32),
        (1, 1, 64, 12),
        (3, 3, 12, 16),
        (3, 3, 16, 16),
        (1, 1, 64, 24),
    ];
    let conv: usize = convs.iter().map(|&(a, b, c, d)| a * b * c * d + 4 * d).sum();
    conv + 96 * num_classes + num_classes
}

/// Small deterministic generator (SplitMix64) so oracle inputs do not depend
/// on the library's RNG choices.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as i64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform float in `[lo, hi)`.
    pub fn float(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    pub fn ints(&mut self, n: usize, lo: i64, hi: i64) -> Vec<f64> {
        (0..n).map(|_| self.int(lo, hi) as f64).collect()
    }
}

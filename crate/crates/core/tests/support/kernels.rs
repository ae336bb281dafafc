//! Seeded comparisons of library kernels against the naive oracles. Each
//! check returns the number of cases run, or a description of the first
//! mismatch.
#![allow(dead_code)]

use canopy_core::tensor::{
    conv2d, fully_connected, global_avg_pool, head_gradients, pool, softmax, ConvSpec, Padding, PoolMode,
};
use canopy_core::Tensor;

use super::oracles::{self, SplitMix};

fn padding(same: bool) -> Padding {
    if same {
        Padding::Same
    } else {
        Padding::Valid
    }
}

fn exact(label: &str, case: usize, got: &Tensor, want: &[f64], shape: &[usize]) -> Result<(), String> {
    if got.shape() != shape {
        return Err(format!("{label} case {case}: shape {:?} vs oracle {shape:?}", got.shape()));
    }
    match got.data().iter().zip(want).position(|(a, b)| a != b) {
        None => Ok(()),
        Some(i) => Err(format!(
            "{label} case {case}: element {i} is {} but the oracle gives {}",
            got.data()[i],
            want[i]
        )),
    }
}

/// Random spatial extent and window such that a valid-padding window fits.
fn geometry(rng: &mut SplitMix) -> (usize, usize, usize, usize, usize, usize, bool) {
    let h = 1 + rng.below(8);
    let w = 1 + rng.below(8);
    let same = rng.below(2) == 0;
    let kh = 1 + rng.below(if same { 4 } else { h.min(4) });
    let kw = 1 + rng.below(if same { 4 } else { w.min(4) });
    let sh = 1 + rng.below(3);
    let sw = 1 + rng.below(3);
    (h, w, kh, kw, sh, sw, same)
}

pub fn check_conv2d(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix(seed);
    for case in 0..cases {
        let (h, w, kh, kw, sh, sw, same) = geometry(&mut rng);
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(4);
        let cout = 1 + rng.below(4);
        let x = rng.ints(n * h * w * cin, -4, 4);
        let k = rng.ints(kh * kw * cin * cout, -3, 3);
        let bias = (rng.below(2) == 0).then(|| rng.ints(cout, -5, 5));
        let (want, shape) = oracles::conv2d(&x, [n, h, w, cin], &k, [kh, kw, cin, cout], bias.as_deref(), (sh, sw), same);
        let xt = Tensor::new(vec![n, h, w, cin], x).unwrap();
        let kt = Tensor::new(vec![kh, kw, cin, cout], k).unwrap();
        let bt = bias.map(|b| Tensor::new(vec![cout], b).unwrap());
        let spec = ConvSpec {
            kernel: &kt,
            bias: bt.as_ref(),
            stride: (sh, sw),
            padding: padding(same),
        };
        let got = conv2d(&xt, &spec).map_err(|e| format!("conv2d case {case}: {e}"))?;
        exact("conv2d", case, &got, &want, &shape)?;
    }
    Ok(cases)
}

pub fn check_pool(mode: PoolMode, cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix(seed);
    for case in 0..cases {
        let (h, w, wh, ww, sh, sw, same) = geometry(&mut rng);
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(4);
        let x = rng.ints(n * h * w * c, -9, 9);
        let (want, shape) = oracles::pool(&x, [n, h, w, c], mode == PoolMode::Max, (wh, ww), (sh, sw), same);
        let xt = Tensor::new(vec![n, h, w, c], x).unwrap();
        let got = pool(&xt, mode, (wh, ww), (sh, sw), padding(same)).map_err(|e| format!("pool case {case}: {e}"))?;
        exact(&format!("{mode:?} pool"), case, &got, &want, &shape)?;
    }
    Ok(cases)
}

pub fn check_global_avg_pool(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix(seed);
    for case in 0..cases {
        let dims = [1 + rng.below(3), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(4)];
        let x = rng.ints(dims.iter().product(), -9, 9);
        let want = oracles::global_avg_pool(&x, dims);
        let got = global_avg_pool(&Tensor::new(dims.to_vec(), x).unwrap()).map_err(|e| e.to_string())?;
        exact("global_avg_pool", case, &got, &want, &[dims[0], dims[3]])?;
    }
    Ok(cases)
}

pub fn check_fully_connected(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = SplitMix(seed);
    for case in 0..cases {
        let (batch, d, k) = (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(6));
        let x = rng.ints(batch * d, -6, 6);
        let w = rng.ints(d * k, -4, 4);
        let b = rng.ints(k, -5, 5);
        let want = oracles::matmul_bias(&x, batch, d, &w, k, &b);
        let got = fully_connected(
            &Tensor::new(vec![batch, d], x).unwrap(),
            &Tensor::new(vec![d, k], w).unwrap(),
            &Tensor::new(vec![k], b).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        exact("fully_connected", case, &got, &want, &[batch, k])?;
    }
    Ok(cases)
}

/// Largest relative error between analytic head gradients and central
/// differences over `instances` random (batch 4, d 3, k 6) problems.
pub fn head_gradient_error(instances: usize, seed: u64, h: f64) -> f64 {
    let (batch, d, k) = (4, 3, 6);
    let mut rng = SplitMix(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x: Vec<f64> = (0..batch * d).map(|_| rng.float(-1.0, 1.0)).collect();
        let w: Vec<f64> = (0..d * k).map(|_| rng.float(-0.5, 0.5)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.float(-0.5, 0.5)).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.below(k)).collect();
        let (fd_w, fd_b) = oracles::head_grad_fd(&x, batch, d, &w, k, &b, &labels, h);
        let g = head_gradients(
            &Tensor::new(vec![batch, d], x).unwrap(),
            &Tensor::new(vec![d, k], w).unwrap(),
            &Tensor::new(vec![k], b).unwrap(),
            &labels,
        )
        .unwrap();
        for (a, n) in g.weights.data().iter().zip(&fd_w).chain(g.bias.data().iter().zip(&fd_b)) {
            worst = worst.max(oracles::rel_err(*a, *n));
        }
    }
    worst
}

#[derive(Debug)]
pub struct SoftmaxContracts {
    pub max_row_sum_error: f64,
    pub max_shift_difference: f64,
    pub large_logits_finite: bool,
    pub large_logits_row_sum_error: f64,
}

pub fn softmax_contracts(cases: usize, seed: u64) -> SoftmaxContracts {
    let mut rng = SplitMix(seed);
    let mut out = SoftmaxContracts {
        max_row_sum_error: 0.0,
        max_shift_difference: 0.0,
        large_logits_finite: true,
        large_logits_row_sum_error: 0.0,
    };
    let row_sum_error = |p: &Tensor, k: usize| {
        p.data()
            .chunks(k)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    };
    for _ in 0..cases {
        let (rows, k) = (1 + rng.below(5), 2 + rng.below(9));
        let logits: Vec<f64> = (0..rows * k).map(|_| rng.float(-20.0, 20.0)).collect();
        let t = Tensor::new(vec![rows, k], logits.clone()).unwrap();
        let p = softmax(&t).unwrap();
        out.max_row_sum_error = out.max_row_sum_error.max(row_sum_error(&p, k));

        let shift = rng.float(-50.0, 50.0);
        let shifted = Tensor::new(vec![rows, k], logits.iter().map(|v| v + shift).collect()).unwrap();
        out.max_shift_difference = out.max_shift_difference.max(softmax(&shifted).unwrap().max_abs_diff(&p));

        let large: Vec<f64> = (0..rows * k)
            .map(|_| if rng.below(2) == 0 { 1000.0 } else { -1000.0 } * rng.float(0.5, 1.0))
            .collect();
        match softmax(&Tensor::new(vec![rows, k], large).unwrap()) {
            Ok(p) => {
                out.large_logits_finite &= p.data().iter().all(|v| v.is_finite());
                out.large_logits_row_sum_error = out.large_logits_row_sum_error.max(row_sum_error(&p, k));
            }
            Err(_) => out.large_logits_finite = false,
        }
    }
    out
}

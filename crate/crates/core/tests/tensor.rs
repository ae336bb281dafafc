mod support;

use canopy_core::tensor::{resize_bilinear, PoolMode};
use canopy_core::Tensor;
use support::kernels;

#[test]
fn conv2d_matches_naive_loops() {
    assert_eq!(kernels::check_conv2d(80, 1), Ok(80));
}

#[test]
fn max_pool_matches_naive_loops() {
    assert_eq!(kernels::check_pool(PoolMode::Max, 80, 2), Ok(80));
}

#[test]
fn avg_pool_matches_naive_loops() {
    assert_eq!(kernels::check_pool(PoolMode::Avg, 80, 3), Ok(80));
}

#[test]
fn global_avg_pool_matches_naive_loops() {
    assert_eq!(kernels::check_global_avg_pool(60, 4), Ok(60));
}

#[test]
fn fully_connected_matches_naive_loops() {
    assert_eq!(kernels::check_fully_connected(60, 5), Ok(60));
}

#[test]
fn head_gradients_match_finite_differences() {
    let err = kernels::head_gradient_error(30, 6, 1e-5);
    assert!(err <= 1e-4, "max relative error {err}");
}

#[test]
fn softmax_contracts_hold() {
    let c = kernels::softmax_contracts(100, 7);
    assert!(c.max_row_sum_error <= 1e-6, "{c:?}");
    assert!(c.max_shift_difference <= 1e-9, "{c:?}");
    assert!(c.large_logits_finite, "{c:?}");
    assert!(c.large_logits_row_sum_error <= 1e-6, "{c:?}");
}

#[test]
fn phone_photo_resizes_to_inception_input() {
    let photo = Tensor::full(&[1, 4023, 3024, 3], 0.5);
    let resized = resize_bilinear(&photo, 299, 299).unwrap();
    assert_eq!(resized.shape(), &[1, 299, 299, 3]);
    assert!(resized.data().iter().all(|&v| v == 0.5));
}

mod common;

use common::*;
use lsk_core::ops::{self, BinaryOp, ConvSpec, PoolMode};
use lsk_core::{Shape4, Tensor4};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

fn small_shape() -> impl Strategy<Value = Shape4> {
    (1usize..=3, 1usize..=8, 1usize..=8, 1usize..=8).prop_map(|(n, c, h, w)| Shape4::new(n, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn depthwise_matches_loops(shape in small_shape(), k in prop::sample::select(vec![1usize, 3, 5, 7]), d in 1usize..=3, seed: u64) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape, 2.0);
        let w = random_tensor(&mut r, [shape.c, 1, k, k], 2.0);
        let b = random_vec(&mut r, shape.c, 2.0);
        let got = ops::depthwise_conv(&x, &w, &b, &ConvSpec::same(k, d)).unwrap();
        prop_assert!(max_abs_diff(&got, &depthwise(&x, &w, &b, k, d)) <= TOL);
    }

    #[test]
    fn pointwise_matches_loops(shape in small_shape(), c_out in 1usize..=8, seed: u64) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape, 2.0);
        let w = random_tensor(&mut r, [c_out, shape.c, 1, 1], 2.0);
        let b = random_vec(&mut r, c_out, 2.0);
        let got = ops::pointwise_conv(&x, &w, &b).unwrap();
        prop_assert!(max_abs_diff(&got, &pointwise(&x, &w, &b)) <= TOL);
    }

    #[test]
    fn conv2d_matches_loops(shape in small_shape(), c_out in 1usize..=4, k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..=3, seed: u64) {
        let pad = k / 2;
        prop_assume!(shape.h + 2 * pad >= k && shape.w + 2 * pad >= k);
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape, 2.0);
        let w = random_tensor(&mut r, [c_out, shape.c, k, k], 2.0);
        let b = random_vec(&mut r, c_out, 2.0);
        let got = ops::conv2d(&x, &w, &b, &ConvSpec::strided(k, stride, pad)).unwrap();
        prop_assert!(max_abs_diff(&got, &conv2d(&x, &w, &b, stride, pad)) <= TOL);
    }

    #[test]
    fn channel_pools_match_loops(shape in small_shape(), seed: u64) {
        let x = random_tensor(&mut rng(seed), shape, 2.0);
        prop_assert!(max_abs_diff(&ops::channel_pool(&x, PoolMode::Avg), &channel_avg(&x)) <= TOL);
        prop_assert_eq!(ops::channel_pool(&x, PoolMode::Max), channel_max(&x));
    }

    #[test]
    fn pointwise_ops_match_loops(shape in small_shape(), seed: u64) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, shape, 2.0);
        let b = random_tensor(&mut r, shape, 2.0);
        prop_assert!(max_abs_diff(&ops::elementwise(&a, &b, BinaryOp::Mul).unwrap(), &zip(&a, &b, |p, q| p * q)) <= TOL);
        prop_assert!(max_abs_diff(&ops::elementwise(&a, &b, BinaryOp::Add).unwrap(), &zip(&a, &b, |p, q| p + q)) <= TOL);
        prop_assert!(max_abs_diff(&ops::sigmoid(&a), &map(&a, sigmoid)) <= TOL);
        prop_assert!(max_abs_diff(&ops::gelu(&a), &map(&a, gelu)) <= TOL);
    }

    #[test]
    fn concat_and_norm_match_loops(shape in small_shape(), extra in 1usize..=4, seed: u64) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, shape, 2.0);
        let b = random_tensor(&mut r, shape.with_channels(extra), 2.0);
        prop_assert_eq!(ops::concat_channels(&[&a, &b]).unwrap(), concat(&[&a, &b]));

        let c = shape.c;
        let scale = random_vec(&mut r, c, 2.0);
        let shift = random_vec(&mut r, c, 2.0);
        let mean = random_vec(&mut r, c, 2.0);
        let var: Vec<f64> = random_vec(&mut r, c, 2.0).iter().map(|v| v.abs() + 0.1).collect();
        let got = ops::affine_channel_norm(&a, &scale, &shift, &mean, &var, 1e-5).unwrap();
        prop_assert!(max_abs_diff(&got, &norm(&a, &scale, &shift, &mean, &var, 1e-5)) <= TOL);
    }

    #[test]
    fn dirac_kernel_is_identity_for_any_dilation(shape in small_shape(), k in prop::sample::select(vec![3usize, 5, 7]), d in 1usize..=4, seed: u64) {
        let x = random_tensor(&mut rng(seed), shape, 2.0);
        let w = Tensor4::from_fn([shape.c, 1, k, k], |_, _, i, j| if i == k / 2 && j == k / 2 { 1.0 } else { 0.0 });
        let y = ops::depthwise_conv(&x, &w, &vec![0.0; shape.c], &ConvSpec::same(k, d)).unwrap();
        prop_assert_eq!(y, x);
    }

    #[test]
    fn same_padding_preserves_spatial_dims(shape in small_shape(), seed: u64) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape, 2.0);
        let w = random_tensor(&mut r, [shape.c, 1, 5, 5], 1.0);
        prop_assert_eq!(ops::depthwise_conv(&x, &w, &vec![0.0; shape.c], &ConvSpec::same(5, 3)).unwrap().shape(), shape);
        let pw = random_tensor(&mut r, [2, shape.c, 1, 1], 1.0);
        let y = ops::pointwise_conv(&x, &pw, &[0.0, 0.0]).unwrap();
        prop_assert_eq!((y.shape().h, y.shape().w), (shape.h, shape.w));
        prop_assert_eq!(ops::channel_pool(&x, PoolMode::Max).shape(), shape.with_channels(1));
    }
}

#[test]
fn ones_under_zero_padding() {
    let x = Tensor4::<f32>::full([1, 1, 5, 5], 1.0);
    let w = Tensor4::full([1, 1, 3, 3], 1.0);
    let y = ops::depthwise_conv(&x, &w, &[0.0], &ConvSpec::same(3, 1)).unwrap();
    assert_eq!(y.at(0, 0, 2, 2), 9.0);
    assert_eq!(y.at(0, 0, 0, 0), 4.0);
}

#[test]
fn spec_sized_depthwise_instance() {
    let mut r = rng(2024);
    let x = random_tensor(&mut r, [2, 3, 8, 8], 2.0);
    let w = random_tensor(&mut r, [3, 1, 5, 5], 2.0);
    let b = random_vec(&mut r, 3, 2.0);
    let got = ops::depthwise_conv(&x, &w, &b, &ConvSpec::same(5, 2)).unwrap();
    assert!(max_abs_diff(&got, &depthwise(&x, &w, &b, 5, 2)) <= TOL);
}

#[test]
fn pooling_small_cases() {
    let x = Tensor4::new([1, 2, 1, 1], vec![1.0f32, 3.0]).unwrap();
    assert_eq!(ops::channel_pool(&x, PoolMode::Avg).data(), &[2.0]);
    assert_eq!(ops::channel_pool(&x, PoolMode::Max).data(), &[3.0]);
    let single = Tensor4::new([1, 1, 2, 2], vec![1.0f32, -2.0, 3.0, 0.5]).unwrap();
    assert_eq!(ops::channel_pool(&single, PoolMode::Avg), single);
    assert_eq!(ops::channel_pool(&single, PoolMode::Max), single);
}

#[test]
fn kernels_are_deterministic() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, [3, 8, 16, 16], 2.0).cast::<f32>();
    let w = random_tensor(&mut r, [8, 1, 7, 7], 1.0).cast::<f32>();
    let a = ops::depthwise_conv(&x, &w, &[0.1; 8], &ConvSpec::same(7, 3)).unwrap();
    let b = ops::depthwise_conv(&x, &w, &[0.1; 8], &ConvSpec::same(7, 3)).unwrap();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn finite_inputs_stay_finite() {
    let x = Tensor4::<f32>::from_fn([1, 2, 3, 3], |_, c, i, j| (c as f32 - 0.5) * 80.0 * (i + j) as f32);
    assert!(ops::sigmoid(&x).is_finite());
    assert!(ops::gelu(&x).is_finite());
    assert!(ops::group_softmax(&x, 2).unwrap().is_finite());
}

#[test]
fn mismatched_shapes_are_errors() {
    let a = Tensor4::<f32>::zeros([1, 2, 3, 3]);
    let b = Tensor4::<f32>::zeros([1, 2, 3, 4]);
    assert!(ops::elementwise(&a, &b, BinaryOp::Add).is_err());
    assert!(ops::concat_channels(&[&a, &b]).is_err());
    let w = Tensor4::<f32>::zeros([3, 1, 3, 3]);
    let err = ops::depthwise_conv(&a, &w, &[0.0; 2], &ConvSpec::same(3, 1)).unwrap_err();
    assert!(err.to_string().contains("weights"), "{err}");
}

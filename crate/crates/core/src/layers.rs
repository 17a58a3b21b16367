//! Parameter-holding layers and the named-parameter visitor used for weight
//! files, gradient updates and parameter counting.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ops::{self, ConvGrads, ConvSpec, NormGrads};
use crate::tensor::{Real, Shape4, ShapeError, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable.
    Weight,
    /// Stored statistics; saved in weight files but never trained or counted.
    Buffer,
}

pub type Visitor<'a, T> = dyn FnMut(&str, &[usize], &[T], ParamKind) + 'a;
pub type VisitorMut<'a, T> = dyn FnMut(&str, &[usize], &mut [T], ParamKind) + 'a;

/// Exposes every named tensor of a component in a fixed order.
///
/// Names are dotted paths (`stage1.block0.lsk.dw0.weight`). Gradient
/// containers reuse the parameter struct, so visiting a gradient yields the
/// same names in the same order as visiting the parameters.
pub trait Parameterized<T: Real> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>);
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>);

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |_, _, data, kind| {
            if kind == ParamKind::Weight {
                total += data.len();
            }
        });
        total
    }

    /// Learnable tensors flattened in visiting order.
    fn flat_weights(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, data, kind| {
            if kind == ParamKind::Weight {
                out.push(data.to_vec());
            }
        });
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Seeded uniform initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Zero-mean uniform in `±1/√fan_in`.
    pub fn fan_in<T: Real>(&mut self, shape: impl Into<Shape4>, fan_in: usize) -> Tensor4<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.uniform(shape, bound)
    }

    pub fn uniform<T: Real>(&mut self, shape: impl Into<Shape4>, bound: f64) -> Tensor4<T> {
        Tensor4::from_fn(shape, |_, _, _, _| T::of(self.rng.gen_range(-bound..=bound)))
    }

    pub fn uniform_vec<T: Real>(&mut self, len: usize, bound: f64) -> Vec<T> {
        (0..len).map(|_| T::of(self.rng.gen_range(-bound..=bound))).collect()
    }
}

fn visit_tensor<T: Real>(prefix: &str, name: &str, t: &Tensor4<T>, f: &mut Visitor<'_, T>) {
    f(&join(prefix, name), &t.shape().dims(), t.data(), ParamKind::Weight);
}

fn visit_tensor_mut<T: Real>(prefix: &str, name: &str, t: &mut Tensor4<T>, f: &mut VisitorMut<'_, T>) {
    let dims = t.shape().dims();
    f(&join(prefix, name), &dims, t.data_mut(), ParamKind::Weight);
}

fn visit_vec<T: Real>(prefix: &str, name: &str, v: &[T], kind: ParamKind, f: &mut Visitor<'_, T>) {
    f(&join(prefix, name), &[v.len()], v, kind);
}

fn visit_vec_mut<T: Real>(prefix: &str, name: &str, v: &mut [T], kind: ParamKind, f: &mut VisitorMut<'_, T>) {
    let len = v.len();
    f(&join(prefix, name), &[len], v, kind);
}

/// Depth-wise convolution layer, weights `(c, 1, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv<T: Real> {
    pub spec: ConvSpec,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DepthwiseConv<T> {
    pub fn zeros(channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            spec: ConvSpec::same(kernel, dilation),
            weight: Tensor4::zeros([channels, 1, kernel, kernel]),
            bias: vec![T::zero(); channels],
        }
    }

    pub fn init(channels: usize, kernel: usize, dilation: usize, init: &mut Init) -> Self {
        Self {
            weight: init.fan_in([channels, 1, kernel, kernel], kernel * kernel),
            ..Self::zeros(channels, kernel, dilation)
        }
    }

    pub fn channels(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        ops::depthwise_conv(x, &self.weight, &self.bias, &self.spec)
    }

    /// Returns the input gradient and a layer holding the parameter gradients.
    pub fn backward(&self, grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, Self), ShapeError> {
        let ConvGrads { x: gx, weights, bias } = ops::depthwise_conv_backward(grad_out, x, &self.weight, &self.spec)?;
        Ok((
            gx,
            Self {
                spec: self.spec,
                weight: weights,
                bias,
            },
        ))
    }
}

impl<T: Real> Parameterized<T> for DepthwiseConv<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        visit_tensor(prefix, "weight", &self.weight, f);
        visit_vec(prefix, "bias", &self.bias, ParamKind::Weight, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        visit_tensor_mut(prefix, "weight", &mut self.weight, f);
        visit_vec_mut(prefix, "bias", &mut self.bias, ParamKind::Weight, f);
    }
}

/// 1×1 convolution, weights `(c_out, c_in, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise<T: Real> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Pointwise<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor4::zeros([c_out, c_in, 1, 1]),
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn init(c_in: usize, c_out: usize, init: &mut Init) -> Self {
        Self {
            weight: init.fan_in([c_out, c_in, 1, 1], c_in),
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        ops::pointwise_conv(x, &self.weight, &self.bias)
    }

    pub fn backward(&self, grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, Self), ShapeError> {
        let ConvGrads { x: gx, weights, bias } = ops::pointwise_conv_backward(grad_out, x, &self.weight)?;
        Ok((gx, Self { weight: weights, bias }))
    }
}

impl<T: Real> Parameterized<T> for Pointwise<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        visit_tensor(prefix, "weight", &self.weight, f);
        visit_vec(prefix, "bias", &self.bias, ParamKind::Weight, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        visit_tensor_mut(prefix, "weight", &mut self.weight, f);
        visit_vec_mut(prefix, "bias", &mut self.bias, ParamKind::Weight, f);
    }
}

/// Dense convolution, weights `(c_out, c_in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Real> {
    pub spec: ConvSpec,
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(c_in: usize, c_out: usize, spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: Tensor4::zeros([c_out, c_in, spec.kernel, spec.kernel]),
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn init(c_in: usize, c_out: usize, spec: ConvSpec, init: &mut Init) -> Self {
        Self {
            weight: init.fan_in([c_out, c_in, spec.kernel, spec.kernel], c_in * spec.kernel * spec.kernel),
            ..Self::zeros(c_in, c_out, spec)
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        ops::conv2d(x, &self.weight, &self.bias, &self.spec)
    }

    pub fn backward(&self, grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, Self), ShapeError> {
        let ConvGrads { x: gx, weights, bias } = ops::conv2d_backward(grad_out, x, &self.weight, &self.spec)?;
        Ok((
            gx,
            Self {
                spec: self.spec,
                weight: weights,
                bias,
            },
        ))
    }
}

impl<T: Real> Parameterized<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        visit_tensor(prefix, "weight", &self.weight, f);
        visit_vec(prefix, "bias", &self.bias, ParamKind::Weight, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        visit_tensor_mut(prefix, "weight", &mut self.weight, f);
        visit_vec_mut(prefix, "bias", &mut self.bias, ParamKind::Weight, f);
    }
}

pub const NORM_EPS: f64 = 1e-5;

/// Inference-style per-channel normalization with stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T: Real> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> ChannelNorm<T> {
    /// Unit scale, zero shift, zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        ops::affine_channel_norm(x, &self.scale, &self.shift, &self.mean, &self.var, T::of(NORM_EPS))
    }

    pub fn backward(&self, grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, Self), ShapeError> {
        let NormGrads { x: gx, scale, shift } =
            ops::affine_channel_norm_backward(grad_out, x, &self.scale, &self.mean, &self.var, T::of(NORM_EPS))?;
        let c = self.scale.len();
        Ok((
            gx,
            Self {
                scale,
                shift,
                mean: vec![T::zero(); c],
                var: vec![T::zero(); c],
            },
        ))
    }
}

impl<T: Real> Parameterized<T> for ChannelNorm<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        visit_vec(prefix, "scale", &self.scale, ParamKind::Weight, f);
        visit_vec(prefix, "shift", &self.shift, ParamKind::Weight, f);
        visit_vec(prefix, "mean", &self.mean, ParamKind::Buffer, f);
        visit_vec(prefix, "var", &self.var, ParamKind::Buffer, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        visit_vec_mut(prefix, "scale", &mut self.scale, ParamKind::Weight, f);
        visit_vec_mut(prefix, "shift", &mut self.shift, ParamKind::Weight, f);
        visit_vec_mut(prefix, "mean", &mut self.mean, ParamKind::Buffer, f);
        visit_vec_mut(prefix, "var", &mut self.var, ParamKind::Buffer, f);
    }
}

/// Learnable per-channel residual scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScale<T: Real> {
    pub gamma: Vec<T>,
}

impl<T: Real> LayerScale<T> {
    pub fn new(channels: usize, value: f64) -> Self {
        Self {
            gamma: vec![T::of(value); channels],
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        ops::scale_by_channel(x, &self.gamma)
    }
}

impl<T: Real> Parameterized<T> for LayerScale<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(prefix, &[self.gamma.len()], &self.gamma, ParamKind::Weight);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        let len = self.gamma.len();
        f(prefix, &[len], &mut self.gamma, ParamKind::Weight);
    }
}

//! Elementwise maps, channel concatenation, gating products and normalization.
//!
//! Shapes must match exactly. Broadcasting happens only in the explicitly
//! named gating helpers ([`gate_spatial`], [`scale_channels`]).

use crate::tensor::{Real, Shape4, ShapeError, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Mul,
    Add,
}

pub fn elementwise<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>, op: BinaryOp) -> Result<Tensor4<T>, ShapeError> {
    b.expect_shape("elementwise", "rhs", a.shape())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            BinaryOp::Mul => x * y,
            BinaryOp::Add => x + y,
        })
        .collect();
    Tensor4::new(a.shape(), data)
}

/// Returns `(grad_a, grad_b)`.
pub fn elementwise_backward<T: Real>(
    grad_out: &Tensor4<T>,
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    op: BinaryOp,
) -> Result<(Tensor4<T>, Tensor4<T>), ShapeError> {
    b.expect_shape("elementwise_backward", "rhs", a.shape())?;
    grad_out.expect_shape("elementwise_backward", "grad_out", a.shape())?;
    match op {
        BinaryOp::Add => Ok((grad_out.clone(), grad_out.clone())),
        BinaryOp::Mul => Ok((
            elementwise(grad_out, b, BinaryOp::Mul)?,
            elementwise(grad_out, a, BinaryOp::Mul)?,
        )),
    }
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward *output* `y = σ(x)`.
pub fn sigmoid_backward<T: Real>(grad_out: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    grad_out.expect_shape("sigmoid_backward", "grad_out", y.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &s)| g * s * (T::one() - s))
        .collect();
    Tensor4::new(y.shape(), data)
}

// tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let inner = T::of(GELU_SQRT_2_OVER_PI) * (x + T::of(GELU_CUBIC) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let k = T::of(GELU_SQRT_2_OVER_PI);
    let a = T::of(GELU_CUBIC);
    let t = (k * (x + a * x * x * x)).tanh();
    let dinner = k * (T::one() + T::of(3.0) * a * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

pub fn gelu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(gelu_scalar)
}

/// Takes the forward *input* `x`.
pub fn gelu_backward<T: Real>(grad_out: &Tensor4<T>, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    grad_out.expect_shape("gelu_backward", "grad_out", x.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| g * gelu_grad_scalar(v))
        .collect();
    Tensor4::new(x.shape(), data)
}

/// Stacks tensors along the channel axis, preserving order.
pub fn concat_channels<T: Real>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>, ShapeError> {
    let first = parts
        .first()
        .ok_or_else(|| ShapeError::mismatch("concat_channels", "no tensors to concatenate"))?
        .shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(ShapeError::mismatch(
                "concat_channels",
                format!("cannot concatenate {s} with {first}: n, h, w must agree"),
            ));
        }
        channels += s.c;
    }
    let out_shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            let chunk = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * chunk..(n + 1) * chunk]);
        }
    }
    Tensor4::new(out_shape, data)
}

/// Inverse of [`concat_channels`]; also its backward pass.
pub fn split_channels<T: Real>(x: &Tensor4<T>, sizes: &[usize]) -> Result<Vec<Tensor4<T>>, ShapeError> {
    let s = x.shape();
    if sizes.iter().sum::<usize>() != s.c || sizes.iter().any(|&c| c == 0) {
        return Err(ShapeError::mismatch(
            "split_channels",
            format!("sizes {sizes:?} do not partition {} channels", s.c),
        ));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(sizes.len());
    for &c in sizes {
        let mut part = Tensor4::zeros(s.with_channels(c));
        for n in 0..s.n {
            for k in 0..c {
                part.plane_mut(n, k).copy_from_slice(x.plane(n, offset + k));
            }
        }
        offset += c;
        out.push(part);
    }
    Ok(out)
}

/// Per-channel affine normalization with fixed statistics:
/// `y = scale·(x − mean)/√(var + eps) + shift`.
pub fn affine_channel_norm<T: Real>(
    x: &Tensor4<T>,
    scale: &[T],
    shift: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor4<T>, ShapeError> {
    let s = x.shape();
    check_channel_params("affine_channel_norm", s.c, &[scale, shift, mean, var])?;
    let mut out = x.clone();
    for c in 0..s.c {
        let inv = T::one() / (var[c] + eps).sqrt();
        for n in 0..s.n {
            for v in out.plane_mut(n, c) {
                *v = scale[c] * (*v - mean[c]) * inv + shift[c];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct NormGrads<T: Real> {
    pub x: Tensor4<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

/// Statistics are buffers, so only `x`, `scale` and `shift` receive gradients.
pub fn affine_channel_norm_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    scale: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<NormGrads<T>, ShapeError> {
    let s = x.shape();
    grad_out.expect_shape("affine_channel_norm_backward", "grad_out", s)?;
    check_channel_params("affine_channel_norm_backward", s.c, &[scale, mean, var])?;
    let mut gx = Tensor4::zeros(s);
    let mut g_scale = vec![T::zero(); s.c];
    let mut g_shift = vec![T::zero(); s.c];
    for c in 0..s.c {
        let inv = T::one() / (var[c] + eps).sqrt();
        for n in 0..s.n {
            let g = grad_out.plane(n, c);
            let xs = x.plane(n, c);
            for (p, (&gv, &xv)) in g.iter().zip(xs).enumerate() {
                g_scale[c] = g_scale[c] + gv * (xv - mean[c]) * inv;
                g_shift[c] = g_shift[c] + gv;
                gx.plane_mut(n, c)[p] = gv * scale[c] * inv;
            }
        }
    }
    Ok(NormGrads {
        x: gx,
        scale: g_scale,
        shift: g_shift,
    })
}

fn check_channel_params<T>(op: &'static str, channels: usize, params: &[&[T]]) -> Result<(), ShapeError> {
    for p in params {
        if p.len() != channels {
            return Err(ShapeError::mismatch(
                op,
                format!("per-channel parameter has {} entries, expected {channels}", p.len()),
            ));
        }
    }
    Ok(())
}

/// Multiplies every channel of `x` by the single-channel map `mask`:
/// `(n, c, h, w) × (n, 1, h, w)`.
pub fn gate_spatial<T: Real>(x: &Tensor4<T>, mask: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    let s = x.shape();
    mask.expect_shape("gate_spatial", "mask", s.with_channels(1))?;
    let mut out = x.clone();
    for n in 0..s.n {
        let m = mask.plane(n, 0);
        for c in 0..s.c {
            for (v, &mv) in out.plane_mut(n, c).iter_mut().zip(m) {
                *v = *v * mv;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_mask)`.
pub fn gate_spatial_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    mask: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>), ShapeError> {
    let s = x.shape();
    grad_out.expect_shape("gate_spatial_backward", "grad_out", s)?;
    let gx = gate_spatial(grad_out, mask)?;
    let mut gm = Tensor4::zeros(s.with_channels(1));
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let xs = x.plane(n, c);
            let dst = gm.plane_mut(n, 0);
            for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xs) {
                *d = *d + gv * xv;
            }
        }
    }
    Ok((gx, gm))
}

/// Multiplies each `(n, c)` plane of `x` by `weights[n, c, 0, 0]`.
pub fn scale_channels<T: Real>(x: &Tensor4<T>, weights: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
    let s = x.shape();
    weights.expect_shape("scale_channels", "weights", Shape4::new(s.n, s.c, 1, 1))?;
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let wv = weights.at(n, c, 0, 0);
            out.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * wv);
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weights)`.
pub fn scale_channels_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>), ShapeError> {
    let s = x.shape();
    grad_out.expect_shape("scale_channels_backward", "grad_out", s)?;
    let gx = scale_channels(grad_out, weights)?;
    let gw = Tensor4::from_fn(Shape4::new(s.n, s.c, 1, 1), |n, c, _, _| {
        grad_out
            .plane(n, c)
            .iter()
            .zip(x.plane(n, c))
            .fold(T::zero(), |a, (&g, &v)| a + g * v)
    });
    Ok((gx, gw))
}

/// Multiplies channel `c` by the fixed per-channel factor `factors[c]`.
pub fn scale_by_channel<T: Real>(x: &Tensor4<T>, factors: &[T]) -> Result<Tensor4<T>, ShapeError> {
    let s = x.shape();
    check_channel_params("scale_by_channel", s.c, &[factors])?;
    let mut out = x.clone();
    for n in 0..s.n {
        for (c, &f) in factors.iter().enumerate() {
            out.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * f);
        }
    }
    Ok(out)
}

/// Softmax across `groups` equally sized channel groups.
///
/// For `logits` of shape `(n, groups·c, h, w)`, entry `(n, g·c + k, y, x)` is
/// normalized against the same `(k, y, x)` position in every other group.
pub fn group_softmax<T: Real>(logits: &Tensor4<T>, groups: usize) -> Result<Tensor4<T>, ShapeError> {
    let s = logits.shape();
    if groups == 0 || s.c % groups != 0 {
        return Err(ShapeError::mismatch(
            "group_softmax",
            format!("{} channels cannot be split into {groups} groups", s.c),
        ));
    }
    let per = s.c / groups;
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for k in 0..per {
            for p in 0..s.plane() {
                let max = (0..groups)
                    .map(|g| logits.plane(n, g * per + k)[p])
                    .fold(T::neg_infinity(), T::max);
                let mut denom = T::zero();
                for g in 0..groups {
                    let e = (logits.plane(n, g * per + k)[p] - max).exp();
                    out.plane_mut(n, g * per + k)[p] = e;
                    denom = denom + e;
                }
                for g in 0..groups {
                    let v = &mut out.plane_mut(n, g * per + k)[p];
                    *v = *v / denom;
                }
            }
        }
    }
    Ok(out)
}

/// Takes the forward output `probs`.
pub fn group_softmax_backward<T: Real>(
    grad_out: &Tensor4<T>,
    probs: &Tensor4<T>,
    groups: usize,
) -> Result<Tensor4<T>, ShapeError> {
    let s = probs.shape();
    grad_out.expect_shape("group_softmax_backward", "grad_out", s)?;
    if groups == 0 || s.c % groups != 0 {
        return Err(ShapeError::mismatch("group_softmax_backward", "bad group count"));
    }
    let per = s.c / groups;
    let mut gx = Tensor4::zeros(s);
    for n in 0..s.n {
        for k in 0..per {
            for p in 0..s.plane() {
                let dot = (0..groups).fold(T::zero(), |a, g| {
                    a + grad_out.plane(n, g * per + k)[p] * probs.plane(n, g * per + k)[p]
                });
                for g in 0..groups {
                    let c = g * per + k;
                    gx.plane_mut(n, c)[p] = probs.plane(n, c)[p] * (grad_out.plane(n, c)[p] - dot);
                }
            }
        }
    }
    Ok(gx)
}

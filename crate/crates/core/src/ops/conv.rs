//! Depth-wise, point-wise and dense 2-D convolutions over NCHW tensors.
//!
//! Every kernel zero-pads outside the image. Output elements are accumulated
//! in a fixed order (bias first, then taps in row-major order), so results do
//! not depend on how work is split across threads.

use rayon::prelude::*;

use crate::tensor::{Real, Shape4, ShapeError, Tensor4};

/// Square convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvSpec {
    /// Stride 1 with padding `dilation·(kernel−1)/2`, which keeps `h × w`.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            dilation,
            padding: dilation * (kernel.saturating_sub(1)) / 2,
            stride: 1,
        }
    }

    pub const fn strided(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            dilation: 1,
            padding,
            stride,
        }
    }

    /// Number of input pixels one output pixel spans along an axis.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn is_same(&self) -> bool {
        self.kernel % 2 == 1 && self.stride == 1 && self.padding == self.dilation * (self.kernel - 1) / 2
    }

    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.kernel == 0 || self.stride == 0 || padded < self.span() {
            return None;
        }
        Some((padded - self.span()) / self.stride + 1)
    }

    fn validate(&self, op: &'static str) -> Result<(), ShapeError> {
        if self.kernel == 0 || self.dilation == 0 || self.stride == 0 {
            return Err(ShapeError::mismatch(op, format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }
}

fn check_bias<T>(op: &'static str, bias: &[T], channels: usize) -> Result<(), ShapeError> {
    if bias.len() != channels {
        return Err(ShapeError::mismatch(
            op,
            format!("bias has {} entries, expected {channels}", bias.len()),
        ));
    }
    Ok(())
}

fn check_depthwise<T: Real>(
    op: &'static str,
    x: Shape4,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<(), ShapeError> {
    spec.validate(op)?;
    if !spec.is_same() {
        return Err(ShapeError::mismatch(
            op,
            format!(
                "depth-wise conv needs odd kernel, stride 1 and padding dilation·(k−1)/2, got {spec:?}"
            ),
        ));
    }
    weights.expect_shape(op, "weights", Shape4::new(x.c, 1, spec.kernel, spec.kernel))
}

/// Per-channel convolution with "same" zero padding.
///
/// `weights` has shape `(c, 1, k, k)`; output shape equals input shape.
pub fn depthwise_conv<T: Real>(
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    bias: &[T],
    spec: &ConvSpec,
) -> Result<Tensor4<T>, ShapeError> {
    const OP: &str = "depthwise_conv";
    let s = x.shape();
    check_depthwise(OP, s, weights, spec)?;
    check_bias(OP, bias, s.c)?;

    let (h, w, k, d, p) = (s.h, s.w, spec.kernel, spec.dilation, spec.padding);
    let mut out = Tensor4::zeros(s);
    out.data_mut()
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let c = plane_idx % s.c;
            let n = plane_idx / s.c;
            let src = x.plane(n, c);
            let ker = weights.plane(c, 0);
            for oh in 0..h {
                for ow in 0..w {
                    let mut acc = bias[c];
                    for kh in 0..k {
                        let ih = (oh + kh * d) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row = &src[ih as usize * w..(ih as usize + 1) * w];
                        for kw in 0..k {
                            let iw = (ow + kw * d) as isize - p as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc = acc + ker[kh * k + kw] * row[iw as usize];
                        }
                    }
                    out_plane[oh * w + ow] = acc;
                }
            }
        });
    Ok(out)
}

/// Gradients of a depth-wise convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub x: Tensor4<T>,
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

pub fn depthwise_conv_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>, ShapeError> {
    const OP: &str = "depthwise_conv_backward";
    let s = x.shape();
    check_depthwise(OP, s, weights, spec)?;
    grad_out.expect_shape(OP, "grad_out", s)?;

    let (h, w, k, d, p) = (s.h, s.w, spec.kernel, spec.dilation, spec.padding);

    let mut grad_x = Tensor4::zeros(s);
    grad_x
        .data_mut()
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(plane_idx, gx)| {
            let c = plane_idx % s.c;
            let n = plane_idx / s.c;
            let g = grad_out.plane(n, c);
            let ker = weights.plane(c, 0);
            for oh in 0..h {
                for ow in 0..w {
                    let go = g[oh * w + ow];
                    for kh in 0..k {
                        let ih = (oh + kh * d) as isize - p as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let iw = (ow + kw * d) as isize - p as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let idx = ih as usize * w + iw as usize;
                            gx[idx] = gx[idx] + go * ker[kh * k + kw];
                        }
                    }
                }
            }
        });

    let mut grad_w = Tensor4::zeros(weights.shape());
    grad_w
        .data_mut()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(c, gw)| {
            for n in 0..s.n {
                let g = grad_out.plane(n, c);
                let src = x.plane(n, c);
                for kh in 0..k {
                    for kw in 0..k {
                        let mut acc = T::zero();
                        for oh in 0..h {
                            let ih = (oh + kh * d) as isize - p as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for ow in 0..w {
                                let iw = (ow + kw * d) as isize - p as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc = acc + g[oh * w + ow] * src[ih as usize * w + iw as usize];
                            }
                        }
                        gw[kh * k + kw] = gw[kh * k + kw] + acc;
                    }
                }
            }
        });

    let grad_b = channel_sums(grad_out);
    Ok(ConvGrads {
        x: grad_x,
        weights: grad_w,
        bias: grad_b,
    })
}

/// Sum over batch and space for every channel.
pub(crate) fn channel_sums<T: Real>(t: &Tensor4<T>) -> Vec<T> {
    let s = t.shape();
    (0..s.c)
        .map(|c| {
            (0..s.n).fold(T::zero(), |acc, n| {
                acc + t.plane(n, c).iter().copied().fold(T::zero(), |a, v| a + v)
            })
        })
        .collect()
}

/// 1×1 convolution: per-pixel channel mixing with `(c_out, c_in, 1, 1)` weights.
pub fn pointwise_conv<T: Real>(x: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>, ShapeError> {
    const OP: &str = "pointwise_conv";
    let s = x.shape();
    let ws = weights.shape();
    if ws.h != 1 || ws.w != 1 || ws.c != s.c {
        return Err(ShapeError::mismatch(
            OP,
            format!("weights {ws} incompatible with input {s}: expected (c_out, {}, 1, 1)", s.c),
        ));
    }
    check_bias(OP, bias, ws.n)?;
    let c_out = ws.n;
    let plane = s.plane();
    let out_shape = s.with_channels(c_out);
    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let o = plane_idx % c_out;
            let n = plane_idx / c_out;
            dst.fill(bias[o]);
            let row = &weights.data()[o * s.c..(o + 1) * s.c];
            for (i, &wt) in row.iter().enumerate() {
                for (d, &v) in dst.iter_mut().zip(x.plane(n, i)) {
                    *d = *d + wt * v;
                }
            }
        });
    Ok(out)
}

pub fn pointwise_conv_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
) -> Result<ConvGrads<T>, ShapeError> {
    const OP: &str = "pointwise_conv_backward";
    let s = x.shape();
    let ws = weights.shape();
    if ws.h != 1 || ws.w != 1 || ws.c != s.c {
        return Err(ShapeError::mismatch(OP, format!("weights {ws} incompatible with input {s}")));
    }
    let c_out = ws.n;
    grad_out.expect_shape(OP, "grad_out", s.with_channels(c_out))?;

    let mut grad_x = Tensor4::zeros(s);
    grad_x
        .data_mut()
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let i = plane_idx % s.c;
            let n = plane_idx / s.c;
            for o in 0..c_out {
                let wt = weights.data()[o * s.c + i];
                for (d, &g) in dst.iter_mut().zip(grad_out.plane(n, o)) {
                    *d = *d + wt * g;
                }
            }
        });

    let mut grad_w = Tensor4::zeros(ws);
    grad_w.data_mut().par_iter_mut().enumerate().for_each(|(idx, gw)| {
        let o = idx / s.c;
        let i = idx % s.c;
        let mut acc = T::zero();
        for n in 0..s.n {
            for (&g, &v) in grad_out.plane(n, o).iter().zip(x.plane(n, i)) {
                acc = acc + g * v;
            }
        }
        *gw = acc;
    });

    Ok(ConvGrads {
        x: grad_x,
        weights: grad_w,
        bias: channel_sums(grad_out),
    })
}

fn check_dense<T: Real>(op: &'static str, x: Shape4, weights: &Tensor4<T>, spec: &ConvSpec) -> Result<Shape4, ShapeError> {
    spec.validate(op)?;
    let ws = weights.shape();
    if ws.c != x.c || ws.h != spec.kernel || ws.w != spec.kernel {
        return Err(ShapeError::mismatch(
            op,
            format!(
                "weights {ws} incompatible with input {x}: expected (c_out, {}, {k}, {k})",
                x.c,
                k = spec.kernel
            ),
        ));
    }
    match (spec.output_len(x.h), spec.output_len(x.w)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(Shape4::new(x.n, ws.n, oh, ow)),
        _ => Err(ShapeError::mismatch(
            op,
            format!("input {x} too small for kernel {} with padding {}", spec.kernel, spec.padding),
        )),
    }
}

/// Dense convolution with `(c_out, c_in, k, k)` weights, any stride and padding.
pub fn conv2d<T: Real>(x: &Tensor4<T>, weights: &Tensor4<T>, bias: &[T], spec: &ConvSpec) -> Result<Tensor4<T>, ShapeError> {
    const OP: &str = "conv2d";
    let s = x.shape();
    let out_shape = check_dense(OP, s, weights, spec)?;
    check_bias(OP, bias, out_shape.c)?;
    let (k, d, p, st) = (spec.kernel, spec.dilation, spec.padding as isize, spec.stride);
    let (oh_n, ow_n) = (out_shape.h, out_shape.w);

    let mut out = Tensor4::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let o = plane_idx % out_shape.c;
            let n = plane_idx / out_shape.c;
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    let mut acc = bias[o];
                    for i in 0..s.c {
                        let src = x.plane(n, i);
                        let ker = weights.plane(o, i);
                        for kh in 0..k {
                            let ih = (oh * st + kh * d) as isize - p;
                            if ih < 0 || ih >= s.h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * st + kw * d) as isize - p;
                                if iw < 0 || iw >= s.w as isize {
                                    continue;
                                }
                                acc = acc + ker[kh * k + kw] * src[ih as usize * s.w + iw as usize];
                            }
                        }
                    }
                    dst[oh * ow_n + ow] = acc;
                }
            }
        });
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor4<T>,
    x: &Tensor4<T>,
    weights: &Tensor4<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>, ShapeError> {
    const OP: &str = "conv2d_backward";
    let s = x.shape();
    let out_shape = check_dense(OP, s, weights, spec)?;
    grad_out.expect_shape(OP, "grad_out", out_shape)?;
    let (k, d, p, st) = (spec.kernel, spec.dilation, spec.padding as isize, spec.stride);
    let (oh_n, ow_n) = (out_shape.h, out_shape.w);

    let mut grad_x = Tensor4::zeros(s);
    grad_x
        .data_mut()
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(plane_idx, gx)| {
            let i = plane_idx % s.c;
            let n = plane_idx / s.c;
            for o in 0..out_shape.c {
                let g = grad_out.plane(n, o);
                let ker = weights.plane(o, i);
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let go = g[oh * ow_n + ow];
                        for kh in 0..k {
                            let ih = (oh * st + kh * d) as isize - p;
                            if ih < 0 || ih >= s.h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * st + kw * d) as isize - p;
                                if iw < 0 || iw >= s.w as isize {
                                    continue;
                                }
                                let idx = ih as usize * s.w + iw as usize;
                                gx[idx] = gx[idx] + go * ker[kh * k + kw];
                            }
                        }
                    }
                }
            }
        });

    let mut grad_w = Tensor4::zeros(weights.shape());
    grad_w
        .data_mut()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(pair, gw)| {
            let o = pair / s.c;
            let i = pair % s.c;
            for kh in 0..k {
                for kw in 0..k {
                    let mut acc = T::zero();
                    for n in 0..s.n {
                        let g = grad_out.plane(n, o);
                        let src = x.plane(n, i);
                        for oh in 0..oh_n {
                            let ih = (oh * st + kh * d) as isize - p;
                            if ih < 0 || ih >= s.h as isize {
                                continue;
                            }
                            for ow in 0..ow_n {
                                let iw = (ow * st + kw * d) as isize - p;
                                if iw < 0 || iw >= s.w as isize {
                                    continue;
                                }
                                acc = acc + g[oh * ow_n + ow] * src[ih as usize * s.w + iw as usize];
                            }
                        }
                    }
                    gw[kh * k + kw] = acc;
                }
            }
        });

    Ok(ConvGrads {
        x: grad_x,
        weights: grad_w,
        bias: channel_sums(grad_out),
    })
}

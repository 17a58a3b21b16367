//! Naive reference implementations used as test oracles.
//!
//! Everything here is written as plain nested loops over `f64` values,
//! independent of the optimized kernels under test.

#![allow(dead_code)]

use lsk_core::lsk::Selection;
use lsk_core::{LskModule, Shape4, Tensor4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: impl Into<Shape4>, bound: f64) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..=bound))
}

pub fn random_vec(rng: &mut impl Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

pub fn max_abs_diff(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in comparison");
    a.max_abs_diff(b).unwrap()
}

fn padded(x: &Tensor4<f64>, n: usize, c: usize, y: isize, x_: isize) -> f64 {
    let s = x.shape();
    if y < 0 || x_ < 0 || y >= s.h as isize || x_ >= s.w as isize {
        0.0
    } else {
        x.at(n, c, y as usize, x_ as usize)
    }
}

/// Six nested loops; zero padding `d(k−1)/2`.
pub fn depthwise(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64], k: usize, d: usize) -> Tensor4<f64> {
    let s = x.shape();
    let pad = (d * (k - 1) / 2) as isize;
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..s.h {
                for j in 0..s.w {
                    let mut acc = bias[c];
                    for ki in 0..k {
                        for kj in 0..k {
                            let y = i as isize - pad + (ki * d) as isize;
                            let xx = j as isize - pad + (kj * d) as isize;
                            acc += w.at(c, 0, ki, kj) * padded(x, n, c, y, xx);
                        }
                    }
                    let idx = out.index(n, c, i, j);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}

/// Per-pixel matrix-vector product; `w` is `(c_out, c_in, 1, 1)`.
pub fn pointwise(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64]) -> Tensor4<f64> {
    let s = x.shape();
    let c_out = w.shape().n;
    Tensor4::from_fn([s.n, c_out, s.h, s.w], |n, o, i, j| {
        let mut acc = bias[o];
        for c in 0..s.c {
            acc += w.at(o, c, 0, 0) * x.at(n, c, i, j);
        }
        acc
    })
}

/// Dense conv, dilation 1.
pub fn conv2d(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64], stride: usize, pad: usize) -> Tensor4<f64> {
    let s = x.shape();
    let ws = w.shape();
    let k = ws.h;
    let oh = (s.h + 2 * pad - k) / stride + 1;
    let ow = (s.w + 2 * pad - k) / stride + 1;
    Tensor4::from_fn([s.n, ws.n, oh, ow], |n, o, i, j| {
        let mut acc = bias[o];
        for c in 0..s.c {
            for ki in 0..k {
                for kj in 0..k {
                    let y = (i * stride + ki) as isize - pad as isize;
                    let xx = (j * stride + kj) as isize - pad as isize;
                    acc += w.at(o, c, ki, kj) * padded(x, n, c, y, xx);
                }
            }
        }
        acc
    })
}

pub fn channel_avg(x: &Tensor4<f64>) -> Tensor4<f64> {
    let s = x.shape();
    Tensor4::from_fn([s.n, 1, s.h, s.w], |n, _, i, j| {
        (0..s.c).map(|c| x.at(n, c, i, j)).sum::<f64>() / s.c as f64
    })
}

pub fn channel_max(x: &Tensor4<f64>) -> Tensor4<f64> {
    let s = x.shape();
    Tensor4::from_fn([s.n, 1, s.h, s.w], |n, _, i, j| {
        (0..s.c).map(|c| x.at(n, c, i, j)).fold(f64::NEG_INFINITY, f64::max)
    })
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn gelu(v: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (k * (v + 0.044715 * v * v * v)).tanh())
}

pub fn map(x: &Tensor4<f64>, f: impl Fn(f64) -> f64) -> Tensor4<f64> {
    Tensor4::from_fn(x.shape(), |n, c, i, j| f(x.at(n, c, i, j)))
}

pub fn zip(a: &Tensor4<f64>, b: &Tensor4<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor4<f64> {
    assert_eq!(a.shape(), b.shape());
    Tensor4::from_fn(a.shape(), |n, c, i, j| f(a.at(n, c, i, j), b.at(n, c, i, j)))
}

pub fn concat(parts: &[&Tensor4<f64>]) -> Tensor4<f64> {
    let s = parts[0].shape();
    let total: usize = parts.iter().map(|p| p.shape().c).sum();
    Tensor4::from_fn([s.n, total, s.h, s.w], |n, c, i, j| {
        let mut c = c;
        for p in parts {
            if c < p.shape().c {
                return p.at(n, c, i, j);
            }
            c -= p.shape().c;
        }
        unreachable!()
    })
}

pub fn norm(x: &Tensor4<f64>, scale: &[f64], shift: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Tensor4<f64> {
    Tensor4::from_fn(x.shape(), |n, c, i, j| {
        (x.at(n, c, i, j) - mean[c]) / (var[c] + eps).sqrt() * scale[c] + shift[c]
    })
}

/// Straight-line forward of an LSK module, built only from the oracles
/// above. Returns `(y, masks)`.
pub fn lsk_forward(m: &LskModule<f64>, x: &Tensor4<f64>) -> (Tensor4<f64>, Option<Tensor4<f64>>) {
    let cfg = m.config();
    let mut u = x.clone();
    let mut branches = Vec::new();
    for (dw, mix) in m.dw.iter().zip(&m.mixers) {
        u = depthwise(&u, &dw.weight, &dw.bias, dw.spec.kernel, dw.spec.dilation);
        branches.push(pointwise(&u, &mix.weight, &mix.bias));
    }
    let s = branches[0].shape();
    let mut agg = Tensor4::zeros(s);
    let mut masks_out = None;
    match &m.selection {
        Selection::Spatial(conv) => {
            let refs: Vec<&Tensor4<f64>> = branches.iter().collect();
            let all = concat(&refs);
            let mut desc = Vec::new();
            if cfg.pooling.avg {
                desc.push(channel_avg(&all));
            }
            if cfg.pooling.max {
                desc.push(channel_max(&all));
            }
            let desc = concat(&desc.iter().collect::<Vec<_>>());
            let logits = conv2d(&desc, &conv.weight, &conv.bias, 1, conv.spec.kernel / 2);
            let masks = map(&logits, sigmoid);
            agg = Tensor4::from_fn(s, |n, c, i, j| {
                (0..branches.len()).map(|b| masks.at(n, b, i, j) * branches[b].at(n, c, i, j)).sum::<f64>()
            });
            masks_out = Some(masks);
        }
        Selection::Channel { reduce, expand } => {
            let total = Tensor4::from_fn(s, |n, c, i, j| branches.iter().map(|b| b.at(n, c, i, j)).sum::<f64>());
            let pooled = Tensor4::from_fn([s.n, s.c, 1, 1], |n, c, _, _| {
                let mut acc = 0.0;
                for i in 0..s.h {
                    for j in 0..s.w {
                        acc += total.at(n, c, i, j);
                    }
                }
                acc / (s.h * s.w) as f64
            });
            let hidden = map(&pointwise(&pooled, &reduce.weight, &reduce.bias), gelu);
            let logits = pointwise(&hidden, &expand.weight, &expand.bias);
            let nb = branches.len();
            let weight = |n: usize, b: usize, c: usize| {
                let e: Vec<f64> = (0..nb).map(|g| logits.at(n, g * s.c + c, 0, 0).exp()).collect();
                e[b] / e.iter().sum::<f64>()
            };
            agg = Tensor4::from_fn(s, |n, c, i, j| {
                (0..nb).map(|b| weight(n, b, c) * branches[b].at(n, c, i, j)).sum::<f64>()
            });
        }
        Selection::None => {
            for b in &branches {
                agg = zip(&agg, b, |p, q| p + q);
            }
        }
    }
    let attn = pointwise(&agg, &m.fusion.weight, &m.fusion.bias);
    (zip(x, &attn, |a, b| a * b), masks_out)
}

/// Axis-aligned square annotation line of side `side` at the origin.
pub fn square_box(category: &str, side: f64) -> String {
    format!("0 0 {side} 0 {side} {side} 0 {side} {category} 0\n")
}

pub fn sample(
    name: &str,
    annotation_text: &str,
    rf: Vec<usize>,
    blocks: Vec<(usize, usize, Tensor4<f64>)>,
) -> lsk_core::analysis::ImageSample<f64> {
    let mut record = lsk_core::ActivationRecord::new(rf);
    for (stage, depth, masks) in blocks {
        record.entries.push(lsk_core::MaskEntry { stage, depth, masks });
    }
    lsk_core::analysis::ImageSample {
        name: name.to_string(),
        record,
        annotations: lsk_core::analysis::parse_annotations(annotation_text),
    }
}

/// Two single-category groups over three blocks with RF `[5, 23]`. In
/// `needs-context` images the larger-RF mask sits `bias` above the smaller
/// one, in `local-texture` images `bias` below, plus uniform noise of
/// amplitude `noise`.
pub fn biased_fixture(seed: u64, images_per_category: usize, bias: f64, noise: f64) -> Vec<lsk_core::analysis::ImageSample<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (category, sign) in [("needs-context", 1.0), ("local-texture", -1.0)] {
        for i in 0..images_per_category {
            let blocks = [(1, 1), (1, 2), (2, 1)]
                .into_iter()
                .map(|(s, d)| {
                    let masks = Tensor4::from_fn([1, 2, 4, 4], |_, b, _, _| {
                        let base = 0.5 + if b == 1 { sign * bias / 2.0 } else { -sign * bias / 2.0 };
                        (base + r.gen_range(-noise..=noise)).clamp(0.0, 1.0)
                    });
                    (s, d, masks)
                })
                .collect();
            let side = r.gen_range(4.0..12.0);
            out.push(sample(&format!("{category}-{i}"), &square_box(category, side), vec![5, 23], blocks));
        }
    }
    out
}

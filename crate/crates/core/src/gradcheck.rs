//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Each check draws a random instance, picks a random output weighting `G`
//! and compares the analytic gradient of `L = Σ G ⊙ y` against
//! `(L(θ + h) − L(θ − h)) / 2h` for every scalar input. The error metric is
//! `|a − n| / max(|a|, |n|, 1e-8)`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::layers::{Init, Parameterized};
use crate::lsk::{LskConfig, LskModule, PoolingSet, SelectionMode};
use crate::ops::{self, BinaryOp, ConvSpec, PoolMode};
use crate::plan::{validate_plan, KernelSpec};
use crate::tensor::{Shape4, Tensor4};

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-8;

/// Every check [`run_op`] accepts, in suite order.
pub const OPS: &[&str] = &[
    "depthwise_conv",
    "pointwise_conv",
    "conv2d",
    "channel_pool_avg",
    "channel_pool_max",
    "global_avg_pool",
    "mul",
    "add",
    "sigmoid",
    "gelu",
    "concat_channels",
    "affine_channel_norm",
    "gate_spatial",
    "scale_channels",
    "group_softmax",
    "lsk_spatial",
    "lsk_spatial_avg",
    "lsk_spatial_max",
    "lsk_channel",
    "lsk_none",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradcheckError {
    #[error("unknown op {name:?}; known ops: {known}", name = .0, known = OPS.join(", "))]
    UnknownOp(String),
}

/// Deliberate corruption of analytic gradients, for testing the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Replace the first analytic gradient entry `a` of every input with
    /// `a·(1 + δ) + δ`.
    ScaleFirst(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub op: String,
    pub max_rel_err: f64,
    /// `input[index]` with the largest error.
    pub worst: String,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} max_rel_err {:.3e}  worst {:<16} ({} entries) {}",
            self.op,
            self.max_rel_err,
            self.worst,
            self.checked,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Forward = Box<dyn Fn(&[Vec<f64>]) -> Tensor4<f64>>;
type Backward = Box<dyn Fn(&[Vec<f64>], &Tensor4<f64>) -> Vec<Vec<f64>>>;

struct Case {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    forward: Forward,
    backward: Backward,
}

fn loss(y: &Tensor4<f64>, g: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

fn check(op: &str, case: Case, rng: &mut ChaCha8Rng, fault: Option<Fault>) -> CheckResult {
    let y = (case.forward)(&case.values);
    let g = Tensor4::from_fn(y.shape(), |_, _, _, _| rng.gen_range(-1.0..=1.0));
    let mut analytic = (case.backward)(&case.values, &g);
    if let Some(Fault::ScaleFirst(delta)) = fault {
        for a in &mut analytic {
            if let Some(v) = a.first_mut() {
                *v = *v * (1.0 + delta) + delta;
            }
        }
    }

    let mut values = case.values.clone();
    let mut worst = (0.0, String::from("-"));
    let mut checked = 0;
    for (i, name) in case.names.iter().enumerate() {
        assert_eq!(analytic[i].len(), values[i].len(), "{op}: gradient length for {name}");
        for j in 0..values[i].len() {
            let orig = values[i][j];
            values[i][j] = orig + FD_STEP;
            let plus = loss(&(case.forward)(&values), &g);
            values[i][j] = orig - FD_STEP;
            let minus = loss(&(case.forward)(&values), &g);
            values[i][j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let e = rel_err(analytic[i][j], numeric);
            checked += 1;
            if e > worst.0 || (e.is_nan() && !worst.0.is_nan()) {
                worst = (e, format!("{name}[{j}]"));
            }
        }
    }
    CheckResult {
        op: op.to_string(),
        max_rel_err: worst.0,
        worst: worst.1,
        checked,
    }
}

fn t(shape: Shape4, v: &[f64]) -> Tensor4<f64> {
    Tensor4::new(shape, v.to_vec()).expect("gradcheck shapes are consistent")
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Values spaced at least 0.05 apart, so a finite-difference step never
/// flips which channel attains a maximum.
fn distinct_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|i| -2.0 + 4.0 * i as f64 / len as f64 + 0.01 * rng.gen::<f64>()).collect();
    v.shuffle(rng);
    v
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn unary(
    shape: Shape4,
    values: Vec<f64>,
    f: fn(&Tensor4<f64>) -> Tensor4<f64>,
    b: fn(&Tensor4<f64>, &Tensor4<f64>, &Tensor4<f64>) -> Tensor4<f64>,
) -> Case {
    Case {
        names: names(&["x"]),
        values: vec![values],
        forward: Box::new(move |v| f(&t(shape, &v[0]))),
        backward: Box::new(move |v, g| {
            let x = t(shape, &v[0]);
            let y = f(&x);
            vec![b(g, &x, &y).into_data()]
        }),
    }
}

fn op_case(op: &str, rng: &mut ChaCha8Rng) -> Option<Case> {
    let case = match op {
        "depthwise_conv" => {
            let xs = Shape4::new(2, 3, 6, 5);
            let spec = ConvSpec::same(3, 2);
            let ws = Shape4::new(3, 1, 3, 3);
            Case {
                names: names(&["x", "weights", "bias"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, ws.numel(), 1.0), rand_vec(rng, 3, 1.0)],
                forward: Box::new(move |v| ops::depthwise_conv(&t(xs, &v[0]), &t(ws, &v[1]), &v[2], &spec).unwrap()),
                backward: Box::new(move |v, g| {
                    let r = ops::depthwise_conv_backward(g, &t(xs, &v[0]), &t(ws, &v[1]), &spec).unwrap();
                    vec![r.x.into_data(), r.weights.into_data(), r.bias]
                }),
            }
        }
        "pointwise_conv" => {
            let xs = Shape4::new(2, 4, 3, 3);
            let ws = Shape4::new(5, 4, 1, 1);
            Case {
                names: names(&["x", "weights", "bias"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, ws.numel(), 1.0), rand_vec(rng, 5, 1.0)],
                forward: Box::new(move |v| ops::pointwise_conv(&t(xs, &v[0]), &t(ws, &v[1]), &v[2]).unwrap()),
                backward: Box::new(move |v, g| {
                    let r = ops::pointwise_conv_backward(g, &t(xs, &v[0]), &t(ws, &v[1])).unwrap();
                    vec![r.x.into_data(), r.weights.into_data(), r.bias]
                }),
            }
        }
        "conv2d" => {
            let xs = Shape4::new(1, 2, 6, 6);
            let ws = Shape4::new(3, 2, 3, 3);
            let spec = ConvSpec::strided(3, 2, 1);
            Case {
                names: names(&["x", "weights", "bias"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, ws.numel(), 1.0), rand_vec(rng, 3, 1.0)],
                forward: Box::new(move |v| ops::conv2d(&t(xs, &v[0]), &t(ws, &v[1]), &v[2], &spec).unwrap()),
                backward: Box::new(move |v, g| {
                    let r = ops::conv2d_backward(g, &t(xs, &v[0]), &t(ws, &v[1]), &spec).unwrap();
                    vec![r.x.into_data(), r.weights.into_data(), r.bias]
                }),
            }
        }
        "channel_pool_avg" | "channel_pool_max" => {
            let mode = if op.ends_with("avg") { PoolMode::Avg } else { PoolMode::Max };
            let xs = Shape4::new(2, 5, 4, 3);
            Case {
                names: names(&["x"]),
                values: vec![distinct_vec(rng, xs.numel())],
                forward: Box::new(move |v| ops::channel_pool(&t(xs, &v[0]), mode)),
                backward: Box::new(move |v, g| vec![ops::channel_pool_backward(g, &t(xs, &v[0]), mode).unwrap().into_data()]),
            }
        }
        "global_avg_pool" => {
            let xs = Shape4::new(2, 3, 4, 5);
            Case {
                names: names(&["x"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0)],
                forward: Box::new(move |v| ops::global_avg_pool(&t(xs, &v[0]))),
                backward: Box::new(move |_, g| vec![ops::global_avg_pool_backward(g, xs).unwrap().into_data()]),
            }
        }
        "mul" | "add" => {
            let bop = if op == "mul" { BinaryOp::Mul } else { BinaryOp::Add };
            let xs = Shape4::new(2, 3, 4, 4);
            Case {
                names: names(&["a", "b"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, xs.numel(), 2.0)],
                forward: Box::new(move |v| ops::elementwise(&t(xs, &v[0]), &t(xs, &v[1]), bop).unwrap()),
                backward: Box::new(move |v, g| {
                    let (ga, gb) = ops::elementwise_backward(g, &t(xs, &v[0]), &t(xs, &v[1]), bop).unwrap();
                    vec![ga.into_data(), gb.into_data()]
                }),
            }
        }
        "sigmoid" => {
            let xs = Shape4::new(2, 3, 4, 4);
            let v = rand_vec(rng, xs.numel(), 2.0);
            unary(xs, v, ops::sigmoid, |g, _, y| ops::sigmoid_backward(g, y).unwrap())
        }
        "gelu" => {
            let xs = Shape4::new(2, 3, 4, 4);
            let v = rand_vec(rng, xs.numel(), 2.0);
            unary(xs, v, ops::gelu, |g, x, _| ops::gelu_backward(g, x).unwrap())
        }
        "concat_channels" => {
            let (a, b) = (Shape4::new(2, 2, 3, 3), Shape4::new(2, 3, 3, 3));
            Case {
                names: names(&["a", "b"]),
                values: vec![rand_vec(rng, a.numel(), 2.0), rand_vec(rng, b.numel(), 2.0)],
                forward: Box::new(move |v| ops::concat_channels(&[&t(a, &v[0]), &t(b, &v[1])]).unwrap()),
                backward: Box::new(move |_, g| {
                    ops::split_channels(g, &[2, 3])
                        .unwrap()
                        .into_iter()
                        .map(Tensor4::into_data)
                        .collect()
                }),
            }
        }
        "affine_channel_norm" => {
            let xs = Shape4::new(2, 3, 4, 4);
            let mean = rand_vec(rng, 3, 1.0);
            let var: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
            let eps = crate::layers::NORM_EPS;
            let (m2, v2) = (mean.clone(), var.clone());
            Case {
                names: names(&["x", "scale", "shift"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, 3, 1.5), rand_vec(rng, 3, 1.0)],
                forward: Box::new(move |v| ops::affine_channel_norm(&t(xs, &v[0]), &v[1], &v[2], &mean, &var, eps).unwrap()),
                backward: Box::new(move |v, g| {
                    let r = ops::affine_channel_norm_backward(g, &t(xs, &v[0]), &v[1], &m2, &v2, eps).unwrap();
                    vec![r.x.into_data(), r.scale, r.shift]
                }),
            }
        }
        "gate_spatial" => {
            let xs = Shape4::new(2, 3, 4, 4);
            let ms = xs.with_channels(1);
            Case {
                names: names(&["x", "mask"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, ms.numel(), 1.0)],
                forward: Box::new(move |v| ops::gate_spatial(&t(xs, &v[0]), &t(ms, &v[1])).unwrap()),
                backward: Box::new(move |v, g| {
                    let (gx, gm) = ops::gate_spatial_backward(g, &t(xs, &v[0]), &t(ms, &v[1])).unwrap();
                    vec![gx.into_data(), gm.into_data()]
                }),
            }
        }
        "scale_channels" => {
            let xs = Shape4::new(2, 3, 4, 4);
            let ws = Shape4::new(2, 3, 1, 1);
            Case {
                names: names(&["x", "weights"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0), rand_vec(rng, ws.numel(), 1.0)],
                forward: Box::new(move |v| ops::scale_channels(&t(xs, &v[0]), &t(ws, &v[1])).unwrap()),
                backward: Box::new(move |v, g| {
                    let (gx, gw) = ops::scale_channels_backward(g, &t(xs, &v[0]), &t(ws, &v[1])).unwrap();
                    vec![gx.into_data(), gw.into_data()]
                }),
            }
        }
        "group_softmax" => {
            let xs = Shape4::new(2, 6, 1, 1);
            Case {
                names: names(&["logits"]),
                values: vec![rand_vec(rng, xs.numel(), 2.0)],
                forward: Box::new(move |v| ops::group_softmax(&t(xs, &v[0]), 3).unwrap()),
                backward: Box::new(move |v, g| {
                    let p = ops::group_softmax(&t(xs, &v[0]), 3).unwrap();
                    vec![ops::group_softmax_backward(g, &p, 3).unwrap().into_data()]
                }),
            }
        }
        "lsk_spatial" => lsk_case(rng, SelectionMode::Spatial, PoolingSet::BOTH),
        "lsk_spatial_avg" => lsk_case(rng, SelectionMode::Spatial, PoolingSet::AVG),
        "lsk_spatial_max" => lsk_case(rng, SelectionMode::Spatial, PoolingSet::MAX),
        "lsk_channel" => lsk_case(rng, SelectionMode::Channel, PoolingSet::BOTH),
        "lsk_none" => lsk_case(rng, SelectionMode::None, PoolingSet::BOTH),
        _ => return None,
    };
    Some(case)
}

/// Small LSK module used by the end-to-end checks: 4 channels, branches of
/// 2, plan `(3,1)→(5,2)`, 3×3 selection conv.
pub fn gradcheck_module(mode: SelectionMode, pooling: PoolingSet, seed: u64) -> LskModule<f64> {
    let plan = validate_plan(&[KernelSpec::new(3, 1), KernelSpec::new(5, 2)]).expect("valid plan");
    let config = LskConfig::new(plan, 4)
        .with_mode(mode)
        .with_pooling(pooling)
        .with_selection_kernel(3);
    let mut module = LskModule::init(config, &mut Init::new(seed)).expect("valid config");
    // Non-zero biases so their gradients are exercised too.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    module.visit_mut("", &mut |name, _, data, _| {
        if name.ends_with("bias") {
            for v in data.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    });
    module
}

fn set_weights(module: &mut LskModule<f64>, flat: &[Vec<f64>]) {
    let mut i = 0;
    module.visit_mut("", &mut |_, _, data, _| {
        data.copy_from_slice(&flat[i]);
        i += 1;
    });
}

fn lsk_case(rng: &mut ChaCha8Rng, mode: SelectionMode, pooling: PoolingSet) -> Case {
    let module = gradcheck_module(mode, pooling, rng.gen());
    let xs = Shape4::new(2, 4, 5, 5);
    let mut param_names = vec!["x".to_string()];
    module.visit("", &mut |name, _, _, _| param_names.push(name.to_string()));
    let mut values = vec![rand_vec(rng, xs.numel(), 2.0)];
    values.extend(module.flat_weights());
    let m2 = module.clone();
    Case {
        names: param_names,
        values,
        forward: Box::new(move |v| {
            let mut m = module.clone();
            set_weights(&mut m, &v[1..]);
            m.forward(&t(xs, &v[0])).unwrap().y
        }),
        backward: Box::new(move |v, g| {
            let mut m = m2.clone();
            set_weights(&mut m, &v[1..]);
            let (_, cache) = m.forward_cached(&t(xs, &v[0])).unwrap();
            let (gx, grads) = m.backward(&cache, g).unwrap();
            let mut out = vec![gx.into_data()];
            out.extend(grads.flat_weights());
            out
        }),
    }
}

fn op_seed(seed: u64, op: &str) -> u64 {
    op.bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Runs one named check. Each op draws from its own stream derived from
/// `seed`, so results do not depend on which other ops run.
pub fn run_op(op: &str, seed: u64, fault: Option<Fault>) -> Result<CheckResult, GradcheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(op_seed(seed, op));
    let case = op_case(op, &mut rng).ok_or_else(|| GradcheckError::UnknownOp(op.to_string()))?;
    Ok(check(op, case, &mut rng, fault))
}

pub fn run_all(seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    OPS.iter()
        .map(|op| run_op(op, seed, fault).expect("OPS lists known ops"))
        .collect()
}

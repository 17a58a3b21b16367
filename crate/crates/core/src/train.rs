//! End-to-end smoke training: an LSK module, global average pooling and a
//! linear head fitted to a few random targets by plain gradient descent.
//!
//! The loss is the mean squared error over samples and outputs. Success on
//! this task shows that the backward passes compose into a usable gradient,
//! nothing more.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::layers::{Init, Parameterized};
use crate::lsk::{ConfigError, LskConfig, LskModule, SelectionMode};
use crate::ops;
use crate::plan::DecompositionPlan;
use crate::tensor::{ShapeError, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    /// Update the LSK module and the head.
    Full,
    /// Freeze the module; the problem is then a convex least-squares fit.
    HeadOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub samples: usize,
    pub channels: usize,
    pub size: usize,
    pub outputs: usize,
    pub plan: DecompositionPlan,
    pub mode: SelectionMode,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub scope: TrainScope,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            channels: 8,
            size: 8,
            outputs: 1,
            plan: DecompositionPlan::default_pair(),
            mode: SelectionMode::Spatial,
            steps: 500,
            lr: 0.5,
            seed: 0,
            scope: TrainScope::Full,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
    #[error("at most 16 samples are supported, got {0}")]
    TooManySamples(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each step, then the loss after the last step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss is recorded")
    }
}

/// Inputs `(samples, channels, size, size)` and targets, both uniform in
/// `[-1, 1]`.
pub fn synthetic_dataset(config: &ToyConfig) -> (Tensor4<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xda7a);
    let x = Tensor4::from_fn([config.samples, config.channels, config.size, config.size], |_, _, _, _| {
        rng.gen_range(-1.0..=1.0)
    });
    let targets = (0..config.samples * config.outputs).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    (x, targets)
}

struct Head {
    /// `outputs × channels`, row-major.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Head {
    fn forward(&self, pooled: &Tensor4<f32>, outputs: usize) -> Vec<f32> {
        let s = pooled.shape();
        let mut out = Vec::with_capacity(s.n * outputs);
        for n in 0..s.n {
            for o in 0..outputs {
                let row = &self.weight[o * s.c..(o + 1) * s.c];
                let mut acc = self.bias[o];
                for c in 0..s.c {
                    acc += row[c] * pooled.at(n, c, 0, 0);
                }
                out.push(acc);
            }
        }
        out
    }
}

fn mse(pred: &[f32], targets: &[f32]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let d = (p - t) as f64;
            d * d
        })
        .sum();
    sum / pred.len() as f64
}

pub fn toy_train(config: &ToyConfig) -> Result<TrainReport, TrainError> {
    if config.samples > 16 {
        return Err(TrainError::TooManySamples(config.samples));
    }
    let (x, targets) = synthetic_dataset(config);
    let mut init = Init::new(config.seed);
    let lsk_config = LskConfig::new(config.plan.clone(), config.channels).with_mode(config.mode);
    let mut module = LskModule::<f32>::init(lsk_config, &mut init)?;
    let c = config.channels;
    let k = config.outputs;
    let mut head = Head {
        weight: init.uniform_vec(k * c, 1.0 / (c as f64).sqrt()),
        bias: vec![0.0; k],
    };
    let lr = config.lr as f32;

    let mut losses = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let (out, cache) = module.forward_cached(&x)?;
        let pooled = ops::global_avg_pool(&out.y);
        let pred = head.forward(&pooled, k);
        let loss = mse(&pred, &targets);
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        losses.push(loss);
        if step == config.steps {
            break;
        }

        let scale = 2.0 / pred.len() as f32;
        let d_pred: Vec<f32> = pred.iter().zip(&targets).map(|(&p, &t)| scale * (p - t)).collect();
        let mut g_weight = vec![0.0f32; k * c];
        let mut g_bias = vec![0.0f32; k];
        let mut g_pooled = Tensor4::zeros(pooled.shape());
        for n in 0..config.samples {
            for o in 0..k {
                let d = d_pred[n * k + o];
                g_bias[o] += d;
                for ch in 0..c {
                    g_weight[o * c + ch] += d * pooled.at(n, ch, 0, 0);
                    let idx = g_pooled.index(n, ch, 0, 0);
                    g_pooled.data_mut()[idx] += d * head.weight[o * c + ch];
                }
            }
        }

        if config.scope == TrainScope::Full {
            let g_y = ops::global_avg_pool_backward(&g_pooled, out.y.shape())?;
            let (_, grads) = module.backward(&cache, &g_y)?;
            let flat = grads.flat_weights();
            let mut i = 0;
            module.visit_mut("", &mut |_, _, data, _| {
                for (p, g) in data.iter_mut().zip(&flat[i]) {
                    *p -= lr * g;
                }
                i += 1;
            });
        }
        for (p, g) in head.weight.iter_mut().zip(&g_weight) {
            *p -= lr * g;
        }
        for (p, g) in head.bias.iter_mut().zip(&g_bias) {
            *p -= lr * g;
        }
    }
    Ok(TrainReport { losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_keeps_loss_constant() {
        let cfg = ToyConfig {
            steps: 5,
            lr: 0.0,
            ..ToyConfig::default()
        };
        let r = toy_train(&cfg).unwrap();
        assert_eq!(r.losses.len(), 6);
        assert!(r.losses.iter().all(|&l| l == r.losses[0]));
    }

    #[test]
    fn head_only_step_descends() {
        let cfg = ToyConfig {
            steps: 1,
            lr: 1e-3,
            scope: TrainScope::HeadOnly,
            ..ToyConfig::default()
        };
        let r = toy_train(&cfg).unwrap();
        assert!(r.final_loss() < r.initial_loss(), "{:?}", r.losses);
    }

    #[test]
    fn divergence_names_the_step() {
        let cfg = ToyConfig {
            steps: 200,
            lr: 1e6,
            ..ToyConfig::default()
        };
        assert!(matches!(toy_train(&cfg), Err(TrainError::Diverged { .. })));
    }
}

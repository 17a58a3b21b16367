//! The large selective kernel module.
//!
//! Forward pass, for input `X` with `c` channels and a plan of `N` kernels:
//!
//! 1. `U₀ = X`, `Uᵢ = DWᵢ(Uᵢ₋₁)`: the depth-wise chain, each stage seeing a
//!    larger receptive field.
//! 2. `Ũᵢ = Mixᵢ(Uᵢ)`: a 1×1 conv per branch, `c → c_mid`.
//! 3. Selection. `Spatial` concatenates the branches, pools them across
//!    channels (average and/or max), maps the pooled descriptors to `N`
//!    logits with a `q×q` conv and applies a sigmoid, giving one mask per
//!    branch. `Channel` replaces this with per-channel softmax weights from a
//!    global-pooled bottleneck. `None` weights every branch by one.
//! 4. `S = Fuse(Σᵢ maskᵢ·Ũᵢ)`: 1×1 conv back to `c` channels.
//! 5. `Y = X ⊙ S`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::layers::{join, Conv2d, DepthwiseConv, Init, Parameterized, Pointwise, Visitor, VisitorMut};
use crate::ops::{self, BinaryOp, ConvSpec, PoolMode};
use crate::plan::DecompositionPlan;
use crate::tensor::{Real, ShapeError, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SelectionMode {
    #[default]
    Spatial,
    Channel,
    None,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Spatial => "spatial",
            SelectionMode::Channel => "channel",
            SelectionMode::None => "none",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" | "ss" => Ok(SelectionMode::Spatial),
            "channel" | "cs" => Ok(SelectionMode::Channel),
            "none" => Ok(SelectionMode::None),
            other => Err(ConfigError::Parse(format!("unknown selection mode {other:?}"))),
        }
    }
}

/// Which channel-pooled descriptors feed the spatial selection conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolingSet {
    pub avg: bool,
    pub max: bool,
}

impl PoolingSet {
    pub const BOTH: Self = Self { avg: true, max: true };
    pub const AVG: Self = Self { avg: true, max: false };
    pub const MAX: Self = Self { avg: false, max: true };

    /// Descriptor order: average first, then max.
    pub fn modes(&self) -> Vec<PoolMode> {
        let mut m = Vec::with_capacity(2);
        if self.avg {
            m.push(PoolMode::Avg);
        }
        if self.max {
            m.push(PoolMode::Max);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.avg as usize + self.max as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for PoolingSet {
    fn default() -> Self {
        Self::BOTH
    }
}

impl fmt::Display for PoolingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.modes().into_iter().map(PoolMode::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for PoolingSet {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = PoolingSet { avg: false, max: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "avg" | "mean" => set.avg = true,
                "max" => set.max = true,
                other => return Err(ConfigError::Parse(format!("unknown pooling {other:?}"))),
            }
        }
        if set.is_empty() {
            return Err(ConfigError::EmptyPooling);
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("pooling set is empty; spatial selection needs avg, max or both")]
    EmptyPooling,
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("selection kernel size {0} must be odd")]
    EvenSelectionKernel(usize),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LskConfig {
    pub plan: DecompositionPlan,
    pub channels: usize,
    pub branch_channels: usize,
    pub mode: SelectionMode,
    pub pooling: PoolingSet,
    pub selection_kernel: usize,
    /// Bottleneck width of channel-mode selection.
    pub channel_hidden: usize,
}

impl LskConfig {
    pub const DEFAULT_SELECTION_KERNEL: usize = 7;

    /// Spatial selection, both poolings, `q = 7`, branches at half width.
    pub fn new(plan: DecompositionPlan, channels: usize) -> Self {
        let branch_channels = (channels / 2).max(1);
        Self {
            plan,
            channels,
            branch_channels,
            mode: SelectionMode::Spatial,
            pooling: PoolingSet::BOTH,
            selection_kernel: Self::DEFAULT_SELECTION_KERNEL,
            channel_hidden: Self::default_channel_hidden(branch_channels),
        }
    }

    pub fn default_channel_hidden(branch_channels: usize) -> usize {
        (branch_channels / 4).max(4)
    }

    pub fn with_mode(mut self, mode: SelectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_pooling(mut self, pooling: PoolingSet) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn with_selection_kernel(mut self, q: usize) -> Self {
        self.selection_kernel = q;
        self
    }

    pub fn with_branch_channels(mut self, c_mid: usize) -> Self {
        self.branch_channels = c_mid;
        self.channel_hidden = Self::default_channel_hidden(c_mid);
        self
    }

    pub fn branches(&self) -> usize {
        self.plan.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channels == 0 {
            return Err(ConfigError::Zero("channels"));
        }
        if self.branch_channels == 0 {
            return Err(ConfigError::Zero("branch channels"));
        }
        if self.channel_hidden == 0 {
            return Err(ConfigError::Zero("channel-selection hidden width"));
        }
        if self.selection_kernel == 0 {
            return Err(ConfigError::Zero("selection kernel"));
        }
        if self.selection_kernel % 2 == 0 {
            return Err(ConfigError::EvenSelectionKernel(self.selection_kernel));
        }
        if self.pooling.is_empty() {
            return Err(ConfigError::EmptyPooling);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection<T: Real> {
    /// `(N, |pooling|, q, q)` conv over the pooled descriptors.
    Spatial(Conv2d<T>),
    Channel { reduce: Pointwise<T>, expand: Pointwise<T> },
    None,
}

/// Parameters of one LSK module. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct LskModule<T: Real> {
    config: LskConfig,
    pub dw: Vec<DepthwiseConv<T>>,
    pub mixers: Vec<Pointwise<T>>,
    pub selection: Selection<T>,
    pub fusion: Pointwise<T>,
}

#[derive(Debug, Clone)]
pub struct LskOutput<T: Real> {
    pub y: Tensor4<T>,
    /// Sigmoid masks `(n, N, h, w)`; present in spatial mode only.
    pub masks: Option<Tensor4<T>>,
}

#[derive(Debug, Clone)]
enum SelectionCache<T: Real> {
    Spatial {
        concat: Tensor4<T>,
        descriptors: Tensor4<T>,
        masks: Tensor4<T>,
        mask_parts: Vec<Tensor4<T>>,
    },
    Channel {
        pooled: Tensor4<T>,
        hidden_pre: Tensor4<T>,
        hidden: Tensor4<T>,
        probs: Tensor4<T>,
        weight_parts: Vec<Tensor4<T>>,
    },
    None,
}

/// Intermediate values kept for [`LskModule::backward`].
#[derive(Debug, Clone)]
pub struct LskCache<T: Real> {
    x: Tensor4<T>,
    /// `U₁..U_N`.
    chain: Vec<Tensor4<T>>,
    /// `Ũ₁..Ũ_N`.
    branches: Vec<Tensor4<T>>,
    selection: SelectionCache<T>,
    aggregate: Tensor4<T>,
    attention: Tensor4<T>,
}

impl<T: Real> LskModule<T> {
    fn build(config: LskConfig, mut make: impl FnMut(Part) -> Layer<T>) -> Result<Self, ConfigError> {
        config.validate()?;
        let c = config.channels;
        let cm = config.branch_channels;
        let n = config.branches();
        let dw = config
            .plan
            .stages()
            .iter()
            .map(|s| make(Part::Depthwise(c, s.k, s.d)).depthwise())
            .collect();
        let mixers = (0..n).map(|_| make(Part::Pointwise(c, cm)).pointwise()).collect();
        let selection = match config.mode {
            SelectionMode::Spatial => {
                let spec = ConvSpec::same(config.selection_kernel, 1);
                Selection::Spatial(make(Part::SelectionConv(config.pooling.len(), n, spec)).conv())
            }
            SelectionMode::Channel => Selection::Channel {
                reduce: make(Part::Pointwise(cm, config.channel_hidden)).pointwise(),
                expand: make(Part::Pointwise(config.channel_hidden, n * cm)).pointwise(),
            },
            SelectionMode::None => Selection::None,
        };
        let fusion = make(Part::Pointwise(cm, c)).pointwise();
        Ok(Self {
            config,
            dw,
            mixers,
            selection,
            fusion,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: LskConfig) -> Result<Self, ConfigError> {
        Self::build(config, |part| part.zeros())
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(config: LskConfig, init: &mut Init) -> Result<Self, ConfigError> {
        Self::build(config, |part| part.init(init))
    }

    pub fn config(&self) -> &LskConfig {
        &self.config
    }

    pub fn mode(&self) -> SelectionMode {
        self.config.mode
    }

    pub fn selection_conv_mut(&mut self) -> Option<&mut Conv2d<T>> {
        match &mut self.selection {
            Selection::Spatial(conv) => Some(conv),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<LskOutput<T>, ShapeError> {
        self.forward_cached(x).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, x: &Tensor4<T>) -> Result<(LskOutput<T>, LskCache<T>), ShapeError> {
        let s = x.shape();
        if s.c != self.config.channels {
            return Err(ShapeError::mismatch(
                "lsk_forward",
                format!("input has {} channels, module expects {}", s.c, self.config.channels),
            ));
        }

        let mut chain = Vec::with_capacity(self.dw.len());
        let mut prev = x;
        for dw in &self.dw {
            chain.push(dw.forward(prev)?);
            prev = chain.last().expect("just pushed");
        }
        let branches = self
            .mixers
            .iter()
            .zip(&chain)
            .map(|(mix, u)| mix.forward(u))
            .collect::<Result<Vec<_>, _>>()?;

        let (aggregate, selection, masks) = match &self.selection {
            Selection::Spatial(conv) => {
                let refs: Vec<&Tensor4<T>> = branches.iter().collect();
                let concat = ops::concat_channels(&refs)?;
                let pooled: Vec<Tensor4<T>> = self
                    .config
                    .pooling
                    .modes()
                    .into_iter()
                    .map(|m| ops::channel_pool(&concat, m))
                    .collect();
                let descriptors = ops::concat_channels(&pooled.iter().collect::<Vec<_>>())?;
                let masks = ops::sigmoid(&conv.forward(&descriptors)?);
                let mask_parts = ops::split_channels(&masks, &vec![1; branches.len()])?;
                let mut agg = ops::gate_spatial(&branches[0], &mask_parts[0])?;
                for (b, m) in branches.iter().zip(&mask_parts).skip(1) {
                    agg.accumulate(&ops::gate_spatial(b, m)?)?;
                }
                (
                    agg,
                    SelectionCache::Spatial {
                        concat,
                        descriptors,
                        masks: masks.clone(),
                        mask_parts,
                    },
                    Some(masks),
                )
            }
            Selection::Channel { reduce, expand } => {
                let mut total = branches[0].clone();
                for b in &branches[1..] {
                    total.accumulate(b)?;
                }
                let pooled = ops::global_avg_pool(&total);
                let hidden_pre = reduce.forward(&pooled)?;
                let hidden = ops::gelu(&hidden_pre);
                let probs = ops::group_softmax(&expand.forward(&hidden)?, branches.len())?;
                let weight_parts =
                    ops::split_channels(&probs, &vec![self.config.branch_channels; branches.len()])?;
                let mut agg = ops::scale_channels(&branches[0], &weight_parts[0])?;
                for (b, wgt) in branches.iter().zip(&weight_parts).skip(1) {
                    agg.accumulate(&ops::scale_channels(b, wgt)?)?;
                }
                (
                    agg,
                    SelectionCache::Channel {
                        pooled,
                        hidden_pre,
                        hidden,
                        probs,
                        weight_parts,
                    },
                    None,
                )
            }
            Selection::None => {
                let mut agg = branches[0].clone();
                for b in &branches[1..] {
                    agg.accumulate(b)?;
                }
                (agg, SelectionCache::None, None)
            }
        };

        let attention = self.fusion.forward(&aggregate)?;
        let y = ops::elementwise(x, &attention, BinaryOp::Mul)?;
        Ok((
            LskOutput { y, masks },
            LskCache {
                x: x.clone(),
                chain,
                branches,
                selection,
                aggregate,
                attention,
            },
        ))
    }

    /// Returns `(grad_x, parameter gradients)`.
    pub fn backward(&self, cache: &LskCache<T>, grad_y: &Tensor4<T>) -> Result<(Tensor4<T>, Self), ShapeError> {
        if cache.chain.len() != self.dw.len() {
            return Err(ShapeError::mismatch(
                "lsk_backward",
                "cached state was produced by a module with a different plan",
            ));
        }
        let (mut grad_x, grad_attention) = ops::elementwise_backward(grad_y, &cache.x, &cache.attention, BinaryOp::Mul)?;
        let (grad_agg, g_fusion) = self.fusion.backward(&grad_attention, &cache.aggregate)?;

        let n_branches = cache.branches.len();
        let mut grad_branches: Vec<Tensor4<T>>;
        let g_selection = match (&self.selection, &cache.selection) {
            (
                Selection::Spatial(conv),
                SelectionCache::Spatial {
                    concat,
                    descriptors,
                    masks,
                    mask_parts,
                },
            ) => {
                grad_branches = Vec::with_capacity(n_branches);
                let mut grad_masks = Vec::with_capacity(n_branches);
                for (b, m) in cache.branches.iter().zip(mask_parts) {
                    let (gb, gm) = ops::gate_spatial_backward(&grad_agg, b, m)?;
                    grad_branches.push(gb);
                    grad_masks.push(gm);
                }
                let grad_masks = ops::concat_channels(&grad_masks.iter().collect::<Vec<_>>())?;
                let grad_logits = ops::sigmoid_backward(&grad_masks, masks)?;
                let (grad_desc, g_conv) = conv.backward(&grad_logits, descriptors)?;
                let modes = self.config.pooling.modes();
                let grad_pooled = ops::split_channels(&grad_desc, &vec![1; modes.len()])?;
                let mut grad_concat = Tensor4::zeros(concat.shape());
                for (mode, gp) in modes.into_iter().zip(&grad_pooled) {
                    grad_concat.accumulate(&ops::channel_pool_backward(gp, concat, mode)?)?;
                }
                let parts = ops::split_channels(&grad_concat, &vec![self.config.branch_channels; n_branches])?;
                for (gb, gp) in grad_branches.iter_mut().zip(&parts) {
                    gb.accumulate(gp)?;
                }
                Selection::Spatial(g_conv)
            }
            (
                Selection::Channel { reduce, expand },
                SelectionCache::Channel {
                    pooled,
                    hidden_pre,
                    hidden,
                    probs,
                    weight_parts,
                },
            ) => {
                grad_branches = Vec::with_capacity(n_branches);
                let mut grad_weights = Vec::with_capacity(n_branches);
                for (b, wgt) in cache.branches.iter().zip(weight_parts) {
                    let (gb, gw) = ops::scale_channels_backward(&grad_agg, b, wgt)?;
                    grad_branches.push(gb);
                    grad_weights.push(gw);
                }
                let grad_probs = ops::concat_channels(&grad_weights.iter().collect::<Vec<_>>())?;
                let grad_logits = ops::group_softmax_backward(&grad_probs, probs, n_branches)?;
                let (grad_hidden, g_expand) = expand.backward(&grad_logits, hidden)?;
                let grad_hidden_pre = ops::gelu_backward(&grad_hidden, hidden_pre)?;
                let (grad_pooled, g_reduce) = reduce.backward(&grad_hidden_pre, pooled)?;
                let grad_total = ops::global_avg_pool_backward(&grad_pooled, cache.branches[0].shape())?;
                for gb in &mut grad_branches {
                    gb.accumulate(&grad_total)?;
                }
                Selection::Channel {
                    reduce: g_reduce,
                    expand: g_expand,
                }
            }
            (Selection::None, SelectionCache::None) => {
                grad_branches = vec![grad_agg.clone(); n_branches];
                Selection::None
            }
            _ => {
                return Err(ShapeError::mismatch(
                    "lsk_backward",
                    "cached state was produced in a different selection mode",
                ))
            }
        };

        let mut g_mixers = Vec::with_capacity(n_branches);
        let mut grad_chain = Vec::with_capacity(n_branches);
        for ((mix, u), gb) in self.mixers.iter().zip(&cache.chain).zip(&grad_branches) {
            let (gu, gm) = mix.backward(gb, u)?;
            grad_chain.push(gu);
            g_mixers.push(gm);
        }

        let mut g_dw = Vec::with_capacity(n_branches);
        let mut carry: Option<Tensor4<T>> = None;
        for i in (0..self.dw.len()).rev() {
            let mut g = grad_chain[i].clone();
            if let Some(c) = carry.take() {
                g.accumulate(&c)?;
            }
            let input = if i == 0 { &cache.x } else { &cache.chain[i - 1] };
            let (g_in, g_layer) = self.dw[i].backward(&g, input)?;
            g_dw.push(g_layer);
            carry = Some(g_in);
        }
        g_dw.reverse();
        if let Some(c) = carry {
            grad_x.accumulate(&c)?;
        }

        Ok((
            grad_x,
            Self {
                config: self.config.clone(),
                dw: g_dw,
                mixers: g_mixers,
                selection: g_selection,
                fusion: g_fusion,
            },
        ))
    }
}

impl<T: Real> Parameterized<T> for LskModule<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        for (i, dw) in self.dw.iter().enumerate() {
            dw.visit(&join(prefix, &format!("dw{i}")), f);
        }
        for (i, mix) in self.mixers.iter().enumerate() {
            mix.visit(&join(prefix, &format!("mix{i}")), f);
        }
        match &self.selection {
            Selection::Spatial(conv) => conv.visit(&join(prefix, "select"), f),
            Selection::Channel { reduce, expand } => {
                reduce.visit(&join(prefix, "cs_reduce"), f);
                expand.visit(&join(prefix, "cs_expand"), f);
            }
            Selection::None => {}
        }
        self.fusion.visit(&join(prefix, "fuse"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        for (i, dw) in self.dw.iter_mut().enumerate() {
            dw.visit_mut(&join(prefix, &format!("dw{i}")), f);
        }
        for (i, mix) in self.mixers.iter_mut().enumerate() {
            mix.visit_mut(&join(prefix, &format!("mix{i}")), f);
        }
        match &mut self.selection {
            Selection::Spatial(conv) => conv.visit_mut(&join(prefix, "select"), f),
            Selection::Channel { reduce, expand } => {
                reduce.visit_mut(&join(prefix, "cs_reduce"), f);
                expand.visit_mut(&join(prefix, "cs_expand"), f);
            }
            Selection::None => {}
        }
        self.fusion.visit_mut(&join(prefix, "fuse"), f);
    }
}

enum Part {
    Depthwise(usize, usize, usize),
    Pointwise(usize, usize),
    SelectionConv(usize, usize, ConvSpec),
}

enum Layer<T: Real> {
    Depthwise(DepthwiseConv<T>),
    Pointwise(Pointwise<T>),
    Conv(Conv2d<T>),
}

impl Part {
    fn zeros<T: Real>(self) -> Layer<T> {
        match self {
            Part::Depthwise(c, k, d) => Layer::Depthwise(DepthwiseConv::zeros(c, k, d)),
            Part::Pointwise(i, o) => Layer::Pointwise(Pointwise::zeros(i, o)),
            Part::SelectionConv(i, o, spec) => Layer::Conv(Conv2d::zeros(i, o, spec)),
        }
    }

    fn init<T: Real>(self, init: &mut Init) -> Layer<T> {
        match self {
            Part::Depthwise(c, k, d) => Layer::Depthwise(DepthwiseConv::init(c, k, d, init)),
            Part::Pointwise(i, o) => Layer::Pointwise(Pointwise::init(i, o, init)),
            // zero bias keeps the initial masks at exactly 0.5
            Part::SelectionConv(i, o, spec) => Layer::Conv(Conv2d::init(i, o, spec, init)),
        }
    }
}

impl<T: Real> Layer<T> {
    fn depthwise(self) -> DepthwiseConv<T> {
        match self {
            Layer::Depthwise(l) => l,
            _ => unreachable!("part/layer kinds always match"),
        }
    }
    fn pointwise(self) -> Pointwise<T> {
        match self {
            Layer::Pointwise(l) => l,
            _ => unreachable!("part/layer kinds always match"),
        }
    }
    fn conv(self) -> Conv2d<T> {
        match self {
            Layer::Conv(l) => l,
            _ => unreachable!("part/layer kinds always match"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{validate_plan, KernelSpec};
    use crate::tensor::Shape4;

    fn small(mode: SelectionMode) -> LskModule<f64> {
        let plan = validate_plan(&[KernelSpec::new(3, 1), KernelSpec::new(5, 2)]).unwrap();
        let cfg = LskConfig::new(plan, 4).with_mode(mode).with_selection_kernel(3);
        LskModule::init(cfg, &mut Init::new(11)).unwrap()
    }

    #[test]
    fn zero_selection_conv_gives_half_masks() {
        let mut m = small(SelectionMode::Spatial);
        let conv = m.selection_conv_mut().unwrap();
        conv.weight.data_mut().fill(0.0);
        conv.bias.fill(0.0);
        let x = Init::new(3).uniform::<f64>([2, 4, 5, 5], 1.0);
        let out = m.forward(&x).unwrap();
        let masks = out.masks.unwrap();
        assert_eq!(masks.shape(), Shape4::new(2, 2, 5, 5));
        assert!(masks.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_input_gives_zero_output_in_every_mode() {
        for mode in [SelectionMode::Spatial, SelectionMode::Channel, SelectionMode::None] {
            let m = small(mode);
            let y = m.forward(&Tensor4::zeros([1, 4, 6, 6])).unwrap().y;
            assert!(y.data().iter().all(|&v| v == 0.0), "{mode}");
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let m = small(SelectionMode::Spatial);
        assert!(m.forward(&Tensor4::zeros([1, 3, 6, 6])).is_err());
    }

    #[test]
    fn masks_only_in_spatial_mode() {
        let x = Init::new(5).uniform::<f64>([1, 4, 4, 4], 1.0);
        assert!(small(SelectionMode::Channel).forward(&x).unwrap().masks.is_none());
        assert!(small(SelectionMode::None).forward(&x).unwrap().masks.is_none());
    }

    #[test]
    fn pooling_parse() {
        assert_eq!("avg,max".parse::<PoolingSet>().unwrap(), PoolingSet::BOTH);
        assert_eq!("max".parse::<PoolingSet>().unwrap(), PoolingSet::MAX);
        assert_eq!("".parse::<PoolingSet>(), Err(ConfigError::EmptyPooling));
        assert!("median".parse::<PoolingSet>().is_err());
    }

    #[test]
    fn config_rejects_empty_pooling() {
        let cfg = LskConfig::new(DecompositionPlan::default_pair(), 8).with_pooling(PoolingSet { avg: false, max: false });
        assert_eq!(LskModule::<f32>::zeros(cfg).unwrap_err(), ConfigError::EmptyPooling);
    }

    #[test]
    fn gradient_container_mirrors_parameters() {
        let m = small(SelectionMode::Spatial);
        let x = Init::new(9).uniform::<f64>([1, 4, 5, 5], 1.0);
        let (out, cache) = m.forward_cached(&x).unwrap();
        let (gx, grads) = m.backward(&cache, &out.y).unwrap();
        assert_eq!(gx.shape(), x.shape());
        let mut a = Vec::new();
        let mut b = Vec::new();
        m.visit("", &mut |n, s, _, _| a.push((n.to_string(), s.to_vec())));
        grads.visit("", &mut |n, s, _, _| b.push((n.to_string(), s.to_vec())));
        assert_eq!(a, b);
    }
}

//! Four-stage pyramid backbone built from [`LskBlock`]s.
//!
//! A 7×7 stride-4 stem maps the image to stage 1; stages 2–4 each open with
//! a 3×3 stride-2 conv. Stage outputs sit at 1/4, 1/8, 1/16 and 1/32 of the
//! input resolution.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::block::{BlockConfig, LskBlock};
use crate::layers::{join, ChannelNorm, Conv2d, Init, Parameterized, Visitor, VisitorMut};
use crate::lsk::{ConfigError, LskConfig, PoolingSet, SelectionMode};
use crate::ops::ConvSpec;
use crate::plan::DecompositionPlan;
use crate::tensor::{Real, ShapeError, Tensor4};

pub const STAGES: usize = 4;
pub const STEM_KERNEL: usize = 7;
pub const STEM_STRIDE: usize = 4;
pub const DOWN_KERNEL: usize = 3;
pub const DOWN_STRIDE: usize = 2;
/// Total spatial reduction at the last stage.
pub const OUTPUT_STRIDE: usize = 32;

pub const DEFAULT_FFN_RATIOS: [f64; STAGES] = [8.0, 8.0, 4.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Tiny,
    Small,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Tiny => "T",
            Variant::Small => "S",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "t" | "tiny" | "lsknet-t" => Ok(Variant::Tiny),
            "s" | "small" | "lsknet-s" => Ok(Variant::Small),
            other => Err(ConfigError::Parse(format!("unknown variant {other:?}; expected T or S"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stage_channels: [usize; STAGES],
    pub stage_depths: [usize; STAGES],
    pub ffn_ratios: [f64; STAGES],
    pub plan: DecompositionPlan,
    pub mode: SelectionMode,
    pub pooling: PoolingSet,
    pub selection_kernel: usize,
}

impl BackboneConfig {
    pub fn preset(variant: Variant) -> Self {
        let (stage_channels, stage_depths) = match variant {
            Variant::Tiny => ([32, 64, 160, 256], [3, 3, 5, 2]),
            Variant::Small => ([64, 128, 320, 512], [2, 2, 4, 2]),
        };
        Self {
            in_channels: 3,
            stage_channels,
            stage_depths,
            ffn_ratios: DEFAULT_FFN_RATIOS,
            plan: DecompositionPlan::default_pair(),
            mode: SelectionMode::Spatial,
            pooling: PoolingSet::BOTH,
            selection_kernel: LskConfig::DEFAULT_SELECTION_KERNEL,
        }
    }

    pub fn tiny() -> Self {
        Self::preset(Variant::Tiny)
    }

    pub fn small() -> Self {
        Self::preset(Variant::Small)
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_depths.iter().sum()
    }

    /// `stage` is 0-based.
    pub fn ffn_hidden(&self, stage: usize) -> usize {
        (self.ffn_ratios[stage] * self.stage_channels[stage] as f64).round() as usize
    }

    pub fn lsk_config(&self, stage: usize) -> LskConfig {
        LskConfig::new(self.plan.clone(), self.stage_channels[stage])
            .with_mode(self.mode)
            .with_pooling(self.pooling)
            .with_selection_kernel(self.selection_kernel)
    }

    pub fn block_config(&self, stage: usize) -> BlockConfig {
        BlockConfig {
            lsk: self.lsk_config(stage),
            ffn_hidden: self.ffn_hidden(stage),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.in_channels == 0 {
            return Err(ConfigError::Zero("input channels"));
        }
        for s in 0..STAGES {
            if self.stage_channels[s] == 0 {
                return Err(ConfigError::Zero("stage channels"));
            }
            if self.stage_depths[s] == 0 {
                return Err(ConfigError::Zero("stage depth"));
            }
            let r = self.ffn_ratios[s];
            if !(r.is_finite() && r > 0.0) || self.ffn_hidden(s) == 0 {
                return Err(ConfigError::Invalid(format!("stage {}: bad feed-forward ratio {r}", s + 1)));
            }
            self.lsk_config(s).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("input height and width must be divisible by {OUTPUT_STRIDE}, got {h}x{w}")]
    Indivisible { h: usize, w: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Strided conv followed by a norm; used for the stem and the downsamplers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNorm<T: Real> {
    pub conv: Conv2d<T>,
    pub norm: ChannelNorm<T>,
}

impl<T: Real> ConvNorm<T> {
    fn zeros(c_in: usize, c_out: usize, spec: ConvSpec) -> Self {
        Self {
            conv: Conv2d::zeros(c_in, c_out, spec),
            norm: ChannelNorm::identity(c_out),
        }
    }

    fn init(c_in: usize, c_out: usize, spec: ConvSpec, init: &mut Init) -> Self {
        Self {
            conv: Conv2d::init(c_in, c_out, spec, init),
            norm: ChannelNorm::identity(c_out),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        self.norm.forward(&self.conv.forward(x)?)
    }
}

impl<T: Real> Parameterized<T> for ConvNorm<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

pub fn stem_spec() -> ConvSpec {
    ConvSpec::strided(STEM_KERNEL, STEM_STRIDE, STEM_KERNEL / 2)
}

pub fn down_spec() -> ConvSpec {
    ConvSpec::strided(DOWN_KERNEL, DOWN_STRIDE, DOWN_KERNEL / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T: Real> {
    /// `None` for stage 1, whose input comes straight from the stem.
    pub down: Option<ConvNorm<T>>,
    pub blocks: Vec<LskBlock<T>>,
}

/// Masks captured from one block.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry<T: Real = f32> {
    /// 1-based.
    pub stage: usize,
    /// 1-based position inside the stage.
    pub depth: usize,
    /// `(n, N, h, w)` sigmoid masks, branch order following the plan.
    pub masks: Tensor4<T>,
}

impl<T: Real> MaskEntry<T> {
    /// `B_<stage>_<depth>`.
    pub fn key(&self) -> String {
        format!("B_{}_{}", self.stage, self.depth)
    }

    /// File stem of mask `n` (1-based): `B_<stage>_<depth>_<n>`.
    pub fn mask_name(&self, n: usize) -> String {
        format!("B_{}_{}_{}", self.stage, self.depth, n)
    }

    pub fn branches(&self) -> usize {
        self.masks.shape().c
    }
}

/// Per-block selection masks plus the receptive field of each branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord<T: Real = f32> {
    pub rf: Vec<usize>,
    pub entries: Vec<MaskEntry<T>>,
}

impl<T: Real> ActivationRecord<T> {
    pub fn new(rf: Vec<usize>) -> Self {
        Self { rf, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, stage: usize, depth: usize) -> Option<&MaskEntry<T>> {
        self.entries.iter().find(|e| e.stage == stage && e.depth == depth)
    }
}

#[derive(Debug, Clone)]
pub struct BackboneOutput<T: Real = f32> {
    /// One feature map per stage.
    pub features: Vec<Tensor4<T>>,
    /// Empty unless the selection mode is spatial.
    pub record: ActivationRecord<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T: Real = f32> {
    config: BackboneConfig,
    pub stem: ConvNorm<T>,
    pub stages: Vec<Stage<T>>,
}

impl<T: Real> Backbone<T> {
    fn build(
        config: BackboneConfig,
        mut conv: impl FnMut(usize, usize, ConvSpec) -> ConvNorm<T>,
        mut block: impl FnMut(&BlockConfig) -> Result<LskBlock<T>, ConfigError>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let stem = conv(config.in_channels, config.stage_channels[0], stem_spec());
        let mut stages = Vec::with_capacity(STAGES);
        for s in 0..STAGES {
            let down = (s > 0).then(|| conv(config.stage_channels[s - 1], config.stage_channels[s], down_spec()));
            let bc = config.block_config(s);
            let blocks = (0..config.stage_depths[s])
                .map(|_| block(&bc))
                .collect::<Result<Vec<_>, _>>()?;
            stages.push(Stage { down, blocks });
        }
        Ok(Self { config, stem, stages })
    }

    /// Zero conv weights, identity norms; the layout a weight file fills in.
    pub fn zeros(config: BackboneConfig) -> Result<Self, ConfigError> {
        Self::build(config, ConvNorm::zeros, LskBlock::zeros)
    }

    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self, ConfigError> {
        let init = std::cell::RefCell::new(Init::new(seed));
        Self::build(
            config,
            |i, o, spec| ConvNorm::init(i, o, spec, &mut init.borrow_mut()),
            |bc| LskBlock::init(bc, &mut init.borrow_mut()),
        )
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<BackboneOutput<T>, ModelError> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(ShapeError::mismatch(
                "backbone_forward",
                format!("input has {} channels, expected {}", s.c, self.config.in_channels),
            )
            .into());
        }
        if s.h % OUTPUT_STRIDE != 0 || s.w % OUTPUT_STRIDE != 0 {
            return Err(ModelError::Indivisible { h: s.h, w: s.w });
        }

        let mut record = ActivationRecord::new(self.config.plan.rf_per_stage().to_vec());
        let mut features = Vec::with_capacity(STAGES);
        let mut cur = self.stem.forward(x)?;
        for (si, stage) in self.stages.iter().enumerate() {
            if let Some(down) = &stage.down {
                cur = down.forward(&cur)?;
            }
            for (bi, block) in stage.blocks.iter().enumerate() {
                let out = block.forward(&cur)?;
                cur = out.y;
                if let Some(masks) = out.masks {
                    record.entries.push(MaskEntry {
                        stage: si + 1,
                        depth: bi + 1,
                        masks,
                    });
                }
            }
            features.push(cur.clone());
        }
        Ok(BackboneOutput { features, record })
    }
}

impl<T: Real> Parameterized<T> for Backbone<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (si, stage) in self.stages.iter().enumerate() {
            let sp = join(prefix, &format!("stage{}", si + 1));
            if let Some(down) = &stage.down {
                down.visit(&join(&sp, "down"), f);
            }
            for (bi, block) in stage.blocks.iter().enumerate() {
                block.visit(&join(&sp, &format!("block{bi}")), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            let sp = join(prefix, &format!("stage{}", si + 1));
            if let Some(down) = &mut stage.down {
                down.visit_mut(&join(&sp, "down"), f);
            }
            for (bi, block) in stage.blocks.iter_mut().enumerate() {
                block.visit_mut(&join(&sp, &format!("block{bi}")), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_shapes_and_record() {
        let net = Backbone::<f32>::init(BackboneConfig::tiny(), 0).unwrap();
        let x = Init::new(1).uniform::<f32>([1, 3, 64, 64], 1.0);
        let out = net.forward(&x).unwrap();
        let dims: Vec<[usize; 4]> = out.features.iter().map(|f| f.shape().dims()).collect();
        assert_eq!(dims, vec![[1, 32, 16, 16], [1, 64, 8, 8], [1, 160, 4, 4], [1, 256, 2, 2]]);
        assert_eq!(out.record.len(), 13);
        assert_eq!(out.record.rf, vec![5, 23]);
        assert_eq!(out.record.entries[3].key(), "B_2_1");
        assert_eq!(out.record.entries[3].masks.shape().dims(), [1, 2, 8, 8]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let net = Backbone::<f32>::zeros(BackboneConfig::tiny()).unwrap();
        let err = net.forward(&Tensor4::zeros([1, 3, 48, 64])).unwrap_err();
        assert!(matches!(err, ModelError::Indivisible { h: 48, w: 64 }));
    }

    #[test]
    fn weight_names_are_stable() {
        let net = Backbone::<f32>::zeros(BackboneConfig::small()).unwrap();
        let mut names = Vec::new();
        net.visit("", &mut |n, _, _, _| names.push(n.to_string()));
        assert_eq!(names[0], "stem.conv.weight");
        assert!(names.contains(&"stage1.block0.lsk.dw0.weight".to_string()));
        assert!(names.contains(&"stage2.down.norm.var".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("stage1.down")));
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }
}

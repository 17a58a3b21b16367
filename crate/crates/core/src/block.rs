//! One backbone block: an attention sub-block built around the LSK module,
//! followed by a convolutional feed-forward sub-block. Both are residual.
//!
//! ```text
//! y   = x + γ₁ ⊙ proj2(LSK(GELU(proj1(norm1(x)))))
//! out = y + γ₂ ⊙ fc2(GELU(dw3×3(fc1(norm2(y)))))
//! ```

use crate::layers::{join, ChannelNorm, DepthwiseConv, Init, LayerScale, Parameterized, Pointwise, Visitor, VisitorMut};
use crate::lsk::{ConfigError, LskConfig, LskModule, LskOutput};
use crate::ops::{self, BinaryOp};
use crate::tensor::{Real, ShapeError, Tensor4};

/// Initial value of both residual scales.
pub const LAYER_SCALE_INIT: f64 = 1e-2;

/// Kernel of the feed-forward depth-wise conv.
pub const FFN_KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockConfig {
    pub lsk: LskConfig,
    pub ffn_hidden: usize,
}

impl BlockConfig {
    pub fn channels(&self) -> usize {
        self.lsk.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ffn<T: Real> {
    pub fc1: Pointwise<T>,
    pub dw: DepthwiseConv<T>,
    pub fc2: Pointwise<T>,
}

impl<T: Real> Ffn<T> {
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>, ShapeError> {
        let h = self.dw.forward(&self.fc1.forward(x)?)?;
        self.fc2.forward(&ops::gelu(&h))
    }
}

impl<T: Real> Parameterized<T> for Ffn<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.dw.visit(&join(prefix, "dw"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LskBlock<T: Real> {
    pub norm1: ChannelNorm<T>,
    pub proj1: Pointwise<T>,
    pub lsk: LskModule<T>,
    pub proj2: Pointwise<T>,
    pub scale1: LayerScale<T>,
    pub norm2: ChannelNorm<T>,
    pub ffn: Ffn<T>,
    pub scale2: LayerScale<T>,
}

impl<T: Real> LskBlock<T> {
    /// Zero weights everywhere except identity norms and the layer scales.
    pub fn zeros(config: &BlockConfig) -> Result<Self, ConfigError> {
        let c = config.channels();
        Self::validate(config)?;
        Ok(Self {
            norm1: ChannelNorm::identity(c),
            proj1: Pointwise::zeros(c, c),
            lsk: LskModule::zeros(config.lsk.clone())?,
            proj2: Pointwise::zeros(c, c),
            scale1: LayerScale::new(c, LAYER_SCALE_INIT),
            norm2: ChannelNorm::identity(c),
            ffn: Ffn {
                fc1: Pointwise::zeros(c, config.ffn_hidden),
                dw: DepthwiseConv::zeros(config.ffn_hidden, FFN_KERNEL, 1),
                fc2: Pointwise::zeros(config.ffn_hidden, c),
            },
            scale2: LayerScale::new(c, LAYER_SCALE_INIT),
        })
    }

    pub fn init(config: &BlockConfig, init: &mut Init) -> Result<Self, ConfigError> {
        let c = config.channels();
        Self::validate(config)?;
        Ok(Self {
            norm1: ChannelNorm::identity(c),
            proj1: Pointwise::init(c, c, init),
            lsk: LskModule::init(config.lsk.clone(), init)?,
            proj2: Pointwise::init(c, c, init),
            scale1: LayerScale::new(c, LAYER_SCALE_INIT),
            norm2: ChannelNorm::identity(c),
            ffn: Ffn {
                fc1: Pointwise::init(c, config.ffn_hidden, init),
                dw: DepthwiseConv::init(config.ffn_hidden, FFN_KERNEL, 1, init),
                fc2: Pointwise::init(config.ffn_hidden, c, init),
            },
            scale2: LayerScale::new(c, LAYER_SCALE_INIT),
        })
    }

    fn validate(config: &BlockConfig) -> Result<(), ConfigError> {
        if config.ffn_hidden == 0 {
            return Err(ConfigError::Zero("feed-forward hidden width"));
        }
        config.lsk.validate()
    }

    pub fn channels(&self) -> usize {
        self.lsk.config().channels
    }

    /// Returns the block output and the LSK masks (spatial mode only).
    pub fn forward(&self, x: &Tensor4<T>) -> Result<LskOutput<T>, ShapeError> {
        let a = ops::gelu(&self.proj1.forward(&self.norm1.forward(x)?)?);
        let LskOutput { y: attn, masks } = self.lsk.forward(&a)?;
        let branch = self.scale1.forward(&self.proj2.forward(&attn)?)?;
        let y = ops::elementwise(x, &branch, BinaryOp::Add)?;

        let ffn = self.scale2.forward(&self.ffn.forward(&self.norm2.forward(&y)?)?)?;
        let out = ops::elementwise(&y, &ffn, BinaryOp::Add)?;
        Ok(LskOutput { y: out, masks })
    }
}

impl<T: Real> Parameterized<T> for LskBlock<T> {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.proj1.visit(&join(prefix, "proj1"), f);
        self.lsk.visit(&join(prefix, "lsk"), f);
        self.proj2.visit(&join(prefix, "proj2"), f);
        self.scale1.visit(&join(prefix, "scale1"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.scale2.visit(&join(prefix, "scale2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, T>) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.proj1.visit_mut(&join(prefix, "proj1"), f);
        self.lsk.visit_mut(&join(prefix, "lsk"), f);
        self.proj2.visit_mut(&join(prefix, "proj2"), f);
        self.scale1.visit_mut(&join(prefix, "scale1"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.scale2.visit_mut(&join(prefix, "scale2"), f);
    }
}

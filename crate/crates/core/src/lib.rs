//! Large selective kernel networks on a small dense-tensor core.
//!
//! The crate covers the numeric kernels ([`ops`]), the kernel-decomposition
//! calculus ([`plan`]), the LSK module, block and backbone ([`lsk`],
//! [`block`], [`backbone`]), closed-form cost accounting ([`cost`]), the
//! selection-behavior metrics ([`analysis`]), file formats ([`io`]), a
//! finite-difference suite ([`gradcheck`]) and a toy training loop
//! ([`train`]).

pub mod analysis;
pub mod backbone;
pub mod block;
pub mod cost;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod lsk;
pub mod ops;
pub mod plan;
pub mod tensor;
pub mod train;

pub use backbone::{ActivationRecord, Backbone, BackboneConfig, BackboneOutput, MaskEntry, ModelError, Variant};
pub use block::{BlockConfig, LskBlock};
pub use cost::{cost_backbone, cost_block, cost_lsk, cost_plan, CostReport};
pub use layers::{Init, ParamKind, Parameterized};
pub use lsk::{ConfigError, LskCache, LskConfig, LskModule, LskOutput, PoolingSet, SelectionMode};
pub use ops::{ConvSpec, PoolMode};
pub use plan::{enumerate_plans, validate_plan, DecompositionPlan, KernelSpec, PlanError};
pub use tensor::{Real, Shape4, ShapeError, Tensor4};

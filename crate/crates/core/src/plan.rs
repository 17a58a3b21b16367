//! Large-kernel decomposition into a chain of dilated depth-wise kernels.
//!
//! A chain `(k₁, d₁) → … → (kₙ, dₙ)` is valid when kernels never shrink,
//! `d₁ = 1`, and each dilation strictly grows while staying at or below the
//! receptive field reached so far (larger dilations would leave holes in the
//! composed footprint). The receptive field composes as
//! `RF₁ = k₁`, `RFᵢ = dᵢ·(kᵢ − 1) + RFᵢ₋₁`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelSpec {
    pub k: usize,
    pub d: usize,
}

impl KernelSpec {
    pub const fn new(k: usize, d: usize) -> Self {
        Self { k, d }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("a decomposition needs at least one kernel")]
    Empty,
    #[error("stage {stage}: kernel size {k} must be odd and at least 3")]
    BadKernel { stage: usize, k: usize },
    #[error("stage {stage}: kernel size {k} is smaller than the previous kernel {prev} (k must not decrease)")]
    KernelDecreasing { stage: usize, prev: usize, k: usize },
    #[error("stage 1: dilation must be 1, got {d}")]
    FirstDilation { d: usize },
    #[error("stage {stage}: dilation {d} must be greater than the previous dilation {prev}")]
    DilationNotIncreasing { stage: usize, prev: usize, d: usize },
    #[error("stage {stage}: dilation {d} exceeds the receptive field {rf} of the previous stage")]
    DilationExceedsRf { stage: usize, d: usize, rf: usize },
    #[error("cannot parse kernel sequence {0:?}: expected pairs like \"5,1;7,3\" or \"(5,1)->(7,3)\"")]
    Parse(String),
}

/// A validated kernel chain with its cumulative receptive fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecompositionPlan {
    stages: Vec<KernelSpec>,
    rf_per_stage: Vec<usize>,
}

impl DecompositionPlan {
    pub fn stages(&self) -> &[KernelSpec] {
        &self.stages
    }

    pub fn rf_per_stage(&self) -> &[usize] {
        &self.rf_per_stage
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn receptive_field(&self) -> usize {
        *self.rf_per_stage.last().expect("validated plans are non-empty")
    }

    /// The decomposition used by both published variants.
    pub fn default_pair() -> Self {
        validate_plan(&[KernelSpec::new(5, 1), KernelSpec::new(7, 3)]).expect("valid by construction")
    }
}

impl fmt::Display for DecompositionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                write!(f, "->")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for DecompositionPlan {
    type Err = PlanError;

    /// Accepts `5,1;7,3`, `(5,1)->(7,3)` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let numbers: Result<Vec<usize>, _> = s
            .split(|c: char| !c.is_ascii_digit())
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect();
        let numbers = numbers.map_err(|_| PlanError::Parse(s.to_string()))?;
        if numbers.is_empty() || numbers.len() % 2 != 0 {
            return Err(PlanError::Parse(s.to_string()));
        }
        let stages: Vec<KernelSpec> = numbers.chunks(2).map(|p| KernelSpec::new(p[0], p[1])).collect();
        validate_plan(&stages)
    }
}

/// Checks the growth constraints and fills in the receptive fields.
pub fn validate_plan(stages: &[KernelSpec]) -> Result<DecompositionPlan, PlanError> {
    let first = stages.first().ok_or(PlanError::Empty)?;
    let mut rf_per_stage = Vec::with_capacity(stages.len());
    for (i, s) in stages.iter().enumerate() {
        let stage = i + 1;
        if s.k < 3 || s.k % 2 == 0 {
            return Err(PlanError::BadKernel { stage, k: s.k });
        }
        if i == 0 {
            if s.d != 1 {
                return Err(PlanError::FirstDilation { d: s.d });
            }
            rf_per_stage.push(first.k);
            continue;
        }
        let prev = stages[i - 1];
        let prev_rf = rf_per_stage[i - 1];
        if s.k < prev.k {
            return Err(PlanError::KernelDecreasing {
                stage,
                prev: prev.k,
                k: s.k,
            });
        }
        if s.d <= prev.d {
            return Err(PlanError::DilationNotIncreasing {
                stage,
                prev: prev.d,
                d: s.d,
            });
        }
        if s.d > prev_rf {
            return Err(PlanError::DilationExceedsRf {
                stage,
                d: s.d,
                rf: prev_rf,
            });
        }
        rf_per_stage.push(s.d * (s.k - 1) + prev_rf);
    }
    Ok(DecompositionPlan {
        stages: stages.to_vec(),
        rf_per_stage,
    })
}

/// Channel width at which [`enumerate_plans`] ranks candidates.
pub const RANKING_CHANNELS: usize = 64;

/// Every valid plan reaching exactly `target_rf`, cheapest first.
///
/// Cost is the LSK module parameter count at [`RANKING_CHANNELS`] channels
/// (branch width half of that); ties fall back to the `(k, d)` sequence.
pub fn enumerate_plans(target_rf: usize, max_stages: usize, max_k: usize) -> Vec<DecompositionPlan> {
    let mut found = Vec::new();
    let mut stack = Vec::new();
    search(target_rf, max_stages, max_k, &mut stack, 0, &mut found);

    let mut ranked: Vec<(u64, DecompositionPlan)> = found
        .into_iter()
        .map(|stages| {
            let plan = validate_plan(&stages).expect("search only emits valid chains");
            let params = cost::cost_plan(&plan, RANKING_CHANNELS, RANKING_CHANNELS / 2, 1, 1).params;
            (params, plan)
        })
        .collect();
    ranked.sort_by(|(pa, a), (pb, b)| pa.cmp(pb).then_with(|| a.stages.cmp(&b.stages)));
    ranked.into_iter().map(|(_, p)| p).collect()
}

fn search(
    target: usize,
    max_stages: usize,
    max_k: usize,
    stack: &mut Vec<KernelSpec>,
    rf: usize,
    found: &mut Vec<Vec<KernelSpec>>,
) {
    if !stack.is_empty() && rf == target {
        // Any further stage adds at least d·(k−1) ≥ 2.
        found.push(stack.clone());
        return;
    }
    if stack.len() == max_stages || (!stack.is_empty() && rf >= target) {
        return;
    }
    let (k_min, d_range) = match stack.last() {
        None => (3, 1..=1),
        Some(prev) => (prev.k, prev.d + 1..=rf),
    };
    for k in (k_min..=max_k).step_by(2) {
        for d in d_range.clone() {
            let next = if stack.is_empty() { k } else { rf + d * (k - 1) };
            if next > target {
                break;
            }
            stack.push(KernelSpec::new(k, d));
            search(target, max_stages, max_k, stack, next, found);
            stack.pop();
        }
    }
}

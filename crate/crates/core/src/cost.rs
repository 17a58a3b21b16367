//! Closed-form parameter and compute accounting.
//!
//! Counting rules (also attached to every top-level report):
//!
//! * a convolution costs one multiply-accumulate (MAC) per weight per output
//!   pixel, and its bias one MAC per output element, so a conv layer's MACs
//!   are `h_out·w_out·params`;
//! * FLOPs are `2·MACs` everywhere;
//! * norms, activations, residual adds, gating products and pooling count one
//!   MAC-equivalent (2 FLOPs) per element they read;
//! * stored norm statistics are buffers, not parameters.

use std::fmt::Write as _;

use crate::backbone::{down_spec, stem_spec, BackboneConfig, STAGES, STEM_STRIDE};
use crate::block::{BlockConfig, FFN_KERNEL};
use crate::lsk::{LskConfig, SelectionMode};
use crate::ops::ConvSpec;
use crate::plan::DecompositionPlan;

pub const CONVENTIONS: &[&str] = &[
    "conv: 1 MAC per weight per output pixel; bias: 1 MAC per output element",
    "flops = 2 * macs",
    "norm, activation, residual add, gating, pooling: 1 MAC-equivalent per element read",
    "norm running statistics are buffers and are not counted as parameters",
    "stem (7x7 stride 4) and downsamplers (3x3 stride 2) are ordinary dense convs",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub breakdown: Vec<CostReport>,
    pub conventions: Vec<String>,
}

impl CostReport {
    pub fn leaf(name: impl Into<String>, params: u64, macs: u64) -> Self {
        Self {
            name: name.into(),
            params,
            macs,
            flops: 2 * macs,
            breakdown: Vec::new(),
            conventions: Vec::new(),
        }
    }

    /// Sums the children into a new node.
    pub fn group(name: impl Into<String>, breakdown: Vec<CostReport>) -> Self {
        let params = breakdown.iter().map(|c| c.params).sum();
        let macs: u64 = breakdown.iter().map(|c| c.macs).sum();
        Self {
            name: name.into(),
            params,
            macs,
            flops: 2 * macs,
            breakdown,
            conventions: Vec::new(),
        }
    }

    fn with_conventions(mut self) -> Self {
        self.conventions = CONVENTIONS.iter().map(|s| s.to_string()).collect();
        self
    }

    /// True when every node's totals equal the sum of its children.
    pub fn is_consistent(&self) -> bool {
        if self.flops != 2 * self.macs {
            return false;
        }
        if self.breakdown.is_empty() {
            return true;
        }
        let p: u64 = self.breakdown.iter().map(|c| c.params).sum();
        let m: u64 = self.breakdown.iter().map(|c| c.macs).sum();
        p == self.params && m == self.macs && self.breakdown.iter().all(CostReport::is_consistent)
    }

    /// Child by dotted path relative to this node, e.g. `stage1.block0.lsk`.
    pub fn find(&self, path: &str) -> Option<&CostReport> {
        let mut node = self;
        for part in path.split('.') {
            node = node.breakdown.iter().find(|c| c.name == part)?;
        }
        Some(node)
    }

    /// Indented table down to `max_depth` levels below this node.
    pub fn to_text(&self, max_depth: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<40} {:>14} {:>18} {:>18}", "component", "params", "macs", "flops");
        self.write_rows(&mut out, 0, max_depth);
        if !self.conventions.is_empty() {
            let _ = writeln!(out, "conventions:");
            for c in &self.conventions {
                let _ = writeln!(out, "  - {c}");
            }
        }
        out
    }

    fn write_rows(&self, out: &mut String, depth: usize, max_depth: usize) {
        let label = format!("{}{}", "  ".repeat(depth), self.name);
        let _ = writeln!(
            out,
            "{label:<40} {:>14} {:>18} {:>18}",
            self.params, self.macs, self.flops
        );
        if depth < max_depth {
            for c in &self.breakdown {
                c.write_rows(out, depth + 1, max_depth);
            }
        }
    }

    /// One `key=value` line per component, depth-first, dotted paths, then
    /// one `convention="..."` line per counting rule.
    pub fn to_kv(&self, max_depth: usize) -> String {
        let mut out = String::new();
        self.write_kv(&mut out, "", 0, max_depth);
        for c in &self.conventions {
            let _ = writeln!(out, "convention=\"{c}\"");
        }
        out
    }

    fn write_kv(&self, out: &mut String, parent: &str, depth: usize, max_depth: usize) {
        let path = if parent.is_empty() {
            self.name.clone()
        } else {
            format!("{parent}.{}", self.name)
        };
        let _ = writeln!(
            out,
            "component={path} params={} macs={} flops={}",
            self.params, self.macs, self.flops
        );
        if depth < max_depth {
            for c in &self.breakdown {
                c.write_kv(out, &path, depth + 1, max_depth);
            }
        }
    }
}

fn hw(h: usize, w: usize) -> u64 {
    (h * w) as u64
}

/// Depth-wise conv with "same" padding; dilation does not change the cost.
pub fn cost_depthwise(c: usize, spec: &ConvSpec, h: usize, w: usize, include_bias: bool) -> CostReport {
    let params = (c * spec.kernel * spec.kernel + if include_bias { c } else { 0 }) as u64;
    CostReport::leaf("depthwise", params, params * hw(h, w))
}

pub fn cost_pointwise(c_in: usize, c_out: usize, h: usize, w: usize, include_bias: bool) -> CostReport {
    let params = (c_in * c_out + if include_bias { c_out } else { 0 }) as u64;
    CostReport::leaf("pointwise", params, params * hw(h, w))
}

/// Dense conv with bias; `h_out × w_out` is its output resolution.
pub fn cost_conv2d(c_in: usize, c_out: usize, kernel: usize, h_out: usize, w_out: usize) -> CostReport {
    let params = (c_in * c_out * kernel * kernel + c_out) as u64;
    CostReport::leaf("conv", params, params * hw(h_out, w_out))
}

/// Parameter-free op touching `elements` values.
pub fn cost_elementwise(name: &str, elements: usize) -> CostReport {
    CostReport::leaf(name, 0, elements as u64)
}

fn named(mut r: CostReport, name: impl Into<String>) -> CostReport {
    r.name = name.into();
    r
}

/// Cost of an LSK module on an `h × w` map. With `branch_channels = 0` the
/// mixers, selection and fusion contribute nothing.
pub fn cost_lsk(config: &LskConfig, h: usize, w: usize) -> CostReport {
    let c = config.channels;
    let cm = config.branch_channels;
    let n = config.branches();
    let px = h * w;
    let mut parts = Vec::new();
    for (i, s) in config.plan.stages().iter().enumerate() {
        parts.push(named(cost_depthwise(c, &ConvSpec::same(s.k, s.d), h, w, true), format!("dw{i}")));
    }
    if cm > 0 {
        for i in 0..n {
            parts.push(named(cost_pointwise(c, cm, h, w, true), format!("mix{i}")));
        }
        let branch_elems = cm * px;
        let select = match config.mode {
            SelectionMode::Spatial => {
                let q = config.selection_kernel;
                let pools = config.pooling.len();
                CostReport::group(
                    "select",
                    vec![
                        cost_elementwise("pool", pools * n * branch_elems),
                        named(cost_conv2d(pools, n, q, h, w), "conv"),
                        cost_elementwise("sigmoid", n * px),
                        cost_elementwise("gate", n * branch_elems),
                        cost_elementwise("sum", (n - 1) * branch_elems),
                    ],
                )
            }
            SelectionMode::Channel => {
                let hid = config.channel_hidden;
                CostReport::group(
                    "select",
                    vec![
                        cost_elementwise("branch_sum", (n - 1) * branch_elems),
                        cost_elementwise("pool", branch_elems),
                        named(cost_pointwise(cm, hid, 1, 1, true), "reduce"),
                        cost_elementwise("gelu", hid),
                        named(cost_pointwise(hid, n * cm, 1, 1, true), "expand"),
                        cost_elementwise("softmax", n * cm),
                        cost_elementwise("gate", n * branch_elems),
                        cost_elementwise("sum", (n - 1) * branch_elems),
                    ],
                )
            }
            SelectionMode::None => CostReport::group("select", vec![cost_elementwise("sum", (n - 1) * branch_elems)]),
        };
        parts.push(select);
        parts.push(named(cost_pointwise(cm, c, h, w, true), "fuse"));
    }
    parts.push(cost_elementwise("gate", 2 * c * px));
    CostReport::group("lsk", parts)
}

/// LSK module cost under the default selection settings, branches of width
/// `c_mid`.
pub fn cost_plan(plan: &DecompositionPlan, c: usize, c_mid: usize, h: usize, w: usize) -> CostReport {
    let mut config = LskConfig::new(plan.clone(), c);
    config.branch_channels = c_mid;
    cost_lsk(&config, h, w).with_conventions()
}

fn cost_norm(c: usize, h: usize, w: usize) -> CostReport {
    CostReport::leaf("norm", 2 * c as u64, (c * h * w) as u64)
}

pub fn cost_block(config: &BlockConfig, h: usize, w: usize) -> CostReport {
    let c = config.channels();
    let hid = config.ffn_hidden;
    let elems = c * h * w;
    let parts = vec![
        named(cost_norm(c, h, w), "norm1"),
        named(cost_pointwise(c, c, h, w, true), "proj1"),
        cost_elementwise("gelu1", elems),
        cost_lsk(&config.lsk, h, w),
        named(cost_pointwise(c, c, h, w, true), "proj2"),
        CostReport::leaf("scale1", c as u64, elems as u64),
        cost_elementwise("residual1", 2 * elems),
        named(cost_norm(c, h, w), "norm2"),
        CostReport::group(
            "ffn",
            vec![
                named(cost_pointwise(c, hid, h, w, true), "fc1"),
                named(cost_depthwise(hid, &ConvSpec::same(FFN_KERNEL, 1), h, w, true), "dw"),
                cost_elementwise("gelu", hid * h * w),
                named(cost_pointwise(hid, c, h, w, true), "fc2"),
            ],
        ),
        CostReport::leaf("scale2", c as u64, elems as u64),
        cost_elementwise("residual2", 2 * elems),
    ];
    CostReport::group("block", parts)
}

/// Whole backbone at an `h × w` input. Spatial sizes follow the conv output
/// arithmetic, so inputs not divisible by 32 are still counted.
pub fn cost_backbone(config: &BackboneConfig, h: usize, w: usize) -> CostReport {
    let stem = stem_spec();
    let (mut sh, mut sw) = (
        stem.output_len(h).unwrap_or(h / STEM_STRIDE),
        stem.output_len(w).unwrap_or(w / STEM_STRIDE),
    );
    let c0 = config.stage_channels[0];
    let mut parts = vec![CostReport::group(
        "stem",
        vec![
            cost_conv2d(config.in_channels, c0, stem.kernel, sh, sw),
            cost_norm(c0, sh, sw),
        ],
    )];
    for s in 0..STAGES {
        let c = config.stage_channels[s];
        let mut stage = Vec::new();
        if s > 0 {
            let down = down_spec();
            sh = down.output_len(sh).unwrap_or(1);
            sw = down.output_len(sw).unwrap_or(1);
            stage.push(CostReport::group(
                "down",
                vec![
                    cost_conv2d(config.stage_channels[s - 1], c, down.kernel, sh, sw),
                    cost_norm(c, sh, sw),
                ],
            ));
        }
        let bc = config.block_config(s);
        for b in 0..config.stage_depths[s] {
            stage.push(named(cost_block(&bc, sh, sw), format!("block{b}")));
        }
        parts.push(CostReport::group(format!("stage{}", s + 1), stage));
    }
    CostReport::group("backbone", parts).with_conventions()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{validate_plan, KernelSpec};

    fn plan(pairs: &[(usize, usize)]) -> DecompositionPlan {
        validate_plan(&pairs.iter().map(|&(k, d)| KernelSpec::new(k, d)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn depthwise_closed_forms() {
        assert_eq!(cost_depthwise(64, &ConvSpec::same(23, 1), 1, 1, false).params, 33_856);
        let two = cost_depthwise(64, &ConvSpec::same(5, 1), 1, 1, false).params
            + cost_depthwise(64, &ConvSpec::same(7, 3), 1, 1, false).params;
        assert_eq!(two, 4_736);
        assert_eq!(cost_depthwise(1, &ConvSpec::same(1, 1), 1, 1, false).params, 1);
        assert_eq!(cost_depthwise(1, &ConvSpec::same(1, 1), 1, 1, true).params, 2);
        let r = cost_depthwise(8, &ConvSpec::same(3, 2), 5, 7, true);
        assert_eq!(r.flops, 2 * 35 * r.params);
    }

    #[test]
    fn module_counts_at_64_channels() {
        assert_eq!(cost_plan(&plan(&[(5, 1), (7, 3)]), 64, 32, 1, 1).params, 11_334);
        assert_eq!(cost_plan(&plan(&[(23, 1)]), 64, 32, 1, 1).params, 38_211);
        assert_eq!(cost_plan(&plan(&[(3, 1), (5, 2), (7, 3)]), 64, 32, 1, 1).params, 14_153);
        assert_eq!(cost_plan(&plan(&[(29, 1)]), 64, 32, 1, 1).params, 58_179);
    }

    #[test]
    fn zero_branch_width_drops_selection_and_fusion() {
        let r = cost_plan(&plan(&[(5, 1), (7, 3)]), 64, 0, 4, 4);
        assert!(r.find("select").is_none() && r.find("fuse").is_none() && r.find("mix0").is_none());
        assert_eq!(r.params, 64 * 25 + 64 + 64 * 49 + 64);
    }

    #[test]
    fn reports_are_consistent() {
        for cfg in [BackboneConfig::tiny(), BackboneConfig::small()] {
            let r = cost_backbone(&cfg, 1024, 1024);
            assert!(r.is_consistent());
            assert_eq!(r.flops, 2 * r.macs);
        }
    }

    #[test]
    fn doubling_resolution_quadruples_compute() {
        let a = cost_backbone(&BackboneConfig::tiny(), 1024, 1024);
        let b = cost_backbone(&BackboneConfig::tiny(), 2048, 2048);
        assert_eq!(a.params, b.params);
        assert_eq!(b.flops, 4 * a.flops);
    }

    #[test]
    fn kv_lines_are_paths() {
        let r = cost_backbone(&BackboneConfig::tiny(), 64, 64);
        let kv = r.to_kv(2);
        assert!(kv.starts_with("component=backbone params="));
        assert!(kv.contains("component=backbone.stage1.block0 "));
        assert!(kv.contains("convention=\"flops = 2 * macs\""));
    }
}

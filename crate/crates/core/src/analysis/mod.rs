//! Selection-behavior metrics over captured masks and box annotations.
//!
//! * `R_c`: for every image showing only category `c`, the selective area
//!   `A = Σ_blocks Σ_n RF_n · Σ_pixels mask_n` (masks at their block's native
//!   resolution) is divided by the summed box area `B`; `R_c` is the mean of
//!   `A/B` over those images.
//! * `ΔA_c`: per block, the mean of `mask_larger − mask_smaller` over pixels,
//!   averaged over the category's images. Only two-branch plans qualify.
//!
//! Both are min-max normalized for plotting; a set whose values are all
//! equal (including a single value) normalizes to 1.0.

mod annotations;
mod dataset;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use annotations::{parse_annotations, polygon_area, read_annotations, Annotations, OrientedBox, Point};
pub use dataset::{load_dataset, load_mask_dir, write_mask_dir, Dataset, MASK_MANIFEST};
pub use report::{read_diff_csv, read_rc_csv, write_diff_csv, write_rc_csv, DIFF_HEADER, RC_HEADER};

use crate::backbone::ActivationRecord;
use crate::io::IoError;
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("selection difference needs exactly 2 branches, the record has {0}")]
    UnsupportedPlan(usize),
    #[error("no image contains only category {0:?}")]
    NoEligibleImages(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Inconsistent(String),
}

/// Masks and annotations of one image.
#[derive(Debug, Clone)]
pub struct ImageSample<T: Real = f32> {
    pub name: String,
    pub record: ActivationRecord<T>,
    pub annotations: Annotations,
}

impl<T: Real> ImageSample<T> {
    fn is_only(&self, category: &str) -> bool {
        self.annotations.sole_category() == Some(category)
    }

    fn box_area(&self) -> f64 {
        self.annotations.boxes.iter().map(OrientedBox::area).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    pub category: String,
    pub r_c_raw: f64,
    pub r_c_normalized: f64,
    pub image_count: usize,
    /// Eligible images dropped because their box area was zero.
    pub skipped_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSelectionDiff {
    pub category: String,
    pub stage: usize,
    pub depth: usize,
    /// Mean of `larger − smaller`.
    pub delta_raw: f64,
    /// Mean of `|larger − smaller|`.
    pub delta_abs: f64,
    pub delta_normalized: f64,
}

impl BlockSelectionDiff {
    pub fn block_key(&self) -> String {
        format!("B_{}_{}", self.stage, self.depth)
    }
}

/// Min-max scaling to `[0, 1]`; equal values map to 1.0.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 1.0 })
        .collect()
}

/// `Σ_blocks Σ_n RF_n · Σ_pixels mask_n`.
pub fn selective_area<T: Real>(record: &ActivationRecord<T>) -> Result<f64, AnalysisError> {
    let mut total = 0.0;
    for entry in &record.entries {
        let s = entry.masks.shape();
        if s.c != record.rf.len() {
            return Err(AnalysisError::Inconsistent(format!(
                "{} has {} masks but the record lists {} receptive fields",
                entry.key(),
                s.c,
                record.rf.len()
            )));
        }
        for (k, &rf) in record.rf.iter().enumerate() {
            let mut sum = 0.0;
            for n in 0..s.n {
                sum += entry.masks.plane(n, k).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            total += rf as f64 * sum;
        }
    }
    Ok(total)
}

/// `R_c` for one category. The normalized value is 1.0 (a set of one).
pub fn compute_rc<T: Real>(samples: &[ImageSample<T>], category: &str) -> Result<CategoryStats, AnalysisError> {
    let mut ratios = 0.0;
    let mut count = 0;
    let mut skipped = 0;
    for s in samples.iter().filter(|s| s.is_only(category)) {
        let b = s.box_area();
        if b <= 0.0 {
            skipped += 1;
            continue;
        }
        ratios += selective_area(&s.record)? / b;
        count += 1;
    }
    if count == 0 {
        return Err(AnalysisError::NoEligibleImages(category.to_string()));
    }
    Ok(CategoryStats {
        category: category.to_string(),
        r_c_raw: ratios / count as f64,
        r_c_normalized: 1.0,
        image_count: count,
        skipped_images: skipped,
    })
}

/// Per-block `ΔA_c`, normalized across the blocks of this category.
pub fn compute_selection_diff<T: Real>(
    samples: &[ImageSample<T>],
    category: &str,
) -> Result<Vec<BlockSelectionDiff>, AnalysisError> {
    let eligible: Vec<&ImageSample<T>> = samples.iter().filter(|s| s.is_only(category)).collect();
    if eligible.is_empty() {
        return Err(AnalysisError::NoEligibleImages(category.to_string()));
    }
    let mut sums: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
    let first_blocks: BTreeSet<(usize, usize)> =
        eligible[0].record.entries.iter().map(|e| (e.stage, e.depth)).collect();
    for s in &eligible {
        let rec = &s.record;
        if rec.rf.len() != 2 {
            return Err(AnalysisError::UnsupportedPlan(rec.rf.len()));
        }
        if rec.rf[0] >= rec.rf[1] {
            return Err(AnalysisError::Inconsistent(format!(
                "{}: masks must be ordered smaller then larger receptive field, got {:?}",
                s.name, rec.rf
            )));
        }
        let blocks: BTreeSet<(usize, usize)> = rec.entries.iter().map(|e| (e.stage, e.depth)).collect();
        if blocks != first_blocks {
            return Err(AnalysisError::Inconsistent(format!(
                "{} has a different set of blocks than {}",
                s.name, eligible[0].name
            )));
        }
        for e in &rec.entries {
            let shape = e.masks.shape();
            if shape.c != 2 {
                return Err(AnalysisError::UnsupportedPlan(shape.c));
            }
            let mut signed = 0.0;
            let mut abs = 0.0;
            for n in 0..shape.n {
                for (small, large) in e.masks.plane(n, 0).iter().zip(e.masks.plane(n, 1)) {
                    let d = large.as_f64() - small.as_f64();
                    signed += d;
                    abs += d.abs();
                }
            }
            let px = (shape.n * shape.plane()) as f64;
            let slot = sums.entry((e.stage, e.depth)).or_insert((0.0, 0.0, 0));
            slot.0 += signed / px;
            slot.1 += abs / px;
            slot.2 += 1;
        }
    }
    let mut diffs: Vec<BlockSelectionDiff> = sums
        .into_iter()
        .map(|((stage, depth), (signed, abs, n))| BlockSelectionDiff {
            category: category.to_string(),
            stage,
            depth,
            delta_raw: signed / n as f64,
            delta_abs: abs / n as f64,
            delta_normalized: 0.0,
        })
        .collect();
    let raw: Vec<f64> = diffs.iter().map(|d| d.delta_raw).collect();
    for (d, v) in diffs.iter_mut().zip(normalize_min_max(&raw)) {
        d.delta_normalized = v;
    }
    Ok(diffs)
}

/// Mean `delta_raw` over a category's blocks, for ranking categories.
pub fn mean_delta(diffs: &[BlockSelectionDiff]) -> f64 {
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.iter().map(|d| d.delta_raw).sum::<f64>() / diffs.len() as f64
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisReport {
    /// Sorted by category, `R_c` normalized across categories.
    pub stats: Vec<CategoryStats>,
    /// Sorted by category then block.
    pub diffs: Vec<BlockSelectionDiff>,
    /// Human-readable notes about excluded categories and skipped images.
    pub notices: Vec<String>,
}

/// Both metrics for every category that has at least one single-category
/// image. Plans without exactly two branches yield no differences and a
/// notice instead of an error.
pub fn analyze<T: Real>(samples: &[ImageSample<T>]) -> Result<AnalysisReport, AnalysisError> {
    let mut report = AnalysisReport::default();
    let categories: BTreeSet<&str> = samples.iter().filter_map(|s| s.annotations.sole_category()).collect();
    let mixed = samples
        .iter()
        .filter(|s| s.annotations.sole_category().is_none())
        .count();
    if mixed > 0 {
        report
            .notices
            .push(format!("{mixed} image(s) without exactly one category were left out"));
    }
    for category in categories {
        match compute_rc(samples, category) {
            Ok(stats) => {
                if stats.skipped_images > 0 {
                    report.notices.push(format!(
                        "{category}: skipped {} image(s) with zero box area",
                        stats.skipped_images
                    ));
                }
                report.stats.push(stats);
            }
            Err(AnalysisError::NoEligibleImages(c)) => {
                report.notices.push(format!("{c}: excluded, no image with positive box area"));
                continue;
            }
            Err(e) => return Err(e),
        }
        match compute_selection_diff(samples, category) {
            Ok(d) => report.diffs.extend(d),
            Err(AnalysisError::UnsupportedPlan(n)) => {
                report
                    .notices
                    .push(format!("{category}: selection difference skipped, plan has {n} branches"));
            }
            Err(e) => return Err(e),
        }
    }
    let raw: Vec<f64> = report.stats.iter().map(|s| s.r_c_raw).collect();
    for (s, v) in report.stats.iter_mut().zip(normalize_min_max(&raw)) {
        s.r_c_normalized = v;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::MaskEntry;
    use crate::tensor::Tensor4;

    fn sample(cat: &str, area_side: f64, rf: Vec<usize>, masks: Vec<Tensor4<f64>>) -> ImageSample<f64> {
        let s = area_side;
        let text = format!("0 0 {s} 0 {s} {s} 0 {s} {cat} 0");
        ImageSample {
            name: cat.to_string(),
            record: ActivationRecord {
                rf,
                entries: masks
                    .into_iter()
                    .enumerate()
                    .map(|(i, m)| MaskEntry {
                        stage: 1,
                        depth: i + 1,
                        masks: m,
                    })
                    .collect(),
            },
            annotations: parse_annotations(&text),
        }
    }

    #[test]
    fn single_block_hand_value() {
        // RF 23 · 16 ones = 368, box area 46
        let mut s = sample("x", 1.0, vec![23], vec![Tensor4::full([1, 1, 4, 4], 1.0)]);
        s.annotations = parse_annotations("0 0 23 0 23 2 0 2 x 0");
        let stats = compute_rc(&[s], "x").unwrap();
        assert_eq!(stats.r_c_raw, 8.0);
        assert_eq!(stats.r_c_normalized, 1.0);
    }

    #[test]
    fn zero_masks_give_zero() {
        let s = sample("x", 3.0, vec![5, 23], vec![Tensor4::zeros([1, 2, 4, 4])]);
        assert_eq!(compute_rc(&[s], "x").unwrap().r_c_raw, 0.0);
    }

    #[test]
    fn mixed_images_are_ineligible() {
        let mut s = sample("x", 3.0, vec![5, 23], vec![Tensor4::zeros([1, 2, 4, 4])]);
        s.annotations = parse_annotations("0 0 1 0 1 1 0 1 x 0\n0 0 1 0 1 1 0 1 y 0");
        assert!(matches!(compute_rc(&[s], "x"), Err(AnalysisError::NoEligibleImages(_))));
    }

    #[test]
    fn selection_diff_bounds() {
        let same = sample("x", 1.0, vec![5, 23], vec![Tensor4::full([1, 2, 3, 3], 0.3)]);
        let d = compute_selection_diff(&[same], "x").unwrap();
        assert_eq!(d[0].delta_raw, 0.0);

        let m = Tensor4::from_fn([1, 2, 3, 3], |_, c, _, _| c as f64);
        let extreme = sample("x", 1.0, vec![5, 23], vec![m]);
        let d = compute_selection_diff(&[extreme], "x").unwrap();
        assert_eq!(d[0].delta_raw, 1.0);
        assert_eq!(d[0].delta_abs, 1.0);

        let three = sample("x", 1.0, vec![3, 11, 29], vec![Tensor4::zeros([1, 3, 2, 2])]);
        assert!(matches!(compute_selection_diff(&[three], "x"), Err(AnalysisError::UnsupportedPlan(3))));
    }

    #[test]
    fn normalization_edges() {
        assert_eq!(normalize_min_max(&[2.0]), vec![1.0]);
        assert_eq!(normalize_min_max(&[2.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(normalize_min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert!(normalize_min_max(&[]).is_empty());
    }
}

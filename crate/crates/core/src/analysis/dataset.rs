//! Mask directories and their pairing with annotation files.
//!
//! A mask directory holds one LSKT file per mask, `B_<stage>_<depth>_<n>.lskt`
//! with shape `(n, 1, h, w)`, and a `manifest.txt` listing
//! `<mask-name> <receptive field>` per line. A dataset root holds one mask
//! directory per image; the annotation for image `foo` is `foo.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_annotations, AnalysisError, ImageSample};
use crate::backbone::{ActivationRecord, MaskEntry};
use crate::io::{read_tensor_file, write_tensor_file, IoError};
use crate::ops::{concat_channels, split_channels};
use crate::tensor::Tensor4;

pub const MASK_MANIFEST: &str = "manifest.txt";

/// Writes every mask of `record` plus the manifest. Returns the file names
/// written, manifest last.
pub fn write_mask_dir(dir: &Path, record: &ActivationRecord<f32>) -> Result<Vec<String>, AnalysisError> {
    fs::create_dir_all(dir).map_err(IoError::from)?;
    let mut manifest = String::new();
    let mut written = Vec::new();
    for entry in &record.entries {
        let n = entry.branches();
        let parts = split_channels(&entry.masks, &vec![1; n])
            .map_err(|e| AnalysisError::Inconsistent(e.to_string()))?;
        for (i, part) in parts.iter().enumerate() {
            let name = entry.mask_name(i + 1);
            let rf = record.rf.get(i).copied().unwrap_or(0);
            let file = format!("{name}.lskt");
            write_tensor_file(dir.join(&file), part)?;
            let _ = writeln!(manifest, "{name} {rf}");
            written.push(file);
        }
    }
    fs::write(dir.join(MASK_MANIFEST), manifest).map_err(IoError::from)?;
    written.push(MASK_MANIFEST.to_string());
    Ok(written)
}

fn parse_mask_name(name: &str) -> Option<(usize, usize, usize)> {
    let rest = name.strip_prefix("B_")?;
    let mut it = rest.split('_').map(str::parse::<usize>);
    let (s, d, n) = (it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
    if it.next().is_some() || s == 0 || d == 0 || n == 0 {
        return None;
    }
    Some((s, d, n))
}

pub fn load_mask_dir(dir: &Path) -> Result<ActivationRecord<f32>, AnalysisError> {
    let manifest_path = dir.join(MASK_MANIFEST);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| AnalysisError::Missing(format!("{}: {e}", manifest_path.display())))?;
    let bad = |line: usize, msg: &str| AnalysisError::Inconsistent(format!("{}:{line}: {msg}", manifest_path.display()));

    let mut blocks: BTreeMap<(usize, usize), BTreeMap<usize, Tensor4<f32>>> = BTreeMap::new();
    let mut rf: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [name, rf_text] = fields[..] else {
            return Err(bad(i + 1, "expected `<mask-name> <receptive field>`"));
        };
        let (s, d, n) = parse_mask_name(name).ok_or_else(|| bad(i + 1, "mask name must look like B_<stage>_<depth>_<n>"))?;
        let r: usize = rf_text.parse().map_err(|_| bad(i + 1, "bad receptive field"))?;
        if *rf.entry(n).or_insert(r) != r {
            return Err(bad(i + 1, "receptive field differs from an earlier block"));
        }
        let t = read_tensor_file(dir.join(format!("{name}.lskt")))?;
        if t.shape().c != 1 {
            return Err(bad(i + 1, "mask files must have one channel"));
        }
        if blocks.entry((s, d)).or_default().insert(n, t).is_some() {
            return Err(bad(i + 1, "duplicate mask"));
        }
    }

    let count = rf.len();
    if rf.keys().copied().ne(1..=count) {
        return Err(bad(0, "mask indices must run 1..N"));
    }
    let mut record = ActivationRecord::new(rf.into_values().collect());
    for ((stage, depth), masks) in blocks {
        if masks.len() != count {
            return Err(AnalysisError::Inconsistent(format!(
                "{}: B_{stage}_{depth} has {} masks, expected {count}",
                dir.display(),
                masks.len()
            )));
        }
        let refs: Vec<&Tensor4<f32>> = masks.values().collect();
        let masks = concat_channels(&refs).map_err(|e| AnalysisError::Inconsistent(e.to_string()))?;
        record.entries.push(MaskEntry { stage, depth, masks });
    }
    Ok(record)
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Sorted by image name.
    pub samples: Vec<ImageSample<f32>>,
    /// Annotation files with no mask directory.
    pub unmatched_annotations: Vec<String>,
    pub malformed_lines: usize,
    pub degenerate_boxes: usize,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AnalysisError::Missing(format!("{}: {e}", dir.display())))? {
        paths.push(entry.map_err(IoError::from)?.path());
    }
    paths.sort();
    Ok(paths)
}

/// Pairs each sub-directory of `masks_root` with `<name>.txt` in
/// `annotations_dir`; a mask directory without annotations is an error.
pub fn load_dataset(masks_root: &Path, annotations_dir: &Path) -> Result<Dataset, AnalysisError> {
    let mut data = Dataset::default();
    let mut names = Vec::new();
    for path in sorted_entries(masks_root)? {
        if !path.is_dir() {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let ann_path = annotations_dir.join(format!("{name}.txt"));
        let mut file = fs::File::open(&ann_path)
            .map_err(|e| AnalysisError::Missing(format!("annotations for {name} ({}): {e}", ann_path.display())))?;
        let annotations = read_annotations(&mut file).map_err(IoError::from)?;
        data.malformed_lines += annotations.malformed;
        data.degenerate_boxes += annotations.degenerate;
        let record = load_mask_dir(&path)?;
        names.push(name.clone());
        data.samples.push(ImageSample {
            name,
            record,
            annotations,
        });
    }
    for path in sorted_entries(annotations_dir)? {
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default();
        if !names.iter().any(|n| n == stem) {
            data.unmatched_annotations.push(stem.to_string());
        }
    }
    Ok(data)
}

//! CSV output for plotting. Floats are written in shortest round-trip form.

use std::io::{Read, Write};

use super::{AnalysisError, BlockSelectionDiff, CategoryStats};

pub const RC_HEADER: [&str; 4] = ["category", "r_c_raw", "r_c_norm", "images"];
pub const DIFF_HEADER: [&str; 5] = ["category", "block", "delta_raw", "delta_norm", "delta_abs"];

/// Rows sorted by category.
pub fn write_rc_csv(w: impl Write, stats: &[CategoryStats]) -> Result<(), AnalysisError> {
    let mut rows: Vec<&CategoryStats> = stats.iter().collect();
    rows.sort_by(|a, b| a.category.cmp(&b.category));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RC_HEADER)?;
    for s in rows {
        out.write_record([
            s.category.clone(),
            s.r_c_raw.to_string(),
            s.r_c_normalized.to_string(),
            s.image_count.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Rows sorted by category, then stage and depth.
pub fn write_diff_csv(w: impl Write, diffs: &[BlockSelectionDiff]) -> Result<(), AnalysisError> {
    let mut rows: Vec<&BlockSelectionDiff> = diffs.iter().collect();
    rows.sort_by(|a, b| (&a.category, a.stage, a.depth).cmp(&(&b.category, b.stage, b.depth)));
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DIFF_HEADER)?;
    for d in rows {
        out.write_record([
            d.category.clone(),
            d.block_key(),
            d.delta_raw.to_string(),
            d.delta_normalized.to_string(),
            d.delta_abs.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, what: &str) -> Result<T, AnalysisError> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| AnalysisError::Inconsistent(format!("row {:?}: bad {what}", rec.position().map(|p| p.line()))))
}

fn check_header(r: &mut csv::Reader<impl Read>, want: &[&str]) -> Result<(), AnalysisError> {
    let got = r.headers()?;
    if got.iter().collect::<Vec<_>>() != want {
        return Err(AnalysisError::Inconsistent(format!("unexpected header {got:?}")));
    }
    Ok(())
}

pub fn read_rc_csv(r: impl Read) -> Result<Vec<CategoryStats>, AnalysisError> {
    let mut reader = csv::Reader::from_reader(r);
    check_header(&mut reader, &RC_HEADER)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        out.push(CategoryStats {
            category: field(&rec, 0, "category")?,
            r_c_raw: field(&rec, 1, "r_c_raw")?,
            r_c_normalized: field(&rec, 2, "r_c_norm")?,
            image_count: field(&rec, 3, "images")?,
            skipped_images: 0,
        });
    }
    Ok(out)
}

pub fn read_diff_csv(r: impl Read) -> Result<Vec<BlockSelectionDiff>, AnalysisError> {
    let mut reader = csv::Reader::from_reader(r);
    check_header(&mut reader, &DIFF_HEADER)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let block: String = field(&rec, 1, "block")?;
        let parts: Vec<&str> = block.split('_').collect();
        let (stage, depth) = match parts.as_slice() {
            ["B", s, d] => (
                s.parse().map_err(|_| AnalysisError::Inconsistent(format!("bad block {block:?}")))?,
                d.parse().map_err(|_| AnalysisError::Inconsistent(format!("bad block {block:?}")))?,
            ),
            _ => return Err(AnalysisError::Inconsistent(format!("bad block {block:?}"))),
        };
        out.push(BlockSelectionDiff {
            category: field(&rec, 0, "category")?,
            stage,
            depth,
            delta_raw: field(&rec, 2, "delta_raw")?,
            delta_normalized: field(&rec, 3, "delta_norm")?,
            delta_abs: field(&rec, 4, "delta_abs")?,
        });
    }
    Ok(out)
}

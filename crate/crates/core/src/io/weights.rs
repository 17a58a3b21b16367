//! `LSKW0001`, a `u32` manifest length, the UTF-8 manifest, then the `f32`
//! payload. The manifest starts with `lskw <version>` and has one
//! `name<TAB>byte offset<TAB>comma-separated dims` line per tensor; offsets
//! are relative to the start of the payload.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::{check_magic, checked_size, decode_f32, encode_f32, read_array, read_bytes, IoError};
use crate::backbone::{Backbone, BackboneConfig};
use crate::layers::Parameterized;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"LSKW0001";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Tensors in file order.
pub type WeightMap = IndexMap<String, NamedTensor>;

struct ManifestEntry {
    name: String,
    offset: u64,
    dims: Vec<u64>,
    bytes: u64,
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, IoError> {
    let err = |line: usize, msg: String| IoError::Manifest { line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == format!("lskw {MANIFEST_VERSION}") => {}
        Some((_, header)) => return Err(err(1, format!("unsupported header {header:?}"))),
        None => return Err(err(1, "empty manifest".into())),
    }
    let mut entries = Vec::new();
    let mut names = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let name = fields[0].to_string();
        if name.is_empty() {
            return Err(err(line_no, "empty tensor name".into()));
        }
        if !names.insert(name.clone()) {
            return Err(err(line_no, format!("duplicate tensor {name:?}")));
        }
        let offset: u64 = fields[1]
            .parse()
            .map_err(|_| err(line_no, format!("bad offset {:?}", fields[1])))?;
        if offset % 4 != 0 {
            return Err(err(line_no, format!("offset {offset} is not 4-byte aligned")));
        }
        let dims = fields[2]
            .split(',')
            .map(|d| d.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| err(line_no, format!("bad dims {:?}", fields[2])))?;
        let (_, bytes) = checked_size(&dims)?;
        entries.push(ManifestEntry {
            name,
            offset,
            dims,
            bytes,
        });
    }

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(entries.len());
    for e in &entries {
        let end = e.offset.checked_add(e.bytes).ok_or_else(|| IoError::DimOverflow { dims: e.dims.clone() })?;
        spans.push((e.offset, end, &e.name));
    }
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(err(0, format!("tensors {:?} and {:?} overlap", pair[0].2, pair[1].2)));
        }
    }
    Ok(entries)
}

pub fn read_weights(r: &mut impl Read) -> Result<WeightMap, IoError> {
    check_magic(r, WEIGHTS_MAGIC)?;
    let len = u32::from_le_bytes(read_array::<4>(r, "manifest length")?);
    let raw = read_bytes(r, len as u64, "manifest")?;
    let text = String::from_utf8(raw).map_err(|_| IoError::Manifest {
        line: 0,
        msg: "manifest is not valid UTF-8".into(),
    })?;
    let entries = parse_manifest(&text)?;
    let payload_len = entries.iter().map(|e| e.offset + e.bytes).max().unwrap_or(0);
    let payload = read_bytes(r, payload_len, "weight payload")?;

    let mut map = WeightMap::with_capacity(entries.len());
    for e in entries {
        let start = e.offset as usize;
        let data = decode_f32(&payload[start..start + e.bytes as usize]);
        let dims = e.dims.iter().map(|&d| d as usize).collect();
        map.insert(e.name, NamedTensor { dims, data });
    }
    Ok(map)
}

pub fn write_weights(w: &mut impl Write, weights: &WeightMap) -> Result<(), IoError> {
    let mut manifest = format!("lskw {MANIFEST_VERSION}\n");
    let mut payload = Vec::new();
    for (name, t) in weights {
        if name.contains(['\t', '\n']) {
            return Err(IoError::Manifest {
                line: 0,
                msg: format!("tensor name {name:?} contains a tab or newline"),
            });
        }
        let numel: usize = t.dims.iter().product();
        if numel != t.data.len() || t.dims.is_empty() {
            return Err(IoError::ShapeMismatch {
                name: name.clone(),
                expected: vec![t.data.len()],
                found: t.dims.clone(),
            });
        }
        let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name}\t{}\t{}\n", payload.len(), dims.join(",")));
        encode_f32(&t.data, &mut payload);
    }
    let len = u32::try_from(manifest.len()).map_err(|_| IoError::Manifest {
        line: 0,
        msg: "manifest longer than 4 GiB".into(),
    })?;
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_weights_file(path: impl AsRef<Path>) -> Result<WeightMap, IoError> {
    read_weights(&mut BufReader::new(File::open(path)?))
}

pub fn write_weights_file(path: impl AsRef<Path>, weights: &WeightMap) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, weights)?;
    w.flush()?;
    Ok(())
}

/// Every named tensor of `model`, buffers included.
pub fn collect_weights<P: Parameterized<f32>>(model: &P) -> WeightMap {
    let mut map = WeightMap::new();
    model.visit("", &mut |name, dims, data, _| {
        map.insert(
            name.to_string(),
            NamedTensor {
                dims: dims.to_vec(),
                data: data.to_vec(),
            },
        );
    });
    map
}

/// Copies `weights` into `model`, requiring exactly the model's names and
/// shapes.
pub fn load_weights_into<P: Parameterized<f32>>(model: &mut P, weights: &WeightMap) -> Result<(), IoError> {
    let mut result = Ok(());
    let mut seen = HashSet::new();
    model.visit_mut("", &mut |name, dims, data, _| {
        if result.is_err() {
            return;
        }
        seen.insert(name.to_string());
        match weights.get(name) {
            None => result = Err(IoError::MissingTensor(name.to_string())),
            Some(t) if t.dims != dims => {
                result = Err(IoError::ShapeMismatch {
                    name: name.to_string(),
                    expected: dims.to_vec(),
                    found: t.dims.clone(),
                })
            }
            Some(t) => data.copy_from_slice(&t.data),
        }
    });
    result?;
    if let Some(extra) = weights.keys().find(|k| !seen.contains(*k)) {
        return Err(IoError::UnexpectedTensor(extra.clone()));
    }
    Ok(())
}

/// Reads a weight file and checks it against `config` before building the
/// backbone.
pub fn read_backbone_file(path: impl AsRef<Path>, config: BackboneConfig) -> Result<Backbone<f32>, IoError> {
    let weights = read_weights_file(path)?;
    let mut net = Backbone::zeros(config).map_err(|e| IoError::Manifest {
        line: 0,
        msg: format!("invalid backbone config: {e}"),
    })?;
    load_weights_into(&mut net, &weights)?;
    Ok(net)
}

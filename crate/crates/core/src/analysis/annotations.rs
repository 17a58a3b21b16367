//! DOTA-style oriented box annotations.
//!
//! One object per line: `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.
//! Lines whose first token is not a number (`imagesource:…`, `gsd:…`) are
//! metadata and skipped silently. A missing difficulty reads as 0.

use std::io::Read;

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    pub vertices: [Point; 4],
    pub category: String,
    pub difficulty: u8,
}

impl OrientedBox {
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotations {
    pub boxes: Vec<OrientedBox>,
    /// Object lines with the wrong number of fields or unparsable numbers.
    pub malformed: usize,
    /// Well-formed lines whose polygon has zero area.
    pub degenerate: usize,
}

impl Annotations {
    pub fn warnings(&self) -> usize {
        self.malformed + self.degenerate
    }

    /// The single category shared by every box, if there is exactly one.
    pub fn sole_category(&self) -> Option<&str> {
        let first = self.boxes.first()?.category.as_str();
        self.boxes.iter().all(|b| b.category == first).then_some(first)
    }
}

/// Absolute shoelace area.
pub fn polygon_area(vertices: &[Point; 4]) -> f64 {
    let mut twice = 0.0;
    for i in 0..4 {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % 4];
        twice += x0 * y1 - x1 * y0;
    }
    (twice / 2.0).abs()
}

pub fn parse_annotations(text: &str) -> Annotations {
    let mut out = Annotations::default();
    for line in text.lines() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some(first) = tokens.first() else { continue };
        if first.parse::<f64>().is_err() {
            continue;
        }
        match parse_object(&tokens) {
            Some(b) if b.area() > 0.0 => out.boxes.push(b),
            Some(_) => out.degenerate += 1,
            None => out.malformed += 1,
        }
    }
    out
}

pub fn read_annotations(r: &mut impl Read) -> std::io::Result<Annotations> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    Ok(parse_annotations(&text))
}

fn parse_object(tokens: &[&str]) -> Option<OrientedBox> {
    if tokens.len() != 9 && tokens.len() != 10 {
        return None;
    }
    let mut coords = [0.0; 8];
    for (c, t) in coords.iter_mut().zip(tokens) {
        *c = t.parse().ok().filter(|v: &f64| v.is_finite())?;
    }
    let category = tokens[8];
    if category.parse::<f64>().is_ok() {
        return None;
    }
    let difficulty = match tokens.get(9) {
        None => 0,
        Some(t) => match t.parse::<u8>().ok()? {
            d @ (0 | 1) => d,
            _ => return None,
        },
    };
    Some(OrientedBox {
        vertices: [
            (coords[0], coords[1]),
            (coords[2], coords[3]),
            (coords[4], coords[5]),
            (coords[6], coords[7]),
        ],
        category: category.to_string(),
        difficulty,
    })
}

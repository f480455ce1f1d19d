//! Comma-separated text formats for labels and detections.
//!
//! * ground truth: `class_name,xmin,ymin,xmax,ymax` (global pixels)
//! * tile detections: `cutout_name,class_name,xmin,ymin,xmax,ymax,confidence` (tile pixels)
//! * global detections: `parent_name,class_name,xmin,ymin,xmax,ymax,confidence`
//!
//! Blank lines and lines starting with `#` are ignored on input.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{BoundingBox, ClassTable, Detection, Frame, GroundTruthLabel};
use crate::tiler::parse_cutout_name;

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t.split(',').map(str::trim).collect()))
        }
    })
}

fn parse_f64(s: &str, what: &str, source: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(source, line, format!("bad {what} {s:?}")))
}

fn parse_box(fields: &[&str], source: &str, line: usize) -> Result<BoundingBox> {
    let v: Vec<f64> = ["xmin", "ymin", "xmax", "ymax"]
        .iter()
        .zip(fields)
        .map(|(what, s)| parse_f64(s, what, source, line))
        .collect::<Result<_>>()?;
    BoundingBox::new(v[0], v[1], v[2], v[3])
        .map_err(|_| Error::parse(source, line, "box corners out of order"))
}

fn class_name(classes: &ClassTable, id: usize) -> &str {
    classes.name_of(id).unwrap_or("?")
}

fn lookup_class(classes: &ClassTable, name: &str, source: &str, line: usize) -> Result<usize> {
    classes
        .id_of(name)
        .map_err(|_| Error::parse(source, line, format!("unknown class {name:?}")))
}

pub fn format_ground_truth(labels: &[GroundTruthLabel], classes: &ClassTable) -> String {
    let mut out = String::new();
    for l in labels {
        let b = &l.bbox;
        let _ = writeln!(out, "{},{},{},{},{}", class_name(classes, l.class_id), b.xmin, b.ymin, b.xmax, b.ymax);
    }
    out
}

pub fn parse_ground_truth(text: &str, source: &str, classes: &ClassTable) -> Result<Vec<GroundTruthLabel>> {
    records(text)
        .map(|(line, f)| {
            if f.len() != 5 {
                return Err(Error::parse(source, line, format!("expected 5 fields, found {}", f.len())));
            }
            Ok(GroundTruthLabel {
                class_id: lookup_class(classes, f[0], source, line)?,
                bbox: parse_box(&f[1..5], source, line)?,
            })
        })
        .collect()
}

fn write_detection(out: &mut String, key: &str, d: &Detection, classes: &ClassTable) {
    let b = &d.bbox;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{}",
        key,
        class_name(classes, d.class_id),
        b.xmin,
        b.ymin,
        b.xmax,
        b.ymax,
        d.confidence
    );
}

pub fn format_global_detections(parent: &str, dets: &[Detection], classes: &ClassTable) -> String {
    let mut out = String::new();
    for d in dets {
        write_detection(&mut out, parent, d, classes);
    }
    out
}

/// Parses a global detection file into `(parent_name, detection)` pairs.
pub fn parse_global_detections(
    text: &str,
    source: &str,
    classes: &ClassTable,
) -> Result<Vec<(String, Detection)>> {
    records(text)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(Error::parse(source, line, format!("expected 7 fields, found {}", f.len())));
            }
            let class_id = lookup_class(classes, f[1], source, line)?;
            let bbox = parse_box(&f[2..6], source, line)?;
            let conf = parse_f64(f[6], "confidence", source, line)?;
            Ok((f[0].to_string(), Detection::new(class_id, bbox, conf, Frame::Global)))
        })
        .collect()
}

pub fn format_tile_detections<'a>(
    per_tile: impl IntoIterator<Item = (&'a str, &'a [Detection])>,
    classes: &ClassTable,
) -> String {
    let mut out = String::new();
    for (name, dets) in per_tile {
        for d in dets {
            write_detection(&mut out, name, d, classes);
        }
    }
    out
}

/// Parses a tile-local detection file into `(cutout_name, detection)` pairs.
/// Confidences outside `[0, 1]` are clamped with a warning.
pub fn parse_tile_detections(
    text: &str,
    source: &str,
    classes: &ClassTable,
) -> Result<Vec<(String, Detection)>> {
    records(text)
        .map(|(line, f)| {
            if f.len() != 7 {
                return Err(Error::parse(source, line, format!("expected 7 fields, found {}", f.len())));
            }
            let name = parse_cutout_name(f[0])
                .map_err(|e| Error::parse(source, line, e.to_string()))?;
            let class_id = lookup_class(classes, f[1], source, line)?;
            let bbox = parse_box(&f[2..6], source, line)?;
            let conf = parse_f64(f[6], "confidence", source, line)?;
            let frame = Frame::TileLocal(crate::model::TileId { row: name.row, col: name.col });
            Ok((f[0].to_string(), Detection::new(class_id, bbox, conf, frame)))
        })
        .collect()
}

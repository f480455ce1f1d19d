//! Geometry and domain types shared across the pipeline.
//!
//! Coordinates are real-valued pixels with the origin at the top-left corner
//! and y increasing downward. A box spans the half-open intervals
//! `[xmin, xmax) x [ymin, ymax)`, so a box of integer corners covers exactly
//! `(xmax - xmin) * (ymax - ymin)` raster cells.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel grid plus ground sample distance.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    name: String,
    width: usize,
    height: usize,
    bands: usize,
    pixels: Vec<u8>,
    gsd: f64,
}

impl RasterImage {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        pixels: Vec<u8>,
        gsd: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("zero extent {width}x{height}")));
        }
        if bands != 1 && bands != 3 {
            return Err(Error::InvalidRaster(format!("{bands} bands (expected 1 or 3)")));
        }
        if !(gsd.is_finite() && gsd > 0.0) {
            return Err(Error::InvalidRaster(format!("gsd {gsd} must be positive")));
        }
        if pixels.len() != width * height * bands {
            return Err(Error::InvalidRaster(format!(
                "buffer holds {} bytes, expected {}",
                pixels.len(),
                width * height * bands
            )));
        }
        Ok(Self { name: name.into(), width, height, bands, pixels, gsd })
    }

    /// Constant-valued image.
    pub fn filled(
        name: impl Into<String>,
        width: usize,
        height: usize,
        bands: usize,
        value: u8,
        gsd: f64,
    ) -> Result<Self> {
        Self::new(name, width, height, bands, vec![value; width * height * bands], gsd)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn gsd(&self) -> f64 {
        self.gsd
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }
    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Ground area covered by the image in square kilometres.
    pub fn area_km2(&self) -> f64 {
        let w = self.width as f64 * self.gsd;
        let h = self.height as f64 * self.gsd;
        w * h / 1.0e6
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, band: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.bands + band]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, band: usize, value: u8) {
        self.pixels[(y * self.width + x) * self.bands + band] = value;
    }

    /// Copies the rectangle `[col, col+w) x [row, row+h)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Vec<u8> {
        debug_assert!(row + h <= self.height && col + w <= self.width);
        let stride = self.width * self.bands;
        let mut out = Vec::with_capacity(w * h * self.bands);
        for y in row..row + h {
            let start = y * stride + col * self.bands;
            out.extend_from_slice(&self.pixels[start..start + w * self.bands]);
        }
        out
    }
}

/// Axis-aligned box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let ok = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite())
            && xmin <= xmax
            && ymin <= ymax;
        if !ok {
            return Err(Error::InvalidBox { xmin, ymin, xmax, ymax });
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    /// Box spanning two arbitrary corners.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { xmin: x0.min(x1), ymin: y0.min(y1), xmax: x0.max(x1), ymax: y0.max(y1) }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self { xmin: self.xmin + dx, ymin: self.ymin + dy, xmax: self.xmax + dx, ymax: self.ymax + dy }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self { xmin: self.xmin * sx, ymin: self.ymin * sy, xmax: self.xmax * sx, ymax: self.ymax * sy }
    }

    /// Overlap with `other`, or `None` when the interiors are disjoint.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let xmin = self.xmin.max(other.xmin);
        let ymin = self.ymin.max(other.ymin);
        let xmax = self.xmax.min(other.xmax);
        let ymax = self.ymax.min(other.ymax);
        if xmax > xmin && ymax > ymin {
            Some(BoundingBox { xmin, ymin, xmax, ymax })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Total order on coordinates, used for deterministic tie-breaking.
    pub fn lex_cmp(&self, other: &BoundingBox) -> Ordering {
        self.xmin
            .total_cmp(&other.xmin)
            .then(self.ymin.total_cmp(&other.ymin))
            .then(self.xmax.total_cmp(&other.xmax))
            .then(self.ymax.total_cmp(&other.ymax))
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Clips every coordinate into `[0, width] x [0, height]`.
pub fn clamp_box(b: &BoundingBox, width: f64, height: f64) -> BoundingBox {
    BoundingBox {
        xmin: b.xmin.clamp(0.0, width),
        ymin: b.ymin.clamp(0.0, height),
        xmax: b.xmax.clamp(0.0, width),
        ymax: b.ymax.clamp(0.0, height),
    }
}

/// Ground area of a pixel box in square metres.
pub fn box_area_m2(b: &BoundingBox, gsd: f64) -> f64 {
    b.area() * gsd * gsd
}

/// Position of one cutout within its parent, as used in detection frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    TileLocal(TileId),
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub frame: Frame,
}

impl Detection {
    /// Builds a detection, clamping the confidence into `[0, 1]`.
    pub fn new(class_id: usize, bbox: BoundingBox, confidence: f64, frame: Frame) -> Self {
        Self { class_id, bbox, confidence: clamp_confidence(confidence), frame }
    }

    pub fn global(class_id: usize, bbox: BoundingBox, confidence: f64) -> Self {
        Self::new(class_id, bbox, confidence, Frame::Global)
    }

    pub fn is_global(&self) -> bool {
        self.frame == Frame::Global
    }

    /// Canonical ordering: class, descending confidence, then box coordinates.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        self.class_id
            .cmp(&other.class_id)
            .then(other.confidence.total_cmp(&self.confidence))
            .then(self.bbox.lex_cmp(&other.bbox))
    }
}

pub(crate) fn clamp_confidence(c: f64) -> f64 {
    if c.is_nan() {
        log::warn!("NaN confidence replaced by 0");
        0.0
    } else if !(0.0..=1.0).contains(&c) {
        log::warn!("confidence {c} outside [0, 1], clamped");
        c.clamp(0.0, 1.0)
    } else {
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub class_id: usize,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub small_object: bool,
}

/// Ordered class list; a class id is its index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassTable {
    classes: Vec<ClassInfo>,
    by_name: HashMap<String, usize>,
}

impl ClassTable {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(classes.len());
        for (id, c) in classes.iter().enumerate() {
            if c.name.is_empty() || c.name.contains([',', '\n', '\r', '\t']) {
                return Err(Error::InvalidClassTable(format!("bad class name {:?}", c.name)));
            }
            if by_name.insert(c.name.clone(), id).is_some() {
                return Err(Error::InvalidClassTable(format!("duplicate class {:?}", c.name)));
            }
        }
        Ok(Self { classes, by_name })
    }

    /// Airplane, boat, car (small object) and airport.
    pub fn default_overhead() -> Self {
        let mk = |name: &str, small_object| ClassInfo { name: name.to_string(), small_object };
        Self::new(vec![mk("airplane", false), mk("boat", false), mk("car", true), mk("airport", false)])
            .expect("static table is valid")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Result<usize> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(|c| c.name.as_str())
    }

    pub fn is_small(&self, id: usize) -> bool {
        self.classes.get(id).is_some_and(|c| c.small_object)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassInfo)> {
        self.classes.iter().enumerate()
    }
}

/// Clips a global label into a window and keeps it only when more than half
/// of its area falls inside. Returns the clipped box and the visible fraction.
pub fn truncate_to_window(b: &BoundingBox, window: &BoundingBox) -> Option<(BoundingBox, f64)> {
    let area = b.area();
    if area <= 0.0 {
        return None;
    }
    let clipped = b.intersection(window)?;
    let frac = (clipped.area() / area).min(1.0);
    (frac > 0.5).then_some((clipped, frac))
}

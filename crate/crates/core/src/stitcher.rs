//! Tile-to-global coordinate mapping and class-wise non-maximal suppression.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{clamp_box, iou, BoundingBox, Detection, Frame, TileId};
use crate::par;
use crate::tiler::TilePlacement;

pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Origin of a global detection.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Provenance {
    pub profile: Option<String>,
    pub tile: TileId,
}

/// Merged detections for one parent image.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GlobalDetectionSet {
    pub parent_name: String,
    pub detections: Vec<Detection>,
    /// Parallel to `detections`.
    pub provenance: Vec<Provenance>,
}

impl GlobalDetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Detection, &Provenance)> {
        self.detections.iter().zip(&self.provenance)
    }
}

/// Translates tile-local detections into the parent frame and clamps them
/// to the parent bounds.
pub fn globalize(dets: &[Detection], tile: &TilePlacement) -> Result<Vec<Detection>> {
    let id = tile.id();
    let inv = 1.0 / tile.pixel_scale;
    dets.iter()
        .map(|d| match d.frame {
            Frame::TileLocal(t) if t == id => {
                let b = d.bbox.scale(inv, inv).translate(tile.col as f64, tile.row as f64);
                let b = clamp_box(&b, tile.parent_width as f64, tile.parent_height as f64);
                Ok(Detection { bbox: b, frame: Frame::Global, ..d.clone() })
            }
            Frame::TileLocal(t) => Err(Error::FrameMismatch(format!(
                "detection from tile {t:?} passed with tile {id:?}"
            ))),
            Frame::Global => Err(Error::FrameMismatch("detection is already global".into())),
        })
        .collect()
}

fn check_nms_iou(nms_iou: f64) -> Result<()> {
    if nms_iou > 0.0 && nms_iou <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("nms iou {nms_iou} outside (0, 1]")))
    }
}

/// Uniform bucket grid over the kept boxes of one class. Only boxes with a
/// positive intersection can exceed a positive IoU threshold, so a candidate
/// is compared against boxes sharing a bucket. Boxes spanning many buckets
/// go to a side list that every query scans.
struct BucketGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    wide: Vec<usize>,
    all: Vec<usize>,
    stamp: Vec<usize>,
    epoch: usize,
}

impl BucketGrid {
    const MAX_SPAN: f64 = 16.0;

    fn new(cell: f64, n: usize) -> Self {
        Self { cell, buckets: HashMap::new(), wide: Vec::new(), all: Vec::new(), stamp: vec![0; n], epoch: 0 }
    }

    fn is_wide(&self, b: &BoundingBox) -> bool {
        b.width().max(b.height()) > Self::MAX_SPAN * self.cell
    }

    fn cells(&self, b: &BoundingBox) -> Vec<(i64, i64)> {
        let c = self.cell;
        let (x0, x1) = ((b.xmin / c).floor() as i64, (b.xmax / c).floor() as i64);
        let (y0, y1) = ((b.ymin / c).floor() as i64, (b.ymax / c).floor() as i64);
        (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| (x, y))).collect()
    }

    fn insert(&mut self, idx: usize, b: &BoundingBox) {
        self.all.push(idx);
        if self.is_wide(b) {
            self.wide.push(idx);
            return;
        }
        for key in self.cells(b) {
            self.buckets.entry(key).or_default().push(idx);
        }
    }

    fn any_overlap(&mut self, dets: &[Detection], b: &BoundingBox, nms_iou: f64) -> bool {
        let hit = |k: usize| iou(&dets[k].bbox, b) > nms_iou;
        if self.is_wide(b) {
            return self.all.iter().any(|&k| hit(k));
        }
        if self.wide.iter().any(|&k| hit(k)) {
            return true;
        }
        self.epoch += 1;
        for key in self.cells(b) {
            let Some(bucket) = self.buckets.get(&key) else { continue };
            for &k in bucket {
                if self.stamp[k] != self.epoch {
                    self.stamp[k] = self.epoch;
                    if hit(k) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Greedy class-wise suppression over `dets`, visiting candidates in `order`
/// (grouped by class). Returns the kept indices in visiting order.
fn suppress(dets: &[Detection], order: &[usize], nms_iou: f64) -> Vec<usize> {
    let mut sides: Vec<f64> = dets.iter().map(|d| d.bbox.width().max(d.bbox.height())).collect();
    sides.sort_by(f64::total_cmp);
    let cell = sides.get(sides.len() / 2).copied().unwrap_or(1.0).max(1.0) * 2.0;

    let mut kept = Vec::new();
    let mut grid = BucketGrid::new(cell, dets.len());
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && dets[order[pos - 1]].class_id != dets[i].class_id {
            grid = BucketGrid::new(cell, dets.len());
        }
        let b = dets[i].bbox;
        if !grid.any_overlap(dets, &b, nms_iou) {
            kept.push(i);
            grid.insert(i, &b);
        }
    }
    kept
}

fn canonical_order(dets: &[Detection], tiebreak: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].canonical_cmp(&dets[b]).then_with(|| tiebreak(a, b)));
    order
}

/// Class-wise NMS: per class, keep the most confident box and drop any box
/// whose IoU with a kept box exceeds `nms_iou`. Output is sorted by class,
/// descending confidence, then box coordinates.
pub fn global_nms(dets: &[Detection], nms_iou: f64) -> Result<Vec<Detection>> {
    check_nms_iou(nms_iou)?;
    if let Some(d) = dets.iter().find(|d| !d.is_global()) {
        return Err(Error::FrameMismatch(format!("NMS input in frame {:?}", d.frame)));
    }
    let order = canonical_order(dets, |_, _| Ordering::Equal);
    Ok(suppress(dets, &order, nms_iou).into_iter().map(|i| dets[i].clone()).collect())
}

/// NMS over a set with provenance, keeping the two vectors aligned.
pub fn nms_with_provenance(
    dets: Vec<Detection>,
    provenance: Vec<Provenance>,
    nms_iou: f64,
) -> Result<(Vec<Detection>, Vec<Provenance>)> {
    check_nms_iou(nms_iou)?;
    debug_assert_eq!(dets.len(), provenance.len());
    if let Some(d) = dets.iter().find(|d| !d.is_global()) {
        return Err(Error::FrameMismatch(format!("NMS input in frame {:?}", d.frame)));
    }
    let order = canonical_order(&dets, |a, b| provenance[a].cmp(&provenance[b]));
    let kept = suppress(&dets, &order, nms_iou);
    Ok(kept.into_iter().map(|i| (dets[i].clone(), provenance[i].clone())).unzip())
}

/// Globalizes every tile's detections and merges them with class-wise NMS.
/// The result does not depend on the order of `per_tile`.
pub fn stitch(per_tile: &[(TilePlacement, Vec<Detection>)], nms_iou: f64) -> Result<GlobalDetectionSet> {
    let Some((first, _)) = per_tile.first() else {
        return Ok(GlobalDetectionSet::default());
    };
    let parent = &first.parent_name;
    if let Some((other, _)) = per_tile.iter().find(|(t, _)| &t.parent_name != parent) {
        return Err(Error::MixedParents(parent.clone(), other.parent_name.clone()));
    }
    let globalized = par::map_ordered(per_tile, |(tile, dets)| globalize(dets, tile));
    let mut dets = Vec::new();
    let mut provenance = Vec::new();
    for ((tile, _), g) in per_tile.iter().zip(globalized) {
        let g = g?;
        provenance.extend(std::iter::repeat_n(Provenance { profile: None, tile: tile.id() }, g.len()));
        dets.extend(g);
    }
    let (detections, provenance) = nms_with_provenance(dets, provenance, nms_iou)?;
    Ok(GlobalDetectionSet { parent_name: parent.clone(), detections, provenance })
}

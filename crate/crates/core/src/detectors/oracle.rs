use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{hash_str, mix_seed, Detector};
use crate::error::{Error, Result};
use crate::model::{clamp_box, BoundingBox, Detection, Frame, GroundTruthLabel};
use crate::tiler::TileRecord;

/// Uniform confidence ranges for true and false positives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceLaw {
    pub tp: (f64, f64),
    pub fp: (f64, f64),
}

impl Default for ConfidenceLaw {
    fn default() -> Self {
        Self { tp: (0.7, 1.0), fp: (0.05, 0.7) }
    }
}

/// Noise injected by the ground-truth oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoiseModel {
    /// Probability that an object is missed.
    pub dropout_prob: f64,
    /// Expected number of false positives per tile.
    pub fp_rate: f64,
    /// Maximum uniform perturbation of each box edge, in native pixels.
    pub jitter_px: f64,
    pub confidence: ConfidenceLaw,
    pub seed: u64,
}

impl Default for OracleNoiseModel {
    fn default() -> Self {
        Self { dropout_prob: 0.0, fp_rate: 0.0, jitter_px: 0.0, confidence: ConfidenceLaw::default(), seed: 0 }
    }
}

impl OracleNoiseModel {
    /// Reports every visible object at confidence 1.
    pub fn noiseless() -> Self {
        Self { confidence: ConfidenceLaw { tp: (1.0, 1.0), fp: (0.05, 0.7) }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidConfig(format!("dropout_prob {} outside [0, 1]", self.dropout_prob)));
        }
        if !(self.fp_rate.is_finite() && self.fp_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("fp_rate {} must be >= 0", self.fp_rate)));
        }
        if !(self.jitter_px.is_finite() && self.jitter_px >= 0.0) {
            return Err(Error::InvalidConfig(format!("jitter_px {} must be >= 0", self.jitter_px)));
        }
        if !range_ok(self.confidence.tp) || !range_ok(self.confidence.fp) {
            return Err(Error::InvalidConfig("confidence ranges must lie in [0, 1] with lo <= hi".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}

/// Per-object draws, shared by every tile that sees the object so that
/// duplicates across overlapping tiles agree.
struct ObjectDraw {
    dropped: bool,
    confidence: f64,
    jittered: BoundingBox,
}

fn object_draw(noise: &OracleNoiseModel, index: usize, label: &GroundTruthLabel) -> ObjectDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[noise.seed, 0x0b1ec7, index as u64]));
    let dropped = rng.random::<f64>() < noise.dropout_prob;
    let confidence = uniform(&mut rng, noise.confidence.tp);
    let j = noise.jitter_px;
    let mut d = [0.0; 4];
    for v in &mut d {
        *v = uniform(&mut rng, (-j, j));
    }
    let b = &label.bbox;
    let jittered = BoundingBox::from_corners(b.xmin + d[0], b.ymin + d[1], b.xmax + d[2], b.ymax + d[3]);
    ObjectDraw { dropped, confidence, jittered }
}

fn tile_rng(noise: &OracleNoiseModel, tile: &TileRecord) -> ChaCha8Rng {
    let p = &tile.placement;
    ChaCha8Rng::seed_from_u64(mix_seed(&[
        noise.seed,
        hash_str(&p.parent_name),
        p.row as u64,
        p.col as u64,
        p.pixel_scale.to_bits(),
        p.native_scale.0.to_bits(),
        p.native_scale.1.to_bits(),
    ]))
}

fn oracle_detect_filtered(
    tile: &TileRecord,
    gt: &[GroundTruthLabel],
    noise: &OracleNoiseModel,
    classes: Option<&[usize]>,
) -> Vec<Detection> {
    let p = &tile.placement;
    let frame = Frame::TileLocal(p.id());
    let (dw, dh) = p.detector_dims();
    let window = BoundingBox { xmin: 0.0, ymin: 0.0, xmax: dw as f64, ymax: dh as f64 };
    // Jitter can move a box by at most jitter_px, so widen the prefilter.
    let reach = p.native_rect();
    let j = noise.jitter_px;
    let reach = BoundingBox { xmin: reach.xmin - j, ymin: reach.ymin - j, xmax: reach.xmax + j, ymax: reach.ymax + j };

    let mut out = Vec::new();
    for (index, label) in gt.iter().enumerate() {
        if classes.is_some_and(|c| !c.contains(&label.class_id)) || label.bbox.intersection_area(&reach) <= 0.0 {
            continue;
        }
        let draw = object_draw(noise, index, label);
        if draw.dropped {
            continue;
        }
        let local = p.native_to_detector(&draw.jittered);
        if let Some((clipped, frac)) = crate::model::truncate_to_window(&local, &window) {
            out.push(Detection::new(label.class_id, clipped, draw.confidence * frac, frame));
        }
    }

    if noise.fp_rate > 0.0 {
        let mut fp_classes: Vec<usize> = match classes {
            Some(c) => c.to_vec(),
            None => gt.iter().map(|g| g.class_id).collect(),
        };
        fp_classes.sort_unstable();
        fp_classes.dedup();
        if fp_classes.is_empty() {
            return out;
        }
        let mut rng = tile_rng(noise, tile);
        let n = Poisson::new(noise.fp_rate).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
        let sx = p.pixel_scale / p.native_scale.0;
        let sy = p.pixel_scale / p.native_scale.1;
        for _ in 0..n {
            let class_id = fp_classes[rng.random_range(0..fp_classes.len())];
            let (bw, bh) = if gt.is_empty() {
                (10.0, 10.0)
            } else {
                let g = &gt[rng.random_range(0..gt.len())].bbox;
                (g.width() * sx, g.height() * sy)
            };
            let bw = bw.clamp(1.0, dw as f64);
            let bh = bh.clamp(1.0, dh as f64);
            let x = uniform(&mut rng, (0.0, dw as f64 - bw));
            let y = uniform(&mut rng, (0.0, dh as f64 - bh));
            let conf = uniform(&mut rng, noise.confidence.fp);
            let b = clamp_box(&BoundingBox { xmin: x, ymin: y, xmax: x + bw, ymax: y + bh }, dw as f64, dh as f64);
            out.push(Detection::new(class_id, b, conf, frame));
        }
    }
    out
}

/// Ground-truth oracle: reports the labels visible in `tile`, perturbed by `noise`.
///
/// An object is visible when more than half of its area falls inside the
/// tile; its box is clipped to the tile and its confidence scaled by the
/// visible fraction, so the complete copy from a neighbouring tile wins NMS.
pub fn oracle_detect(tile: &TileRecord, gt: &[GroundTruthLabel], noise: &OracleNoiseModel) -> Vec<Detection> {
    oracle_detect_filtered(tile, gt, noise, None)
}

/// Oracle bound to one scene's ground truth (native global pixels).
#[derive(Clone, Debug)]
pub struct OracleDetector {
    gt: Arc<[GroundTruthLabel]>,
    noise: OracleNoiseModel,
    classes: Option<Vec<usize>>,
}

impl OracleDetector {
    pub fn new(gt: Arc<[GroundTruthLabel]>, noise: OracleNoiseModel) -> Result<Self> {
        noise.validate()?;
        Ok(Self { gt, noise, classes: None })
    }

    /// Restricts reported classes, false positives included.
    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.classes = Some(classes);
        self
    }
}

impl Detector for OracleDetector {
    fn id(&self) -> &str {
        "oracle"
    }

    fn detect(&self, tile: &TileRecord) -> Result<Vec<Detection>> {
        Ok(oracle_detect_filtered(tile, &self.gt, &self.noise, self.classes.as_deref()))
    }
}

//! Scoring: IoU matching, thresholded precision/recall sweep, AP, mAP, F1
//! and area throughput.
//!
//! At each confidence threshold, detections below it are discarded, class-wise
//! NMS is applied to the survivors, and true/false positives and false
//! negatives are summed over all images before precision and recall are
//! computed. AP integrates the monotone precision envelope over recall.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{iou, ClassTable, Detection, GroundTruthLabel};
use crate::par;
use crate::stitcher::{global_nms, DEFAULT_NMS_IOU};

pub const DEFAULT_IOU: f64 = 0.5;
pub const SMALL_OBJECT_IOU: f64 = 0.25;
pub const DEFAULT_THRESHOLD_COUNT: usize = 30;
pub const THRESHOLD_MIN: f64 = 0.05;
pub const THRESHOLD_MAX: f64 = 0.95;

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_default: f64,
    /// Used for classes flagged as small objects.
    pub iou_small_object: f64,
    pub thresholds: Vec<f64>,
    pub nms_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_default: DEFAULT_IOU,
            iou_small_object: SMALL_OBJECT_IOU,
            thresholds: linspace(THRESHOLD_MIN, THRESHOLD_MAX, DEFAULT_THRESHOLD_COUNT),
            nms_iou: DEFAULT_NMS_IOU,
        }
    }
}

impl EvalConfig {
    pub fn iou_for(&self, classes: &ClassTable, class_id: usize) -> f64 {
        if classes.is_small(class_id) {
            self.iou_small_object
        } else {
            self.iou_default
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.iou_default) || !unit(self.iou_small_object) || !unit(self.nms_iou) {
            return Err(Error::InvalidConfig("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.thresholds.is_empty() || self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("confidence thresholds must be non-empty and strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PRPoint {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self { threshold, tp, fp, fn_, precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_) }
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.tp, self.fp, self.fn_)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection index, ground-truth index)` for every true positive.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy matching for a single class: detections in descending confidence
/// each claim the unmatched ground truth with the highest IoU, if that IoU
/// reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthLabel], iou_thresh: f64) -> Result<MatchResult> {
    let mut class = None;
    for c in dets.iter().map(|d| d.class_id).chain(gts.iter().map(|g| g.class_id)) {
        match class {
            None => class = Some(c),
            Some(k) if k != c => return Err(Error::MixedClasses(k, c)),
            _ => {}
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[a].canonical_cmp(&dets[b]));

    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(&dets[di].bbox, &g.bbox);
            let better = match best {
                None => true,
                Some((bi, bv)) => v > bv || (v == bv && g.bbox.lex_cmp(&gts[bi].bbox).is_lt()),
            };
            if better {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= iou_thresh && v > 0.0 => {
                taken[gi] = true;
                result.tp += 1;
                result.pairs.push((di, gi));
            }
            _ => result.fp += 1,
        }
    }
    result.fn_ = gts.len() - result.tp;
    Ok(result)
}

/// One image's detections and labels.
pub type ScoredImage<'a> = (&'a [Detection], &'a [GroundTruthLabel]);

/// Precision/recall at every configured threshold, counts summed over images.
pub fn pr_curve_summed(
    images: &[ScoredImage<'_>],
    class_id: usize,
    iou_thresh: f64,
    cfg: &EvalConfig,
) -> Result<Vec<PRPoint>> {
    let per_image: Vec<(Vec<Detection>, Vec<GroundTruthLabel>)> = images
        .iter()
        .map(|(d, g)| {
            (
                d.iter().filter(|x| x.class_id == class_id).cloned().collect(),
                g.iter().filter(|x| x.class_id == class_id).copied().collect(),
            )
        })
        .collect();
    cfg.thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (dets, gts) in &per_image {
                let kept: Vec<Detection> = dets.iter().filter(|d| d.confidence >= t).cloned().collect();
                let kept = global_nms(&kept, cfg.nms_iou)?;
                let m = match_detections(&kept, gts, iou_thresh)?;
                tp += m.tp;
                fp += m.fp;
                fn_ += m.fn_;
            }
            Ok(PRPoint::from_counts(t, tp, fp, fn_))
        })
        .collect()
}

pub fn pr_curve(
    dets: &[Detection],
    gts: &[GroundTruthLabel],
    class_id: usize,
    iou_thresh: f64,
    cfg: &EvalConfig,
) -> Result<Vec<PRPoint>> {
    pr_curve_summed(&[(dets, gts)], class_id, iou_thresh, cfg)
}

/// Area under the monotone precision envelope, anchored at recall 0.
pub fn average_precision(curve: &[PRPoint]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut envelope = vec![0.0; pts.len()];
    let mut running: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        running = running.max(pts[i].1);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        ap += (r - prev_recall) * envelope[i];
        prev_recall = r;
    }
    Ok(ap.clamp(0.0, 1.0))
}

pub fn mean_ap(per_class: &BTreeMap<usize, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::NoClasses);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = PRPoint::from_counts(0.0, tp, fp, fn_);
    let s = p.precision + p.recall;
    if s == 0.0 {
        0.0
    } else {
        2.0 * p.precision * p.recall / s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub area_km2: f64,
    pub detector_seconds: f64,
    pub wall_seconds: f64,
    pub rate_km2_per_s: f64,
    /// Wall time over detector time.
    pub overhead_factor: f64,
}

pub fn throughput(area_km2: f64, detector_seconds: f64, wall_seconds: f64) -> Result<Throughput> {
    for t in [detector_seconds, wall_seconds] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveTime(t));
        }
    }
    Ok(Throughput {
        area_km2,
        detector_seconds,
        wall_seconds,
        rate_km2_per_s: area_km2 / detector_seconds,
        overhead_factor: wall_seconds / detector_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub class_name: String,
    pub iou_threshold: f64,
    pub curve: Vec<PRPoint>,
    pub ap: f64,
    pub best_f1: f64,
    pub best_threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub map: f64,
    pub throughput: Option<Throughput>,
}

/// Scores every class present in the ground truth.
pub fn evaluate(images: &[ScoredImage<'_>], classes: &ClassTable, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let present: Vec<usize> = images
        .iter()
        .flat_map(|(_, g)| g.iter().map(|x| x.class_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if present.is_empty() {
        return Err(Error::NoClasses);
    }
    let reports = par::map_ordered(&present, |&class_id| -> Result<ClassReport> {
        let iou_threshold = cfg.iou_for(classes, class_id);
        let curve = pr_curve_summed(images, class_id, iou_threshold, cfg)?;
        let ap = average_precision(&curve)?;
        let best = curve
            .iter()
            .max_by(|a, b| a.f1().total_cmp(&b.f1()).then(b.threshold.total_cmp(&a.threshold)))
            .expect("curve is non-empty");
        Ok(ClassReport {
            class_id,
            class_name: classes.name_of(class_id).unwrap_or("?").to_string(),
            iou_threshold,
            best_f1: best.f1(),
            best_threshold: best.threshold,
            curve,
            ap,
        })
    });
    let classes: Vec<ClassReport> = reports.into_iter().collect::<Result<_>>()?;
    let aps: BTreeMap<usize, f64> = classes.iter().map(|c| (c.class_id, c.ap)).collect();
    Ok(EvalReport { map: mean_ap(&aps)?, classes, throughput: None })
}

impl EvalReport {
    /// Human-readable per-class tables.
    pub fn format_text(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let _ = writeln!(out, "class {} (IoU >= {})", c.class_name, c.iou_threshold);
            let _ = writeln!(out, "  threshold      tp      fp      fn  precision  recall");
            for p in &c.curve {
                let _ = writeln!(
                    out,
                    "  {:9.4} {:7} {:7} {:7}  {:9.4}  {:6.4}",
                    p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall
                );
            }
            let _ = writeln!(out, "  AP = {:.4}   best F1 = {:.4} at {:.4}\n", c.ap, c.best_f1, c.best_threshold);
        }
        let _ = writeln!(out, "mAP = {:.4}", self.map);
        if let Some(t) = &self.throughput {
            let _ = writeln!(out, "{}", t.format_text());
        }
        out
    }

    /// `class,threshold,tp,fp,fn,precision,recall` rows.
    pub fn format_pr_csv(&self) -> String {
        let mut out = String::from("class,threshold,tp,fp,fn,precision,recall\n");
        for c in &self.classes {
            for p in &c.curve {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.class_name, p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall
                );
            }
        }
        out
    }

    /// `class,ap` rows followed by `ALL,<mAP>`.
    pub fn format_summary_csv(&self) -> String {
        let mut out = String::from("class,ap\n");
        for c in &self.classes {
            let _ = writeln!(out, "{},{}", c.class_name, c.ap);
        }
        let _ = writeln!(out, "ALL,{}", self.map);
        out
    }

    /// Whitespace-separated `threshold recall precision` columns for one class.
    pub fn format_plot_data(&self, class: &ClassReport) -> String {
        let mut out = format!("# {} AP={}\n# threshold recall precision\n", class.class_name, class.ap);
        for p in &class.curve {
            let _ = writeln!(out, "{} {} {}", p.threshold, p.recall, p.precision);
        }
        out
    }
}

impl Throughput {
    pub fn format_text(&self) -> String {
        format!(
            "area = {:.4} km2\ndetector time = {:.4} s\nwall time = {:.4} s\nrate = {:.4} km2/s\noverhead factor = {:.3}",
            self.area_km2, self.detector_seconds, self.wall_seconds, self.rate_km2_per_s, self.overhead_factor
        )
    }
}

//! Browser bindings: tile plans, stitching of overlapping windows, and
//! precision/recall curves under a noisy oracle detector.

use serde::Serialize;
use tilewise::detectors::{oracle_detect, OracleNoiseModel};
use tilewise::eval::{evaluate, EvalConfig};
use tilewise::pipeline::{run_pipeline, DetectionContext, DetectorBinding, PipelineOptions};
use tilewise::stitcher::{globalize, stitch};
use tilewise::synth::{generate_scene, ObjectSpec, SceneSpec};
use tilewise::tiler::{extract_tiles, plan_tiles, CutoutName, TileSpec};
use tilewise::{BoundingBox, ClassTable, GroundTruthLabel, RasterImage};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<&BoundingBox> for Rect {
    fn from(b: &BoundingBox) -> Self {
        Rect { x: b.xmin, y: b.ymin, w: b.width(), h: b.height() }
    }
}

#[derive(Debug, Serialize)]
pub struct PlannedTile {
    pub name: String,
    pub rect: Rect,
}

#[derive(Debug, Serialize)]
pub struct TilePlan {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub tiles: Vec<PlannedTile>,
}

pub fn tile_plan(width: usize, height: usize, window: usize, overlap: f64) -> tilewise::Result<TilePlan> {
    let spec = TileSpec::new(window, overlap)?;
    let tiles = plan_tiles(width, height, &spec)?
        .into_iter()
        .map(|(row, col)| {
            let (h, w) = (window.min(height), window.min(width));
            let name = CutoutName::new("scene", row, col, h, w, "png").to_name()?;
            let rect = Rect { x: col as f64, y: row as f64, w: w as f64, h: h as f64 };
            Ok(PlannedTile { name, rect })
        })
        .collect::<tilewise::Result<_>>()?;
    Ok(TilePlan { width, height, stride: spec.stride()?, tiles })
}

#[derive(Debug, Serialize)]
pub struct Shown {
    pub rect: Rect,
    pub confidence: f64,
}

#[derive(Debug, Serialize)]
pub struct StitchDemo {
    pub width: usize,
    pub height: usize,
    pub tiles: Vec<Rect>,
    pub truth: Vec<Rect>,
    /// Every per-tile report mapped into scene pixels, before merging.
    pub raw: Vec<Shown>,
    pub merged: Vec<Shown>,
}

fn demo_scene(size: usize, cars: usize, seed: u64, classes: &ClassTable) -> tilewise::Result<(RasterImage, Vec<GroundTruthLabel>)> {
    let spec = SceneSpec {
        name: "scene".into(),
        width_px: Some(size),
        height_px: Some(size),
        bands: 1,
        seed,
        objects: vec![ObjectSpec { class: "car".into(), count: cars, size_m: 6.0 }],
        ..Default::default()
    };
    generate_scene(&spec, classes)
}

pub fn stitch_demo(size: usize, window: usize, overlap: f64, cars: usize, seed: u64, nms_iou: f64) -> tilewise::Result<StitchDemo> {
    let classes = ClassTable::default_overhead();
    let (image, gt) = demo_scene(size, cars, seed, &classes)?;
    let tiles = extract_tiles(&image, &TileSpec::new(window, overlap)?)?;
    let noise = OracleNoiseModel { jitter_px: 1.0, seed, ..OracleNoiseModel::noiseless() };
    let per_tile: Vec<_> = tiles.iter().map(|t| (t.placement.clone(), oracle_detect(t, &gt, &noise))).collect();
    let mut raw = Vec::new();
    for (placement, dets) in &per_tile {
        raw.extend(globalize(dets, placement)?.iter().map(|d| Shown { rect: (&d.bbox).into(), confidence: d.confidence }));
    }
    let merged = stitch(&per_tile, nms_iou)?;
    Ok(StitchDemo {
        width: size,
        height: size,
        tiles: tiles.iter().map(|t| (&t.placement.rect()).into()).collect(),
        truth: gt.iter().map(|g| (&g.bbox).into()).collect(),
        raw,
        merged: merged.detections.iter().map(|d| Shown { rect: (&d.bbox).into(), confidence: d.confidence }).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Serialize)]
pub struct PrDemo {
    pub objects: usize,
    pub detections: usize,
    pub iou_threshold: f64,
    pub ap: f64,
    pub best_f1: f64,
    pub best_threshold: f64,
    pub curve: Vec<CurvePoint>,
}

pub fn pr_demo(seed: u64, dropout: f64, fp_rate: f64, jitter: f64) -> tilewise::Result<PrDemo> {
    let classes = ClassTable::default_overhead();
    let (image, gt) = demo_scene(1200, 200, seed, &classes)?;
    let noise = OracleNoiseModel { dropout_prob: dropout, fp_rate, jitter_px: jitter, seed, ..Default::default() };
    let ctx = DetectionContext::new(classes.clone()).with_ground_truth(gt.clone());
    let out = run_pipeline(&image, &DetectorBinding::Oracle(noise), &PipelineOptions::default(), &ctx)?;
    let dets = &out.detections.detections;
    let report = evaluate(&[(dets, &gt)], &classes, &EvalConfig::default())?;
    let car = &report.classes[0];
    Ok(PrDemo {
        objects: gt.len(),
        detections: dets.len(),
        iou_threshold: car.iou_threshold,
        ap: car.ap,
        best_f1: car.best_f1,
        best_threshold: car.best_threshold,
        curve: car
            .curve
            .iter()
            .map(|p| CurvePoint { threshold: p.threshold, precision: p.precision, recall: p.recall })
            .collect(),
    })
}

fn to_js<T: Serialize>(r: tilewise::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Tile grid for an image as JSON.
#[wasm_bindgen(js_name = tilePlan)]
pub fn tile_plan_js(width: usize, height: usize, window: usize, overlap: f64) -> Result<String, JsError> {
    to_js(tile_plan(width, height, window, overlap))
}

/// Per-tile oracle reports and the stitched result on a synthetic scene, as JSON.
#[wasm_bindgen(js_name = stitchDemo)]
pub fn stitch_demo_js(size: usize, window: usize, overlap: f64, cars: usize, seed: u64, nms_iou: f64) -> Result<String, JsError> {
    to_js(stitch_demo(size, window, overlap, cars, seed, nms_iou))
}

/// Precision/recall curve of a noisy oracle on a synthetic scene, as JSON.
#[wasm_bindgen(js_name = prDemo)]
pub fn pr_demo_js(seed: u64, dropout: f64, fp_rate: f64, jitter: f64) -> Result<String, JsError> {
    to_js(pr_demo(seed, dropout, fp_rate, jitter))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_covers_image() {
        let plan = tile_plan(1000, 700, 416, 0.15).unwrap();
        assert_eq!(plan.stride, 353);
        assert_eq!(plan.tiles.len(), 6);
        let last = plan.tiles.last().unwrap();
        assert_eq!((last.rect.x + last.rect.w, last.rect.y + last.rect.h), (1000.0, 700.0));
        assert_eq!(plan.tiles[0].name, "scene|0_0_416_416.png");
    }

    #[test]
    fn plan_rejects_bad_overlap() {
        assert!(tile_plan(1000, 700, 416, 1.5).is_err());
    }

    #[test]
    fn stitching_merges_duplicates() {
        let demo = stitch_demo(769, 416, 0.15, 40, 3, 0.5).unwrap();
        assert_eq!(demo.tiles.len(), 4);
        assert_eq!(demo.merged.len(), demo.truth.len());
        assert!(demo.raw.len() >= demo.merged.len());
    }

    #[test]
    fn noiseless_curve_is_perfect() {
        let demo = pr_demo(1, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(demo.ap, 1.0);
        assert_eq!(demo.curve.len(), 30);
        let noisy = pr_demo(1, 0.3, 4.0, 2.0).unwrap();
        assert!(noisy.ap < 1.0);
    }

    #[test]
    fn json_is_well_formed() {
        let text = serde_json::to_string(&tile_plan(416, 416, 416, 0.15).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["tiles"].as_array().unwrap().len(), 1);
    }
}

//! Tile, detect, stitch: one pass of the windowed pipeline at one scale.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::detectors::{Detector, GridSimConfig, GridSimDetector, OracleDetector, OracleNoiseModel};
use crate::error::{Error, Result};
use crate::model::{ClassTable, Detection, GroundTruthLabel, RasterImage};
use crate::par;
use crate::stitcher::{stitch, GlobalDetectionSet, DEFAULT_NMS_IOU};
use crate::tiler::{extract_tiles, TileRecord, TileSpec};

/// Which detector a pipeline pass runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorBinding {
    Oracle(OracleNoiseModel),
    Gridsim(GridSimConfig),
    /// Command template with `{input}` and `{output}` placeholders.
    External { command: String },
}

impl Default for DetectorBinding {
    fn default() -> Self {
        DetectorBinding::Oracle(OracleNoiseModel::noiseless())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub tile_spec: TileSpec,
    pub nms_iou: f64,
    /// Cut tiles at half the window and upsample them 2x before detection.
    pub simulate_2x: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { tile_spec: TileSpec::default(), nms_iou: DEFAULT_NMS_IOU, simulate_2x: false }
    }
}

/// Everything detectors may need besides the tiles.
#[derive(Clone, Debug)]
pub struct DetectionContext {
    pub classes: ClassTable,
    /// Native-frame labels, required by the oracle and grid simulator.
    pub ground_truth: Option<Arc<[GroundTruthLabel]>>,
    /// Scratch directory for external detectors.
    pub workdir: Option<PathBuf>,
}

impl DetectionContext {
    pub fn new(classes: ClassTable) -> Self {
        Self { classes, ground_truth: None, workdir: None }
    }

    pub fn with_ground_truth(mut self, gt: Vec<GroundTruthLabel>) -> Self {
        self.ground_truth = Some(gt.into());
        self
    }

    pub fn with_workdir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.workdir = Some(dir.into());
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub tiling: Duration,
    /// Sum of per-tile detector time.
    pub detection: Duration,
    /// Elapsed time of the detection stage as a whole.
    pub detection_wall: Duration,
    pub stitching: Duration,
    pub wall: Duration,
}

impl StageTimings {
    pub fn accumulate(&mut self, other: &StageTimings) {
        self.tiling += other.tiling;
        self.detection += other.detection;
        self.detection_wall += other.detection_wall;
        self.stitching += other.stitching;
        self.wall += other.wall;
    }

    /// Wall time with the detection stage replaced by the summed per-tile
    /// time, i.e. what a single sequential detector would have taken.
    pub fn serial_wall(&self) -> Duration {
        self.wall.saturating_sub(self.detection_wall) + self.detection
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub detections: GlobalDetectionSet,
    pub timings: StageTimings,
    pub tile_count: usize,
}

/// Cuts tiles for detection, upsampling each cutout 2x on the simulated path.
pub fn prepare_tiles(image: &RasterImage, spec: &TileSpec, simulate_2x: bool) -> Result<Vec<TileRecord>> {
    if !simulate_2x {
        return extract_tiles(image, spec);
    }
    if !spec.window.is_multiple_of(2) {
        return Err(Error::OddWindow(spec.window));
    }
    let native = TileSpec::new(spec.window / 2, spec.overlap_frac)?;
    let tiles = extract_tiles(image, &native)?;
    Ok(par::map_ordered(&tiles, |t| t.upsample(2)))
}

fn per_tile_detector(
    binding: &DetectorBinding,
    classes: &[usize],
    ctx: &DetectionContext,
) -> Result<Option<Box<dyn Detector>>> {
    let gt = || {
        ctx.ground_truth
            .clone()
            .ok_or_else(|| Error::InvalidConfig("oracle and gridsim detectors need ground truth".into()))
    };
    Ok(match binding {
        DetectorBinding::Oracle(noise) => {
            Some(Box::new(OracleDetector::new(gt()?, *noise)?.with_classes(classes.to_vec())))
        }
        DetectorBinding::Gridsim(cfg) => {
            Some(Box::new(GridSimDetector::new(gt()?, *cfg)?.with_classes(classes.to_vec())))
        }
        DetectorBinding::External { .. } => None,
    })
}

/// Runs the bound detector over `tiles`. Returns per-tile detections in
/// tile order and the summed detector time.
pub fn detect_tiles(
    tiles: &[TileRecord],
    binding: &DetectorBinding,
    classes: &[usize],
    ctx: &DetectionContext,
    label: &str,
) -> Result<(Vec<Vec<Detection>>, Duration)> {
    if let Some(detector) = per_tile_detector(binding, classes, ctx)? {
        let results = par::map_ordered(tiles, |t| {
            let start = Instant::now();
            let r = detector.detect(t);
            (r, start.elapsed())
        });
        let mut total = Duration::ZERO;
        let mut out = Vec::with_capacity(results.len());
        for (r, dt) in results {
            total += dt;
            out.push(r?);
        }
        return Ok((out, total));
    }
    let DetectorBinding::External { command } = binding else { unreachable!() };
    detect_external(tiles, command, ctx, label)
}

#[cfg(feature = "io")]
fn detect_external(
    tiles: &[TileRecord],
    command: &str,
    ctx: &DetectionContext,
    label: &str,
) -> Result<(Vec<Vec<Detection>>, Duration)> {
    use crate::detectors::ExternalDetector;
    use crate::tiler::{format_manifest, manifest_entry};

    let detector = ExternalDetector::new(command, ctx.classes.clone())?;
    let workdir = ctx
        .workdir
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("external detector needs a work directory".into()))?
        .join(format!("tiles_{label}"));
    std::fs::create_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
    let entries = tiles.iter().map(|t| manifest_entry(t, "png")).collect::<Result<Vec<_>>>()?;
    let written = par::map_ordered(&(0..tiles.len()).collect::<Vec<_>>(), |&i| {
        let (w, h) = tiles[i].placement.detector_dims();
        crate::io::write_png(&workdir.join(&entries[i].cutout_name), w, h, tiles[i].bands, &tiles[i].pixels)
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = workdir.join("manifest.tsv");
    std::fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;

    let start = Instant::now();
    let mut by_name = detector.run(&manifest, &workdir)?;
    let elapsed = start.elapsed();
    let per_tile = entries.iter().map(|e| by_name.remove(&e.cutout_name).unwrap_or_default()).collect();
    Ok((per_tile, elapsed))
}

#[cfg(not(feature = "io"))]
fn detect_external(
    _tiles: &[TileRecord],
    _command: &str,
    _ctx: &DetectionContext,
    _label: &str,
) -> Result<(Vec<Vec<Detection>>, Duration)> {
    Err(Error::InvalidConfig("external detectors need the `io` feature".into()))
}

/// Tiles `image`, detects `classes` with `binding`, and stitches the result
/// in the image's own pixel frame.
pub fn run_single_scale(
    image: &RasterImage,
    binding: &DetectorBinding,
    classes: &[usize],
    opts: &PipelineOptions,
    ctx: &DetectionContext,
    label: &str,
) -> Result<PipelineOutput> {
    let wall = Instant::now();
    let t0 = Instant::now();
    let tiles = prepare_tiles(image, &opts.tile_spec, opts.simulate_2x)?;
    let tiling = t0.elapsed();
    run_on_tiles(tiles, binding, classes, opts, ctx, label, tiling, wall)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_on_tiles(
    tiles: Vec<TileRecord>,
    binding: &DetectorBinding,
    classes: &[usize],
    opts: &PipelineOptions,
    ctx: &DetectionContext,
    label: &str,
    tiling: Duration,
    wall: Instant,
) -> Result<PipelineOutput> {
    let t0 = Instant::now();
    let (per_tile, detection) = detect_tiles(&tiles, binding, classes, ctx, label)?;
    let detection_wall = t0.elapsed();
    let t0 = Instant::now();
    let tile_count = tiles.len();
    let pairs: Vec<_> = tiles.into_iter().map(|t| t.placement).zip(per_tile).collect();
    let detections = stitch(&pairs, opts.nms_iou)?;
    let stitching = t0.elapsed();
    Ok(PipelineOutput {
        detections,
        timings: StageTimings { tiling, detection, detection_wall, stitching, wall: wall.elapsed() },
        tile_count,
    })
}

/// The plain pipeline: every class, native resolution.
pub fn run_pipeline(
    image: &RasterImage,
    binding: &DetectorBinding,
    opts: &PipelineOptions,
    ctx: &DetectionContext,
) -> Result<PipelineOutput> {
    let classes: Vec<usize> = (0..ctx.classes.len()).collect();
    let mut out = run_single_scale(image, binding, &classes, opts, ctx, "default")?;
    if out.detections.parent_name.is_empty() {
        out.detections.parent_name = image.name().to_string();
    }
    Ok(out)
}

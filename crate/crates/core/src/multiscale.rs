//! Multiscale detector ensembles.
//!
//! Each profile covers a fixed ground extent per window and handles a
//! disjoint set of classes: small vehicles at fine resolution, large
//! infrastructure on a downsampled copy of the scene. Profiles run
//! independently; their detections are mapped back to native pixels and
//! merged with one class-wise NMS.

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::{Error, Result};
use crate::imageops::area_resample;
use crate::model::{clamp_box, ClassTable, RasterImage};
use crate::pipeline::{prepare_tiles, run_on_tiles, DetectionContext, DetectorBinding, PipelineOptions, StageTimings};
use crate::stitcher::{nms_with_provenance, GlobalDetectionSet, DEFAULT_NMS_IOU};
use crate::tiler::{tile_count, validate_parent_name, TileSpec};

/// Relative tolerance under which two resolutions count as equal.
const GSD_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub name: String,
    /// Ground extent of one window in metres.
    pub window_m: f64,
    /// Window side in detector pixels.
    pub window_px: usize,
    pub classes: Vec<usize>,
    pub detector: DetectorBinding,
}

impl ScaleProfile {
    /// Resolution at which this profile's tiles reach the detector.
    pub fn effective_gsd(&self) -> f64 {
        effective_gsd(self)
    }
}

pub fn effective_gsd(profile: &ScaleProfile) -> f64 {
    profile.window_m / profile.window_px as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub profiles: Vec<ScaleProfile>,
    pub nms_iou: f64,
}

impl EnsembleConfig {
    pub fn new(profiles: Vec<ScaleProfile>) -> Self {
        Self { profiles, nms_iou: DEFAULT_NMS_IOU }
    }

    /// One profile at the image's own resolution covering every class.
    pub fn single(image: &RasterImage, window_px: usize, classes: &ClassTable, detector: DetectorBinding) -> Self {
        Self::new(vec![ScaleProfile {
            name: "default".into(),
            window_m: window_px as f64 * image.gsd(),
            window_px,
            classes: (0..classes.len()).collect(),
            detector,
        }])
    }

    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one profile".into()));
        }
        let mut owner: Vec<Option<&str>> = vec![None; classes.len()];
        for p in &self.profiles {
            validate_parent_name(&p.name)
                .map_err(|_| Error::InvalidConfig(format!("bad profile name {:?}", p.name)))?;
            if !(p.window_m.is_finite() && p.window_m > 0.0) || p.window_px == 0 {
                return Err(Error::InvalidConfig(format!("profile {:?} needs positive windows", p.name)));
            }
            for &c in &p.classes {
                let slot = owner
                    .get_mut(c)
                    .ok_or_else(|| Error::InvalidConfig(format!("profile {:?} routes unknown class id {c}", p.name)))?;
                if let Some(prev) = slot {
                    return Err(Error::InvalidConfig(format!(
                        "class {:?} routed to both {prev:?} and {:?}",
                        classes.name_of(c).unwrap_or("?"),
                        p.name
                    )));
                }
                *slot = Some(&p.name);
            }
        }
        if let Some(missing) = owner.iter().position(Option::is_none) {
            return Err(Error::InvalidConfig(format!(
                "class {:?} is not routed to any profile",
                classes.name_of(missing).unwrap_or("?")
            )));
        }
        Ok(())
    }
}

/// Area-averages `image` down to the profile's effective resolution.
/// Images already at that resolution come back unchanged; finer profiles
/// than the image are rejected.
pub fn resample_for_profile(image: &RasterImage, profile: &ScaleProfile) -> Result<RasterImage> {
    let target = effective_gsd(profile);
    let factor = image.gsd() / target;
    if (factor - 1.0).abs() <= GSD_TOLERANCE {
        return Ok(image.clone());
    }
    if factor > 1.0 {
        return Err(Error::UpsampleRequired { image_gsd: image.gsd(), target_gsd: target });
    }
    let w = ((image.width() as f64 * factor).round() as usize).max(1);
    let h = ((image.height() as f64 * factor).round() as usize).max(1);
    let out = area_resample(image, w, h)?;
    let name = format!("{}@{}", image.name(), profile.name);
    RasterImage::new(name, w, h, image.bands(), out.into_pixels(), target)
}

/// Tiling used to emulate 2x resolution: half-size native cutouts, each
/// upsampled 2x to the detector window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoXPlan {
    pub native_spec: TileSpec,
    pub detector_window: usize,
    pub upsample: usize,
    pub tile_count: usize,
}

pub fn simulate_2x(image: &RasterImage, spec: &TileSpec) -> Result<TwoXPlan> {
    if !spec.window.is_multiple_of(2) {
        return Err(Error::OddWindow(spec.window));
    }
    let native_spec = TileSpec::new(spec.window / 2, spec.overlap_frac)?;
    Ok(TwoXPlan {
        native_spec,
        detector_window: spec.window,
        upsample: 2,
        tile_count: tile_count(image.width(), image.height(), &native_spec)?,
    })
}

/// Coarse-profile tile count over fine-profile tile count for a square
/// region of side `image_extent_m`.
pub fn chip_count_ratio(image_extent_m: f64, fine_window_m: f64, coarse_window_m: f64, spec: &TileSpec) -> Result<f64> {
    if !(image_extent_m > 0.0 && fine_window_m > 0.0 && coarse_window_m > 0.0) {
        return Err(Error::InvalidConfig("extents must be positive".into()));
    }
    let count = |window_m: f64| -> Result<usize> {
        let px = ((image_extent_m / window_m * spec.window as f64).round() as usize).max(1);
        tile_count(px, px, spec)
    };
    Ok(count(coarse_window_m)? as f64 / count(fine_window_m)? as f64)
}

#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    pub detections: GlobalDetectionSet,
    pub timings: StageTimings,
    pub tile_count: usize,
}

fn run_profile(
    image: &RasterImage,
    profile: &ScaleProfile,
    tile_spec: &TileSpec,
    simulate_2x: bool,
    nms_iou: f64,
    ctx: &DetectionContext,
) -> Result<EnsembleOutput> {
    let wall = Instant::now();
    let t0 = Instant::now();
    let scaled = resample_for_profile(image, profile)?;
    let sx = image.width() as f64 / scaled.width() as f64;
    let sy = image.height() as f64 / scaled.height() as f64;
    let spec = TileSpec::new(profile.window_px, tile_spec.overlap_frac)?;
    let mut tiles = prepare_tiles(&scaled, &spec, simulate_2x)?;
    for t in &mut tiles {
        t.placement.native_scale = (sx, sy);
    }
    let tiling = t0.elapsed();

    let opts = PipelineOptions { tile_spec: spec, nms_iou, simulate_2x };
    let out = run_on_tiles(tiles, &profile.detector, &profile.classes, &opts, ctx, &profile.name, tiling, wall)?;

    let (w, h) = (image.width() as f64, image.height() as f64);
    let mut set = GlobalDetectionSet { parent_name: image.name().to_string(), ..Default::default() };
    for (d, p) in out.detections.iter() {
        if !profile.classes.contains(&d.class_id) {
            log::warn!("profile {:?} produced unrouted class {}; dropped", profile.name, d.class_id);
            continue;
        }
        let mut d = d.clone();
        d.bbox = clamp_box(&d.bbox.scale(sx, sy), w, h);
        set.detections.push(d);
        set.provenance.push(crate::stitcher::Provenance { profile: Some(profile.name.clone()), tile: p.tile });
    }
    Ok(EnsembleOutput { detections: set, timings: out.timings, tile_count: out.tile_count })
}

/// Runs every profile over `image` and merges their detections in native
/// pixel coordinates.
pub fn run_ensemble(
    image: &RasterImage,
    cfg: &EnsembleConfig,
    tile_spec: &TileSpec,
    simulate_2x: bool,
    ctx: &DetectionContext,
) -> Result<EnsembleOutput> {
    cfg.validate(&ctx.classes)?;
    let wall = Instant::now();
    let active: Vec<&ScaleProfile> = cfg.profiles.iter().filter(|p| !p.classes.is_empty()).collect();
    // profiles run one after another; tiles within a profile run in parallel
    let results = active.iter().map(|p| {
        run_profile(image, p, tile_spec, simulate_2x, cfg.nms_iou, ctx)
            .map_err(|e| Error::Profile { profile: p.name.clone(), source: Box::new(e) })
    });

    let mut timings = StageTimings::default();
    let mut tiles = 0;
    let mut dets = Vec::new();
    let mut provenance = Vec::new();
    for r in results {
        let r = r?;
        timings.accumulate(&r.timings);
        tiles += r.tile_count;
        dets.extend(r.detections.detections);
        provenance.extend(r.detections.provenance);
    }
    let t0 = Instant::now();
    let (detections, provenance) = nms_with_provenance(dets, provenance, cfg.nms_iou)?;
    timings.stitching += t0.elapsed();
    timings.wall = wall.elapsed();
    Ok(EnsembleOutput {
        detections: GlobalDetectionSet { parent_name: image.name().to_string(), detections, provenance },
        timings,
        tile_count: tiles,
    })
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tilewise::augment::{hsv_jitter, rotate_chip, AugmentSpec, LabeledChip};
use tilewise::detectors::mix_seed;
use tilewise::eval::{evaluate, throughput, EvalReport, Throughput};
use tilewise::formats::{
    format_global_detections, format_ground_truth, format_tile_detections, parse_global_detections,
    parse_ground_truth, parse_tile_detections,
};
use tilewise::io::{read_png, read_raster, write_png, write_raster};
use tilewise::multiscale::run_ensemble;
use tilewise::pipeline::{detect_tiles, run_pipeline, DetectionContext, StageTimings};
use tilewise::stitcher::{stitch, GlobalDetectionSet};
use tilewise::synth::{generate_scene, SceneSpec};
use tilewise::tiler::{
    extract_tiles, format_manifest, manifest_entry, parse_manifest, placements_from_manifest, TileRecord, TileSpec,
};
use tilewise::{with_workers, ClassTable, Detection, Error, GroundTruthLabel, RasterImage, Result};

use crate::config::PipelineConfig;

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const TILE_DETECTIONS_FILE: &str = "tile_detections.csv";
pub const MANIFEST_FILE: &str = "manifest.tsv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn read_ground_truth(path: &Path, classes: &ClassTable) -> Result<Vec<GroundTruthLabel>> {
    parse_ground_truth(&read_text(path)?, &path.display().to_string(), classes)
}

/// Cuts an image into named cutouts plus a manifest. Returns the tile count.
pub fn cmd_tile(image_path: &Path, out_dir: &Path, spec: &TileSpec) -> Result<usize> {
    let image = read_raster(image_path)?;
    ensure_dir(out_dir)?;
    let tiles = extract_tiles(&image, spec)?;
    let mut entries = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let e = manifest_entry(t, "png")?;
        let (w, h) = t.placement.detector_dims();
        write_png(&out_dir.join(&e.cutout_name), w, h, t.bands, &t.pixels)?;
        entries.push(e);
    }
    write_text(&out_dir.join(MANIFEST_FILE), &format_manifest(&entries))?;
    Ok(tiles.len())
}

fn context(cfg: &PipelineConfig) -> Result<DetectionContext> {
    let mut ctx = DetectionContext::new(cfg.classes.clone()).with_workdir(cfg.out_dir.join("work"));
    if let Some(gt) = &cfg.ground_truth {
        ctx = ctx.with_ground_truth(read_ground_truth(gt, &cfg.classes)?);
    }
    Ok(ctx)
}

fn load_manifest(path: &Path) -> Result<Vec<tilewise::tiler::ManifestEntry>> {
    parse_manifest(&read_text(path)?, &path.display().to_string())
}

/// Runs the configured detector over the cutouts listed in a manifest and
/// writes tile-local detections.
pub fn cmd_detect(manifest_path: &Path, cfg: &PipelineConfig) -> Result<PathBuf> {
    let entries = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let placements = placements_from_manifest(&entries);
    let mut tiles = Vec::with_capacity(entries.len());
    for (e, placement) in entries.iter().zip(placements) {
        let path = dir.join(&e.cutout_name);
        let (w, h, bands, pixels) = read_png(&path)?;
        if (w, h) != (e.width, e.height) {
            return Err(Error::InvalidRaster(format!("{} is {w}x{h}, manifest says {}x{}", e.cutout_name, e.width, e.height)));
        }
        tiles.push(TileRecord { placement, bands, pixels });
    }
    ensure_dir(&cfg.out_dir)?;
    let ctx = context(cfg)?;
    let all: Vec<usize> = (0..cfg.classes.len()).collect();
    let (per_tile, _) = with_workers(cfg.workers, || detect_tiles(&tiles, &cfg.detector, &all, &ctx, "detect"))?;
    let text = format_tile_detections(
        entries.iter().map(|e| e.cutout_name.as_str()).zip(per_tile.iter().map(Vec::as_slice)),
        &cfg.classes,
    );
    let out = cfg.out_dir.join(TILE_DETECTIONS_FILE);
    write_text(&out, &text)?;
    Ok(out)
}

/// Maps tile-local detections to their parents and merges them.
pub fn cmd_stitch(tile_dets_path: &Path, manifest_path: &Path, cfg: &PipelineConfig) -> Result<PathBuf> {
    let entries = load_manifest(manifest_path)?;
    let placements: BTreeMap<String, _> =
        entries.iter().map(|e| e.cutout_name.clone()).zip(placements_from_manifest(&entries)).collect();
    let records = parse_tile_detections(&read_text(tile_dets_path)?, &tile_dets_path.display().to_string(), &cfg.classes)?;
    let mut per_tile: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for (name, d) in &records {
        if !placements.contains_key(name) {
            return Err(Error::UnknownCutout(name.clone()));
        }
        per_tile.entry(name).or_default().push(d.clone());
    }
    let mut by_parent: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for (name, p) in &placements {
        let dets = per_tile.remove(name.as_str()).unwrap_or_default();
        by_parent.entry(p.parent_name.as_str()).or_default().push((p.clone(), dets));
    }
    let mut text = String::new();
    for (parent, tiles) in by_parent {
        let set = stitch(&tiles, cfg.options.nms_iou)?;
        text.push_str(&format_global_detections(parent, &set.detections, &cfg.classes));
    }
    ensure_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join(DETECTIONS_FILE);
    write_text(&out, &text)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub detections: GlobalDetectionSet,
    pub timings: StageTimings,
    pub tile_count: usize,
    pub area_km2: f64,
    pub report: Option<EvalReport>,
}

/// Tile, detect, stitch and (with ground truth) evaluate, without writing
/// anything.
pub fn execute(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let image = read_raster(cfg.require_image()?)?;
    let ctx = context(cfg)?;
    let (detections, timings, tile_count) = with_workers(cfg.workers, || -> Result<_> {
        Ok(match &cfg.ensemble {
            Some(ens) => {
                let out = run_ensemble(&image, ens, &cfg.options.tile_spec, cfg.options.simulate_2x, &ctx)?;
                (out.detections, out.timings, out.tile_count)
            }
            None => {
                let out = run_pipeline(&image, &cfg.detector, &cfg.options, &ctx)?;
                (out.detections, out.timings, out.tile_count)
            }
        })
    })?;
    let report = match &ctx.ground_truth {
        Some(gt) => Some(with_workers(cfg.workers, || {
            evaluate(&[(&detections.detections, gt)], &cfg.classes, &cfg.eval)
        })?),
        None => None,
    };
    Ok(RunOutcome { detections, timings, tile_count, area_km2: image.area_km2(), report })
}

fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    write_text(&out_dir.join("report.txt"), &report.format_text())?;
    write_text(&out_dir.join("pr.csv"), &report.format_pr_csv())?;
    write_text(&out_dir.join("summary.csv"), &report.format_summary_csv())?;
    for c in &report.classes {
        write_text(&out_dir.join(format!("pr_{}.dat", c.class_name)), &report.format_plot_data(c))?;
    }
    Ok(())
}

/// Full pipeline run writing the detection file and, with ground truth,
/// the evaluation report.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunOutcome> {
    let outcome = execute(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let text = format_global_detections(&outcome.detections.parent_name, &outcome.detections.detections, &cfg.classes);
    write_text(&cfg.out_dir.join(DETECTIONS_FILE), &text)?;
    if let Some(r) = &outcome.report {
        write_report(r, &cfg.out_dir)?;
    }
    Ok(outcome)
}

/// Scores an existing detection file against a ground-truth file.
pub fn cmd_evaluate(dets_path: &Path, gt_path: &Path, cfg: &PipelineConfig) -> Result<EvalReport> {
    let records = parse_global_detections(&read_text(dets_path)?, &dets_path.display().to_string(), &cfg.classes)?;
    let dets: Vec<Detection> = records.into_iter().map(|(_, d)| d).collect();
    let gt = read_ground_truth(gt_path, &cfg.classes)?;
    let report = with_workers(cfg.workers, || evaluate(&[(&dets, &gt)], &cfg.classes, &cfg.eval))?;
    ensure_dir(&cfg.out_dir)?;
    write_report(&report, &cfg.out_dir)?;
    Ok(report)
}

/// Runs the pipeline and reports area, detector throughput and the
/// wall-over-detector overhead factor.
pub fn cmd_benchmark(cfg: &PipelineConfig) -> Result<(RunOutcome, Throughput)> {
    let outcome = cmd_run(cfg)?;
    let t = throughput(
        outcome.area_km2,
        outcome.timings.detection.as_secs_f64(),
        outcome.timings.serial_wall().as_secs_f64(),
    )?;
    write_text(&cfg.out_dir.join("throughput.txt"), &(t.format_text() + "\n"))?;
    Ok((outcome, t))
}

/// Renders a synthetic scene. Returns the image and ground-truth paths.
pub fn cmd_synth(
    scene_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    classes: &ClassTable,
) -> Result<(PathBuf, PathBuf)> {
    let text = read_text(scene_path)?;
    let mut spec: SceneSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: scene_path.display().to_string(),
        line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (image, gt) = generate_scene(&spec, classes)?;
    ensure_dir(out_dir)?;
    let image_path = out_dir.join(format!("{}.png", spec.name));
    let gt_path = out_dir.join(format!("{}_gt.csv", spec.name));
    write_raster(&image, &image_path)?;
    write_text(&gt_path, &format_ground_truth(&gt, classes))?;
    Ok((image_path, gt_path))
}

fn angle_tag(angle: f64) -> String {
    format!("{angle}").replace('-', "m").replace('.', "p")
}

/// Applies every rotation in the augment settings plus a seeded HSV jitter to each
/// chip of a training list. The list holds one `image labels` pair per line,
/// relative to the list file. Returns the number of chips written.
pub fn cmd_augment(list_path: &Path, spec_path: &Path, out_dir: &Path, classes: &ClassTable) -> Result<usize> {
    let spec_text = read_text(spec_path)?;
    let spec: AugmentSpec = toml::from_str(&spec_text).map_err(|e| Error::Parse {
        path: spec_path.display().to_string(),
        line: e.span().map(|s| spec_text[..s.start].lines().count().max(1)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    spec.validate()?;
    let base = list_path.parent().unwrap_or(Path::new("."));
    ensure_dir(out_dir)?;
    let mut listing = String::new();
    let mut count = 0;
    for (i, line) in read_text(list_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [image, labels] = fields[..] else {
            return Err(Error::Parse {
                path: list_path.display().to_string(),
                line: i + 1,
                msg: format!("expected `image labels`, found {} fields", fields.len()),
            });
        };
        let image = read_raster(&base.join(image))?;
        let labels = read_ground_truth(&base.join(labels), classes)?;
        let chip = LabeledChip { image, labels };
        for (k, &angle) in spec.rotation_angles.iter().enumerate() {
            let rotated = rotate_chip(&chip, angle)?;
            let seed = mix_seed(&[spec.seed, i as u64, k as u64]);
            let jittered = hsv_jitter(&rotated.image, &AugmentSpec { seed, ..spec.clone() })?;
            let stem = format!("{}_r{}", chip.image.name(), angle_tag(angle));
            let out_image = RasterImage::new(
                stem.clone(),
                jittered.width(),
                jittered.height(),
                jittered.bands(),
                jittered.into_pixels(),
                chip.image.gsd(),
            )?;
            let png = format!("{stem}.png");
            let csv = format!("{stem}.csv");
            write_raster(&out_image, &out_dir.join(&png))?;
            write_text(&out_dir.join(&csv), &format_ground_truth(&rotated.labels, classes))?;
            listing.push_str(&format!("{png} {csv}\n"));
            count += 1;
        }
    }
    write_text(&out_dir.join("train_list.txt"), &listing)?;
    Ok(count)
}

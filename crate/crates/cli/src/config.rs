//! Run configuration: a TOML file with paths relative to its own directory,
//! overridable from the command line.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tilewise::eval::{linspace, EvalConfig, THRESHOLD_MAX, THRESHOLD_MIN};
use tilewise::multiscale::{EnsembleConfig, ScaleProfile};
use tilewise::pipeline::{DetectorBinding, PipelineOptions};
use tilewise::stitcher::DEFAULT_NMS_IOU;
use tilewise::tiler::{TileSpec, DEFAULT_OVERLAP, DEFAULT_WINDOW};
use tilewise::{ClassInfo, ClassTable, Error, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    workers: Option<usize>,
    #[serde(default)]
    input: InputSection,
    classes: Option<Vec<ClassEntry>>,
    #[serde(default)]
    tiling: TilingSection,
    #[serde(default)]
    detector: DetectorBinding,
    #[serde(default)]
    stitch: StitchSection,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    profiles: Vec<ProfileEntry>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputSection {
    image: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    name: String,
    #[serde(default)]
    small_object: bool,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TilingSection {
    window_px: usize,
    overlap: f64,
    simulate_2x: bool,
}

impl Default for TilingSection {
    fn default() -> Self {
        Self { window_px: DEFAULT_WINDOW, overlap: DEFAULT_OVERLAP, simulate_2x: false }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StitchSection {
    nms_iou: f64,
}

impl Default for StitchSection {
    fn default() -> Self {
        Self { nms_iou: DEFAULT_NMS_IOU }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalSection {
    iou_default: f64,
    iou_small_object: f64,
    threshold_count: usize,
    threshold_min: f64,
    threshold_max: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            iou_default: d.iou_default,
            iou_small_object: d.iou_small_object,
            threshold_count: d.thresholds.len(),
            threshold_min: THRESHOLD_MIN,
            threshold_max: THRESHOLD_MAX,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    name: String,
    window_m: f64,
    window_px: Option<usize>,
    classes: Vec<String>,
    detector: Option<DetectorBinding>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OutputSection {
    dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub window_px: Option<usize>,
    pub overlap: Option<f64>,
    pub nms_iou: Option<f64>,
    pub out: Option<PathBuf>,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub image: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub classes: ClassTable,
    pub options: PipelineOptions,
    pub detector: DetectorBinding,
    pub ensemble: Option<EnsembleConfig>,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn reseed(binding: &mut DetectorBinding, seed: u64) {
    if let DetectorBinding::Oracle(noise) = binding {
        noise.seed = seed;
    }
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
            Error::Parse { path: path.display().to_string(), line, msg: e.message().to_string() }
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::resolve(raw, base, overrides)
    }

    /// Defaults for commands run without a config file.
    pub fn from_overrides(overrides: &Overrides) -> Result<Self> {
        Self::resolve(RawConfig::default(), Path::new("."), overrides)
    }

    fn resolve(raw: RawConfig, base: &Path, ov: &Overrides) -> Result<Self> {
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let classes = match raw.classes {
            Some(list) => ClassTable::new(
                list.into_iter().map(|c| ClassInfo { name: c.name, small_object: c.small_object }).collect(),
            )?,
            None => ClassTable::default_overhead(),
        };
        let window = ov.window_px.unwrap_or(raw.tiling.window_px);
        let overlap = ov.overlap.unwrap_or(raw.tiling.overlap);
        let nms_iou = ov.nms_iou.unwrap_or(raw.stitch.nms_iou);
        if !(nms_iou > 0.0 && nms_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("nms_iou {nms_iou} outside (0, 1]")));
        }
        let options = PipelineOptions { tile_spec: TileSpec::new(window, overlap)?, nms_iou, simulate_2x: raw.tiling.simulate_2x };

        let seed = ov.seed.or(raw.seed);
        let mut detector = raw.detector;
        if let Some(s) = seed {
            reseed(&mut detector, s);
        }

        let ensemble = if raw.profiles.is_empty() {
            None
        } else {
            let mut profiles = Vec::with_capacity(raw.profiles.len());
            for p in raw.profiles {
                let ids = p.classes.iter().map(|c| classes.id_of(c)).collect::<Result<Vec<_>>>()?;
                let mut det = p.detector.unwrap_or_else(|| detector.clone());
                if let Some(s) = seed {
                    reseed(&mut det, s);
                }
                profiles.push(ScaleProfile {
                    name: p.name,
                    window_m: p.window_m,
                    window_px: p.window_px.unwrap_or(window),
                    classes: ids,
                    detector: det,
                });
            }
            let cfg = EnsembleConfig { profiles, nms_iou };
            cfg.validate(&classes)?;
            Some(cfg)
        };

        let e = raw.eval;
        let eval = EvalConfig {
            iou_default: e.iou_default,
            iou_small_object: e.iou_small_object,
            thresholds: linspace(e.threshold_min, e.threshold_max, e.threshold_count),
            nms_iou,
        };
        eval.validate()?;

        let workers = ov.workers.or(raw.workers).unwrap_or_else(default_workers);
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        let out_dir = ov.out.clone().unwrap_or_else(|| rel(raw.output.dir));
        let image = raw.input.image.map(rel);
        let ground_truth = raw.input.ground_truth.map(rel);
        for p in image.iter().chain(ground_truth.iter()) {
            if !p.exists() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                });
            }
        }
        Ok(Self { image, ground_truth, classes, options, detector, ensemble, eval, out_dir, workers })
    }

    pub fn require_image(&self) -> Result<&Path> {
        self.image.as_deref().ok_or_else(|| Error::InvalidConfig("config has no [input] image".into()))
    }
}

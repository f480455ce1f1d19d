//! Command-line front end for the tilewise pipeline.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tilewise::{ClassTable, Error, ErrorFamily, Result};

use crate::config::{Overrides, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "tilewise", version, about = "Windowed object detection over large overhead images")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "window-px", global = true)]
    pub window_px: Option<usize>,
    #[arg(long, global = true)]
    pub overlap: Option<f64>,
    #[arg(long = "nms-iou", global = true)]
    pub nms_iou: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut an image into named cutouts plus a manifest.
    Tile { image: PathBuf },
    /// Run the configured detector over the cutouts in a manifest.
    Detect { manifest: PathBuf },
    /// Merge tile-local detections into parent-frame detections.
    Stitch { detections: PathBuf, manifest: PathBuf },
    /// Tile, detect, stitch and evaluate as configured.
    Run,
    /// Render a synthetic scene with ground truth.
    Synth { scene: PathBuf },
    /// Rotate and colour-jitter a list of training chips.
    Augment { train_list: PathBuf, spec: PathBuf },
    /// Score a detection file against ground truth.
    Evaluate { detections: PathBuf, ground_truth: PathBuf },
    /// Run the pipeline and report throughput.
    Benchmark,
}

/// Process exit code for each error family.
pub fn exit_code(family: ErrorFamily) -> i32 {
    match family {
        ErrorFamily::Input => 2,
        ErrorFamily::Geometry => 3,
        ErrorFamily::Naming => 4,
        ErrorFamily::Detector => 5,
        ErrorFamily::Parse => 6,
        ErrorFamily::Frame => 7,
        ErrorFamily::Eval => 8,
        ErrorFamily::Io => 9,
    }
}

pub const USAGE_EXIT: i32 = 64;

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            workers: self.workers,
            seed: self.seed,
            window_px: self.window_px,
            overlap: self.overlap,
            nms_iou: self.nms_iou,
            out: self.out.clone(),
        }
    }

    fn load(&self) -> Result<PipelineConfig> {
        let ov = self.overrides();
        match &self.config {
            Some(p) => PipelineConfig::load(p, &ov),
            None => PipelineConfig::from_overrides(&ov),
        }
    }

    fn require_config(&self) -> Result<PipelineConfig> {
        if self.config.is_none() {
            return Err(Error::InvalidConfig("this command needs --config".into()));
        }
        self.load()
    }
}

fn classes_for(global: &GlobalArgs) -> Result<ClassTable> {
    Ok(match &global.config {
        Some(_) => global.load()?.classes,
        None => ClassTable::default_overhead(),
    })
}

/// Executes a parsed command, writing its summary to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match &cli.command {
        Command::Tile { image } => {
            let cfg = g.load()?;
            let n = commands::cmd_tile(image, &cfg.out_dir, &cfg.options.tile_spec)?;
            say(out, format!("{n} tiles written to {}", cfg.out_dir.display()));
        }
        Command::Detect { manifest } => {
            let path = commands::cmd_detect(manifest, &g.require_config()?)?;
            say(out, format!("tile detections written to {}", path.display()));
        }
        Command::Stitch { detections, manifest } => {
            let path = commands::cmd_stitch(detections, manifest, &g.load()?)?;
            say(out, format!("detections written to {}", path.display()));
        }
        Command::Run => {
            let cfg = g.require_config()?;
            let r = commands::cmd_run(&cfg)?;
            say(out, format!("{} tiles, {} detections", r.tile_count, r.detections.len()));
            if let Some(rep) = &r.report {
                say(out, format!("mAP = {:.4}", rep.map));
            }
        }
        Command::Synth { scene } => {
            let out_dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let (img, gt) = commands::cmd_synth(scene, &out_dir, g.seed, &classes_for(g)?)?;
            say(out, format!("wrote {} and {}", img.display(), gt.display()));
        }
        Command::Augment { train_list, spec } => {
            let out_dir = g.out.clone().unwrap_or_else(|| PathBuf::from("augmented"));
            let n = commands::cmd_augment(train_list, spec, &out_dir, &classes_for(g)?)?;
            say(out, format!("{n} chips written to {}", out_dir.display()));
        }
        Command::Evaluate { detections, ground_truth } => {
            let cfg = g.load()?;
            let report = commands::cmd_evaluate(detections, ground_truth, &cfg)?;
            say(out, report.format_text());
        }
        Command::Benchmark => {
            let (r, t) = commands::cmd_benchmark(&g.require_config()?)?;
            say(out, format!("{} tiles, {} detections", r.tile_count, r.detections.len()));
            say(out, t.format_text());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures are reported on stderr as `error[<family>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match dispatch(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let family = e.family();
            eprintln!("error[{}]: {e}", family.as_str());
            exit_code(family)
        }
    }
}

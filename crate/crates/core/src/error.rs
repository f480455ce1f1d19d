use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorFamily {
    Input,
    Geometry,
    Naming,
    Detector,
    Parse,
    Frame,
    Eval,
    Io,
}

impl ErrorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorFamily::Input => "input",
            ErrorFamily::Geometry => "geometry",
            ErrorFamily::Naming => "naming",
            ErrorFamily::Detector => "detector",
            ErrorFamily::Parse => "parse",
            ErrorFamily::Frame => "frame",
            ErrorFamily::Eval => "eval",
            ErrorFamily::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("invalid box ({xmin}, {ymin}, {xmax}, {ymax})")]
    InvalidBox { xmin: f64, ymin: f64, xmax: f64, ymax: f64 },

    #[error("invalid tile spec: {0}")]
    InvalidTileSpec(String),

    #[error("invalid parent name {name:?}: {reason}")]
    InvalidParentName { name: String, reason: &'static str },

    #[error("malformed cutout name {name:?}: bad {field}")]
    MalformedCutoutName { name: String, field: &'static str },

    #[error("invalid class table: {0}")]
    InvalidClassTable(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("detection frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("detections from multiple parents: {0:?} and {1:?}")]
    MixedParents(String, String),

    #[error("detections from multiple classes passed to a single-class matcher: {0} and {1}")]
    MixedClasses(usize, usize),

    #[error("upsampling required: image gsd {image_gsd} m/px is coarser than target {target_gsd} m/px")]
    UpsampleRequired { image_gsd: f64, target_gsd: f64 },

    #[error("window must be even for 2x simulation, got {0}")]
    OddWindow(usize),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("{0}-band image where {1} bands are required")]
    BandCount(usize, usize),

    #[error("chip is not square ({0}x{1})")]
    NonSquareChip(usize, usize),

    #[error("precision-recall curve is empty")]
    EmptyCurve,

    #[error("no classes to average")]
    NoClasses,

    #[error("non-positive time: {0}")]
    NonPositiveTime(f64),

    #[error("cannot place {requested} objects without exceeding the overlap limit (placed {placed})")]
    InfeasibleDensity { requested: usize, placed: usize },

    #[error("profile {profile:?}: {source}")]
    Profile {
        profile: String,
        #[source]
        source: Box<Error>,
    },

    #[error("external detector failed ({status}): {stderr}")]
    ProcessFailure { status: String, stderr: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("unknown cutout name {0:?} in detection file")]
    UnknownCutout(String),

    #[error("missing gsd sidecar for {0}")]
    MissingGsd(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[cfg(feature = "io")]
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        use Error::*;
        match self {
            InvalidRaster(_) | BandCount(..) | NonSquareChip(..) | ImageTooSmall(_) | MissingGsd(_)
            | InvalidConfig(_) | InvalidClassTable(_) | UnknownClass(_) | InfeasibleDensity { .. } => {
                ErrorFamily::Input
            }
            InvalidBox { .. } | InvalidTileSpec(_) | UpsampleRequired { .. } | OddWindow(_) => {
                ErrorFamily::Geometry
            }
            InvalidParentName { .. } | MalformedCutoutName { .. } | UnknownCutout(_) => {
                ErrorFamily::Naming
            }
            ProcessFailure { .. } => ErrorFamily::Detector,
            Parse { .. } => ErrorFamily::Parse,
            FrameMismatch(_) | MixedParents(..) | MixedClasses(..) => ErrorFamily::Frame,
            EmptyCurve | NoClasses | NonPositiveTime(_) => ErrorFamily::Eval,
            Io { .. } => ErrorFamily::Io,
            #[cfg(feature = "io")]
            Image { .. } => ErrorFamily::Io,
            Profile { source, .. } => source.family(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}

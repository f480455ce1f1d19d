//! Windowed object detection for large overhead images.
//!
//! Large scenes are cut into overlapping fixed-size cutouts ([`tiler`]), each
//! cutout goes through a detector ([`detectors`]), detections are mapped back
//! to the parent image and merged with class-wise non-maximal suppression
//! ([`stitcher`]), optionally across several scale profiles ([`multiscale`]),
//! and scored with a thresholded precision/recall sweep ([`eval`]).

pub mod augment;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod formats;
pub mod imageops;
#[cfg(feature = "io")]
pub mod io;
pub mod model;
pub mod multiscale;
mod par;
pub mod pipeline;
pub mod stitcher;
pub mod synth;
pub mod tiler;

pub use error::{Error, ErrorFamily, Result};
pub use model::{
    box_area_m2, clamp_box, iou, BoundingBox, ClassInfo, ClassTable, Detection, Frame, GroundTruthLabel,
    RasterImage, TileId,
};
pub use par::with_workers;

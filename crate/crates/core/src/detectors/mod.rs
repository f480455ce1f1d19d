//! Per-tile detection contract and the built-in detectors.
//!
//! Detectors return boxes in the tile's detector pixels (`TileLocal` frame).
//! The oracle and grid simulator read ground truth instead of pixels; real
//! models plug in through the external process adapter.

mod external;
mod gridsim;
mod oracle;

pub use external::{external_detect, ExternalDetector};
pub use gridsim::{gridsim_detect, GridSimConfig, GridSimDetector};
pub use oracle::{oracle_detect, ConfidenceLaw, OracleDetector, OracleNoiseModel};

use crate::error::Result;
use crate::model::{BoundingBox, Detection, GroundTruthLabel};
use crate::tiler::TileRecord;

pub trait Detector: Send + Sync {
    fn id(&self) -> &str;

    /// Detections for one tile, in that tile's local frame.
    fn detect(&self, tile: &TileRecord) -> Result<Vec<Detection>>;
}

/// Size of the final prediction layer: `boxes * (classes + 5)`.
pub fn nf_layer_size(n_boxes: usize, n_classes: usize) -> usize {
    n_boxes * (n_classes + 5)
}

/// Prediction grid for a square window downsampled by `downsample`.
pub fn grid_dims(window: usize, downsample: usize) -> (usize, usize) {
    let n = window.div_ceil(downsample.max(1));
    (n, n)
}

/// Ground truth visible in a tile, mapped to detector pixels.
pub(crate) struct VisibleObject {
    pub index: usize,
    pub class_id: usize,
    pub local: BoundingBox,
    pub visible_frac: f64,
}

pub(crate) fn visible_objects(
    tile: &TileRecord,
    gt: &[GroundTruthLabel],
    classes: Option<&[usize]>,
) -> Vec<VisibleObject> {
    let p = &tile.placement;
    let native_window = p.native_rect();
    let (dw, dh) = p.detector_dims();
    let window = BoundingBox { xmin: 0.0, ymin: 0.0, xmax: dw as f64, ymax: dh as f64 };
    gt.iter()
        .enumerate()
        .filter(|(_, g)| classes.is_none_or(|c| c.contains(&g.class_id)))
        .filter(|(_, g)| g.bbox.intersection_area(&native_window) > 0.0)
        .filter_map(|(index, g)| {
            let local = p.native_to_detector(&g.bbox);
            crate::model::truncate_to_window(&local, &window).map(|(clipped, frac)| VisibleObject {
                index,
                class_id: g.class_id,
                local: clipped,
                visible_frac: frac,
            })
        })
        .collect()
}

/// SplitMix64 finalizer folded over `parts`.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub(crate) fn hash_str(s: &str) -> u64 {
    // FNV-1a
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nf_examples() {
        assert_eq!(nf_layer_size(5, 4), 45);
        assert_eq!(nf_layer_size(1, 0), 5);
        assert_eq!(nf_layer_size(5, 80), 425);
    }

    #[test]
    fn nf_is_monotone() {
        for b in 1..10 {
            for c in 0..20 {
                assert!(nf_layer_size(b + 1, c) > nf_layer_size(b, c));
                assert!(nf_layer_size(b, c + 1) > nf_layer_size(b, c));
            }
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(grid_dims(416, 16), (26, 26));
        assert_eq!(grid_dims(416, 32), (13, 13));
        assert_eq!(grid_dims(1, 1), (1, 1));
        assert_eq!(grid_dims(417, 32), (14, 14));
    }
}

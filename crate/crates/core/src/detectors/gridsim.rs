use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{visible_objects, Detector};
use crate::error::{Error, Result};
use crate::model::{Detection, Frame, GroundTruthLabel};
use crate::tiler::TileRecord;

/// Prediction-grid simulator settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSimConfig {
    /// Network downsampling factor; one grid cell spans this many pixels.
    pub downsample: usize,
    /// Boxes each cell can emit.
    pub boxes_per_cell: usize,
}

impl Default for GridSimConfig {
    fn default() -> Self {
        Self { downsample: 32, boxes_per_cell: 5 }
    }
}

impl GridSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample == 0 || self.boxes_per_cell == 0 {
            return Err(Error::InvalidConfig("gridsim downsample and boxes_per_cell must be >= 1".into()));
        }
        Ok(())
    }
}

fn gridsim_filtered(
    tile: &TileRecord,
    gt: &[GroundTruthLabel],
    cfg: &GridSimConfig,
    classes: Option<&[usize]>,
) -> Vec<Detection> {
    let d = cfg.downsample.max(1) as f64;
    let mut cells: BTreeMap<(usize, usize), Vec<_>> = BTreeMap::new();
    for obj in visible_objects(tile, gt, classes) {
        let (cx, cy) = obj.local.center();
        let cell = ((cy / d).floor() as usize, (cx / d).floor() as usize);
        cells.entry(cell).or_default().push(obj);
    }
    let frame = Frame::TileLocal(tile.id());
    let mut out = Vec::new();
    for objs in cells.values_mut() {
        // largest first, then top-most, then left-most centroid
        objs.sort_by(|a, b| {
            let (ax, ay) = a.local.center();
            let (bx, by) = b.local.center();
            b.local
                .area()
                .total_cmp(&a.local.area())
                .then(ay.total_cmp(&by))
                .then(ax.total_cmp(&bx))
                .then(a.index.cmp(&b.index))
        });
        out.extend(
            objs.iter()
                .take(cfg.boxes_per_cell)
                .map(|o| Detection::new(o.class_id, o.local, o.visible_frac, frame)),
        );
    }
    out
}

/// Emits true boxes, but each grid cell holds at most `boxes_per_cell`
/// objects (by centroid); the rest are lost.
pub fn gridsim_detect(tile: &TileRecord, gt: &[GroundTruthLabel], cfg: &GridSimConfig) -> Vec<Detection> {
    gridsim_filtered(tile, gt, cfg, None)
}

#[derive(Clone, Debug)]
pub struct GridSimDetector {
    gt: Arc<[GroundTruthLabel]>,
    cfg: GridSimConfig,
    classes: Option<Vec<usize>>,
}

impl GridSimDetector {
    pub fn new(gt: Arc<[GroundTruthLabel]>, cfg: GridSimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { gt, cfg, classes: None })
    }

    pub fn with_classes(mut self, classes: Vec<usize>) -> Self {
        self.classes = Some(classes);
        self
    }
}

impl Detector for GridSimDetector {
    fn id(&self) -> &str {
        "gridsim"
    }

    fn detect(&self, tile: &TileRecord) -> Result<Vec<Detection>> {
        Ok(gridsim_filtered(tile, &self.gt, &self.cfg, self.classes.as_deref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::grid_dims;
    use crate::model::{BoundingBox, RasterImage};
    use crate::tiler::{extract_tiles, TileSpec};

    fn tile() -> TileRecord {
        let img = RasterImage::filled("g", 416, 416, 1, 0, 0.3).unwrap();
        extract_tiles(&img, &TileSpec::default()).unwrap().remove(0)
    }

    fn car(cx: f64, cy: f64) -> GroundTruthLabel {
        GroundTruthLabel { class_id: 2, bbox: BoundingBox::new(cx - 2., cy - 2., cx + 2., cy + 2.).unwrap() }
    }

    #[test]
    fn empty_tile() {
        assert!(gridsim_detect(&tile(), &[], &GridSimConfig::default()).is_empty());
    }

    #[test]
    fn coarse_cell_drops_sixth_car() {
        // six centroids inside cell (0,0) of a 32 px grid; at 16 px they
        // split three and three across cells (0,0) and (0,1)
        let cars: Vec<_> = [4., 8., 12., 20., 24., 28.].iter().map(|&x| car(x, 8.)).collect();
        let coarse = GridSimConfig { downsample: 32, boxes_per_cell: 5 };
        let fine = GridSimConfig { downsample: 16, boxes_per_cell: 5 };
        assert_eq!(gridsim_detect(&tile(), &cars, &coarse).len(), 5);
        assert_eq!(gridsim_detect(&tile(), &cars, &fine).len(), 6);
    }

    #[test]
    fn capacity_keeps_largest_then_topmost() {
        let mut gt = vec![car(5., 5.), car(10., 10.)];
        gt.push(GroundTruthLabel { class_id: 2, bbox: BoundingBox::new(14., 14., 20., 20.).unwrap() });
        let cfg = GridSimConfig { downsample: 32, boxes_per_cell: 2 };
        let out = gridsim_detect(&tile(), &gt, &cfg);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].bbox, gt[2].bbox);
        assert_eq!(out[1].bbox, gt[0].bbox);
    }

    #[test]
    fn count_bounded_by_grid_capacity() {
        let gt: Vec<_> = (0..2000).map(|i| car((i * 7 % 410) as f64 + 3., (i * 13 % 410) as f64 + 3.)).collect();
        for d in [8, 16, 32, 64] {
            let cfg = GridSimConfig { downsample: d, boxes_per_cell: 1 };
            let (gw, gh) = grid_dims(416, d);
            let n = gridsim_detect(&tile(), &gt, &cfg).len();
            assert!(n <= gw * gh && n <= gt.len());
        }
    }
}

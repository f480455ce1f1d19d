//! Deterministic synthetic scenes with known ground truth.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detectors::mix_seed;
use crate::error::{Error, Result};
use crate::model::{iou, BoundingBox, ClassTable, GroundTruthLabel, RasterImage};
use crate::tiler::validate_parent_name;

const MAX_ATTEMPTS: usize = 2000;
const HASH_CELL: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: String,
    pub count: usize,
    /// Object side in metres.
    pub size_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub name: String,
    pub gsd_m: f64,
    pub width_px: Option<usize>,
    pub height_px: Option<usize>,
    /// Square scene side in metres; used when pixel sizes are absent.
    pub extent_m: Option<f64>,
    pub seed: u64,
    pub bands: usize,
    /// Largest IoU allowed between two placed objects.
    pub max_overlap: f64,
    pub objects: Vec<ObjectSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            gsd_m: 0.3,
            width_px: None,
            height_px: None,
            extent_m: None,
            seed: 0,
            bands: 3,
            max_overlap: 0.0,
            objects: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn dims(&self) -> Result<(usize, usize)> {
        if !(self.gsd_m.is_finite() && self.gsd_m > 0.0) {
            return Err(Error::InvalidConfig(format!("gsd_m {} must be positive", self.gsd_m)));
        }
        let from_extent = self.extent_m.map(|e| (e / self.gsd_m).round() as usize);
        let w = self.width_px.or(from_extent);
        let h = self.height_px.or(from_extent).or(w);
        match (w, h) {
            (Some(w), Some(h)) if w > 0 && h > 0 => Ok((w, h)),
            _ => Err(Error::InvalidConfig("scene needs width_px/height_px or extent_m".into())),
        }
    }
}

/// Axis-aligned square side in whole pixels.
fn side_px(size_m: f64, gsd: f64) -> Result<usize> {
    let s = (size_m / gsd).round();
    if !(s >= 1.0) {
        return Err(Error::InvalidConfig(format!("{size_m} m objects are under one pixel at {gsd} m/px")));
    }
    Ok(s as usize)
}

fn class_colour(class_id: usize, bands: usize) -> Vec<u8> {
    const PALETTE: [[u8; 3]; 6] =
        [[230, 230, 240], [40, 90, 200], [220, 60, 50], [150, 150, 150], [60, 190, 80], [240, 200, 40]];
    let c = PALETTE[class_id % PALETTE.len()];
    if bands == 1 {
        vec![(c[0] as u16 + c[1] as u16 + c[2] as u16).div_euclid(3) as u8]
    } else {
        c.to_vec()
    }
}

struct Occupancy {
    cells: HashMap<(i64, i64), Vec<usize>>,
    boxes: Vec<BoundingBox>,
}

impl Occupancy {
    fn cell_range(b: &BoundingBox) -> (i64, i64, i64, i64) {
        (
            (b.xmin / HASH_CELL).floor() as i64,
            (b.ymin / HASH_CELL).floor() as i64,
            (b.xmax / HASH_CELL).floor() as i64,
            (b.ymax / HASH_CELL).floor() as i64,
        )
    }

    fn fits(&self, b: &BoundingBox, max_overlap: f64) -> bool {
        let (x0, y0, x1, y1) = Self::cell_range(b);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                if let Some(ids) = self.cells.get(&(cx, cy)) {
                    if ids.iter().any(|&i| {
                        let o = iou(&self.boxes[i], b);
                        if max_overlap == 0.0 { o > 0.0 } else { o > max_overlap }
                    }) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, b: BoundingBox) {
        let id = self.boxes.len();
        let (x0, y0, x1, y1) = Self::cell_range(&b);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                self.cells.entry((cx, cy)).or_default().push(id);
            }
        }
        self.boxes.push(b);
    }
}

/// Renders the scene: a hashed texture background with one solid square per
/// object. Objects are placed at whole-pixel offsets so every label is exact.
pub fn generate_scene(spec: &SceneSpec, classes: &ClassTable) -> Result<(RasterImage, Vec<GroundTruthLabel>)> {
    validate_parent_name(&spec.name)?;
    if spec.bands != 1 && spec.bands != 3 {
        return Err(Error::BandCount(spec.bands, 3));
    }
    if !(0.0..1.0).contains(&spec.max_overlap) {
        return Err(Error::InvalidConfig(format!("max_overlap {} must lie in [0, 1)", spec.max_overlap)));
    }
    let (w, h) = spec.dims()?;

    let mut pixels = vec![0u8; w * h * spec.bands];
    for y in 0..h {
        for x in 0..w {
            let n = mix_seed(&[spec.seed, (x / 4) as u64, (y / 4) as u64]);
            for b in 0..spec.bands {
                pixels[(y * w + x) * spec.bands + b] = 50 + ((n >> (8 * b)) % 30) as u8;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occ = Occupancy { cells: HashMap::new(), boxes: Vec::new() };
    let mut labels = Vec::new();
    let requested: usize = spec.objects.iter().map(|o| o.count).sum();
    for obj in &spec.objects {
        let class_id = classes.id_of(&obj.class)?;
        let side = side_px(obj.size_m, spec.gsd_m)?;
        if side > w || side > h {
            return Err(Error::InfeasibleDensity { requested, placed: labels.len() });
        }
        let colour = class_colour(class_id, spec.bands);
        for _ in 0..obj.count {
            let placed = (0..MAX_ATTEMPTS).find_map(|_| {
                let x = rng.random_range(0..=w - side) as f64;
                let y = rng.random_range(0..=h - side) as f64;
                let b = BoundingBox { xmin: x, ymin: y, xmax: x + side as f64, ymax: y + side as f64 };
                occ.fits(&b, spec.max_overlap).then_some(b)
            });
            let Some(b) = placed else {
                return Err(Error::InfeasibleDensity { requested, placed: labels.len() });
            };
            occ.insert(b);
            let (x0, y0) = (b.xmin as usize, b.ymin as usize);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    let at = (y * w + x) * spec.bands;
                    pixels[at..at + spec.bands].copy_from_slice(&colour);
                }
            }
            labels.push(GroundTruthLabel { class_id, bbox: b });
        }
    }
    let image = RasterImage::new(spec.name.clone(), w, h, spec.bands, pixels, spec.gsd_m)?;
    Ok((image, labels))
}

//! Training-data preparation: chip cutting, rotation, HSV scaling,
//! resolution degradation and centroid-to-box labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::{area_resample, gaussian_blur, sample_bilinear};
use crate::model::{clamp_box, truncate_to_window, BoundingBox, GroundTruthLabel, RasterImage};
use crate::tiler::{plan_tiles, TileSpec};

/// A training chip and its chip-local labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledChip {
    pub image: RasterImage,
    pub labels: Vec<GroundTruthLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation_angles: Vec<f64>,
    /// Multiplicative ranges for hue, saturation and value.
    pub hue: (f64, f64),
    pub saturation: (f64, f64),
    pub value: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_angles: vec![0.0, 90.0, 180.0, 270.0],
            hue: (0.9, 1.1),
            saturation: (0.7, 1.3),
            value: (0.7, 1.3),
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("hue", self.hue), ("saturation", self.saturation), ("value", self.value)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} range ({lo}, {hi}) must be positive and ordered")));
            }
        }
        if self.rotation_angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("rotation angles must be finite".into()));
        }
        Ok(())
    }
}

/// Exact sine and cosine at multiples of 90 degrees.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    let a = angle.rem_euclid(360.0);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == 180.0 {
        (0.0, -1.0)
    } else if a == 270.0 {
        (-1.0, 0.0)
    } else {
        a.to_radians().sin_cos()
    }
}

/// Rotates a square chip counter-clockwise (as displayed) by `angle` degrees
/// about its centre. Labels become the axis-aligned hull of their rotated
/// corners, clamped to the chip; boxes clamped to zero area are dropped.
pub fn rotate_chip(chip: &LabeledChip, angle: f64) -> Result<LabeledChip> {
    let img = &chip.image;
    let (w, h) = (img.width(), img.height());
    if w != h {
        return Err(Error::NonSquareChip(w, h));
    }
    let (sin, cos) = sin_cos_deg(angle);
    if sin == 0.0 && cos == 1.0 {
        return Ok(chip.clone());
    }
    let c = w as f64 / 2.0;
    let size = w as f64;

    let bands = img.bands();
    let mut out = RasterImage::filled(img.name(), w, h, bands, 0, img.gsd())?;
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - c;
            let dy = y as f64 + 0.5 - c;
            let sx = c + dx * cos - dy * sin;
            let sy = c + dx * sin + dy * cos;
            for b in 0..bands {
                if let Some(v) = sample_bilinear(img, sx, sy, b) {
                    out.set(x, y, b, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }

    let forward = |x: f64, y: f64| {
        let dx = x - c;
        let dy = y - c;
        (c + dx * cos + dy * sin, c - dx * sin + dy * cos)
    };
    let labels = chip
        .labels
        .iter()
        .filter_map(|l| {
            let b = &l.bbox;
            let corners = [
                forward(b.xmin, b.ymin),
                forward(b.xmax, b.ymin),
                forward(b.xmin, b.ymax),
                forward(b.xmax, b.ymax),
            ];
            let xs = corners.iter().map(|p| p.0);
            let ys = corners.iter().map(|p| p.1);
            let hull = BoundingBox {
                xmin: xs.clone().fold(f64::INFINITY, f64::min),
                xmax: xs.fold(f64::NEG_INFINITY, f64::max),
                ymin: ys.clone().fold(f64::INFINITY, f64::min),
                ymax: ys.fold(f64::NEG_INFINITY, f64::max),
            };
            let clamped = clamp_box(&hull, size, size);
            (clamped.area() > 0.0).then_some(GroundTruthLabel { class_id: l.class_id, bbox: clamped })
        })
        .collect();
    Ok(LabeledChip { image: out, labels })
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Scales hue, saturation and value by seeded factors drawn from the configured
/// ranges. Hue wraps around the colour circle; saturation and value clamp.
pub fn hsv_jitter(image: &RasterImage, spec: &AugmentSpec) -> Result<RasterImage> {
    if image.bands() != 3 {
        return Err(Error::BandCount(image.bands(), 3));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let (fh, fs, fv) = (draw(spec.hue), draw(spec.saturation), draw(spec.value));

    let mut out = image.clone();
    for px in out.pixels_mut().chunks_exact_mut(3) {
        let (h, s, v) = rgb_to_hsv(px[0] as f64 / 255.0, px[1] as f64 / 255.0, px[2] as f64 / 255.0);
        let (r, g, b) = hsv_to_rgb((h * fh).rem_euclid(360.0), (s * fs).clamp(0.0, 1.0), (v * fv).clamp(0.0, 1.0));
        for (dst, val) in px.iter_mut().zip([r, g, b]) {
            *dst = (val * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

pub const DEFAULT_DEGRADE_SIGMA: f64 = 1.0;

/// Gaussian blur followed by 2x area decimation; gsd doubles and each
/// dimension is floor-halved.
pub fn degrade_resolution(image: &RasterImage, sigma: f64) -> Result<RasterImage> {
    let (w, h) = (image.width(), image.height());
    if w < 2 || h < 2 {
        return Err(Error::ImageTooSmall(format!("{w}x{h} cannot be halved")));
    }
    let blurred = gaussian_blur(image, sigma)?;
    let (nw, nh) = (w / 2, h / 2);
    let even = if w % 2 == 0 && h % 2 == 0 {
        blurred
    } else {
        RasterImage::new(image.name(), nw * 2, nh * 2, image.bands(), blurred.crop(0, 0, nh * 2, nw * 2), image.gsd())?
    };
    let out = area_resample(&even, nw, nh)?;
    RasterImage::new(image.name(), nw, nh, image.bands(), out.into_pixels(), image.gsd() * 2.0)
}

/// Square box of side `object_m / gsd` pixels centred on the point.
pub fn centroid_to_box(cx: f64, cy: f64, object_m: f64, gsd: f64) -> BoundingBox {
    let half = object_m / gsd / 2.0;
    BoundingBox { xmin: cx - half, ymin: cy - half, xmax: cx + half, ymax: cy + half }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChipOptions {
    pub overlap_frac: f64,
    /// Fraction of label-free chips to keep.
    pub empty_fraction: f64,
    pub seed: u64,
}

impl Default for ChipOptions {
    fn default() -> Self {
        Self { overlap_frac: 0.0, empty_fraction: 0.0, seed: 0 }
    }
}

/// Pixel side of a chip covering `chip_window_m` at `gsd`, rounded.
pub fn chip_window_px(chip_window_m: f64, gsd: f64) -> Result<usize> {
    let px = (chip_window_m / gsd).round();
    if !(px >= 1.0) {
        return Err(Error::InvalidTileSpec(format!("{chip_window_m} m at {gsd} m/px is under one pixel")));
    }
    Ok(px as usize)
}

/// Cuts a labelled image into training chips. A label goes to a chip when
/// more than half its area lies inside; it is clipped to the chip.
pub fn cut_training_chips(
    image: &RasterImage,
    labels: &[GroundTruthLabel],
    chip_window_m: f64,
    opts: &ChipOptions,
) -> Result<Vec<LabeledChip>> {
    let window = chip_window_px(chip_window_m, image.gsd())?;
    let spec = TileSpec::new(window, opts.overlap_frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut chips = Vec::new();
    for (row, col) in plan_tiles(image.width(), image.height(), &spec)? {
        let h = window.min(image.height());
        let w = window.min(image.width());
        let rect = BoundingBox { xmin: col as f64, ymin: row as f64, xmax: (col + w) as f64, ymax: (row + h) as f64 };
        let chip_labels: Vec<GroundTruthLabel> = labels
            .iter()
            .filter_map(|l| {
                truncate_to_window(&l.bbox, &rect).map(|(b, _)| GroundTruthLabel {
                    class_id: l.class_id,
                    bbox: b.translate(-(col as f64), -(row as f64)),
                })
            })
            .collect();
        let keep_empty = rng.random::<f64>() < opts.empty_fraction;
        if chip_labels.is_empty() && !keep_empty {
            continue;
        }
        let name = format!("{}_{}_{}", image.name(), row, col);
        let chip = RasterImage::new(name, w, h, image.bands(), image.crop(row, col, h, w), image.gsd())?;
        chips.push(LabeledChip { image: chip, labels: chip_labels });
    }
    Ok(chips)
}

//! Sliding-window partitioning of large images into overlapping cutouts.
//!
//! Cutouts are named `parent|row_col_height_width.ext`, so the global offset
//! of every tile survives a round trip through the filesystem.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, RasterImage, TileId};
use crate::par;

pub const DEFAULT_WINDOW: usize = 416;
pub const DEFAULT_OVERLAP: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    /// Side of the square window in pixels.
    pub window: usize,
    /// Fraction of the window shared by neighbouring cutouts.
    pub overlap_frac: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, overlap_frac: DEFAULT_OVERLAP }
    }
}

impl TileSpec {
    pub fn new(window: usize, overlap_frac: f64) -> Result<Self> {
        let spec = Self { window, overlap_frac };
        spec.stride()?;
        Ok(spec)
    }

    /// `floor(window * (1 - overlap))`.
    pub fn stride(&self) -> Result<usize> {
        if self.window == 0 {
            return Err(Error::InvalidTileSpec("window must be at least 1 px".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_frac) {
            return Err(Error::InvalidTileSpec(format!(
                "overlap {} outside [0, 1)",
                self.overlap_frac
            )));
        }
        let stride = (self.window as f64 * (1.0 - self.overlap_frac)).floor() as usize;
        if stride == 0 {
            return Err(Error::InvalidTileSpec(format!(
                "overlap {} leaves a zero stride for a {} px window",
                self.overlap_frac, self.window
            )));
        }
        Ok(stride)
    }
}

/// Tile offsets along one axis of length `extent`.
pub fn axis_offsets(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let last = extent - window;
    let mut offsets = Vec::with_capacity(last / stride + 2);
    let mut off = 0;
    while off < last {
        offsets.push(off);
        off += stride;
    }
    offsets.push(last);
    offsets
}

/// Row-major list of `(row, col)` tile offsets covering the image.
pub fn plan_tiles(image_w: usize, image_h: usize, spec: &TileSpec) -> Result<Vec<(usize, usize)>> {
    if image_w == 0 || image_h == 0 {
        return Err(Error::InvalidTileSpec(format!("empty image {image_w}x{image_h}")));
    }
    let stride = spec.stride()?;
    let rows = axis_offsets(image_h, spec.window, stride);
    let cols = axis_offsets(image_w, spec.window, stride);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Number of tiles `plan_tiles` would emit, without materializing them.
pub fn tile_count(image_w: usize, image_h: usize, spec: &TileSpec) -> Result<usize> {
    let stride = spec.stride()?;
    Ok(axis_offsets(image_h, spec.window, stride).len() * axis_offsets(image_w, spec.window, stride).len())
}

/// Fields of a cutout file name.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CutoutName {
    pub parent: String,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub ext: String,
}

const FORBIDDEN_IN_PARENT: [char; 6] = ['|', ',', '\t', '\n', '\r', '/'];

pub fn validate_parent_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidParentName { name: name.into(), reason: "empty" });
    }
    if name.contains(FORBIDDEN_IN_PARENT) {
        return Err(Error::InvalidParentName {
            name: name.into(),
            reason: "contains one of '|' ',' '/' or whitespace control characters",
        });
    }
    Ok(())
}

pub fn cutout_name(parent: &str, row: usize, col: usize, h: usize, w: usize, ext: &str) -> Result<String> {
    validate_parent_name(parent)?;
    if ext.is_empty() || ext.contains(FORBIDDEN_IN_PARENT) {
        return Err(Error::InvalidParentName { name: ext.into(), reason: "invalid extension" });
    }
    Ok(format!("{parent}|{row}_{col}_{h}_{w}.{ext}"))
}

impl CutoutName {
    pub fn new(parent: &str, row: usize, col: usize, height: usize, width: usize, ext: &str) -> Self {
        Self { parent: parent.into(), row, col, height, width, ext: ext.into() }
    }

    pub fn to_name(&self) -> Result<String> {
        cutout_name(&self.parent, self.row, self.col, self.height, self.width, &self.ext)
    }
}

pub fn parse_cutout_name(name: &str) -> Result<CutoutName> {
    let bad = |field| Error::MalformedCutoutName { name: name.to_string(), field };
    let (parent, rest) = name.split_once('|').ok_or_else(|| bad("delimiter '|'"))?;
    if parent.is_empty() || parent.contains(FORBIDDEN_IN_PARENT) {
        return Err(bad("parent"));
    }
    let (numbers, ext) = rest.split_once('.').ok_or_else(|| bad("extension"))?;
    if ext.is_empty() || ext.contains(FORBIDDEN_IN_PARENT) {
        return Err(bad("extension"));
    }
    let mut fields = numbers.split('_');
    let mut next = |field: &'static str| -> Result<usize> {
        let s = fields.next().ok_or_else(|| bad(field))?;
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad(field));
        }
        s.parse().map_err(|_| bad(field))
    };
    let row = next("row")?;
    let col = next("col")?;
    let height = next("height")?;
    let width = next("width")?;
    if fields.next().is_some() {
        return Err(bad("trailing fields"));
    }
    Ok(CutoutName { parent: parent.into(), row, col, height, width, ext: ext.into() })
}

/// Where a cutout sits in its parent and how its pixels relate to native pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePlacement {
    pub parent_name: String,
    /// Offset of the top edge in parent pixels.
    pub row: usize,
    /// Offset of the left edge in parent pixels.
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub parent_width: usize,
    pub parent_height: usize,
    /// Detector pixels per parent pixel (2 for the upsampled 2x path).
    pub pixel_scale: f64,
    /// Native-image pixels per parent pixel along x and y, for resampled parents.
    pub native_scale: (f64, f64),
}

impl TilePlacement {
    pub fn id(&self) -> TileId {
        TileId { row: self.row, col: self.col }
    }

    /// Tile rectangle in parent pixels.
    pub fn rect(&self) -> BoundingBox {
        BoundingBox {
            xmin: self.col as f64,
            ymin: self.row as f64,
            xmax: (self.col + self.width) as f64,
            ymax: (self.row + self.height) as f64,
        }
    }

    /// Extent of the pixel buffer handed to the detector.
    pub fn detector_dims(&self) -> (usize, usize) {
        (
            (self.width as f64 * self.pixel_scale).round() as usize,
            (self.height as f64 * self.pixel_scale).round() as usize,
        )
    }

    pub fn cutout_name(&self, ext: &str) -> Result<String> {
        cutout_name(&self.parent_name, self.row, self.col, self.height, self.width, ext)
    }

    /// Maps a box in native global pixels into this tile's detector pixels.
    pub fn native_to_detector(&self, b: &BoundingBox) -> BoundingBox {
        b.scale(1.0 / self.native_scale.0, 1.0 / self.native_scale.1)
            .translate(-(self.col as f64), -(self.row as f64))
            .scale(self.pixel_scale, self.pixel_scale)
    }

    /// Window of this tile expressed in native global pixels.
    pub fn native_rect(&self) -> BoundingBox {
        self.rect().scale(self.native_scale.0, self.native_scale.1)
    }
}

/// One cutout and its pixel buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct TileRecord {
    pub placement: TilePlacement,
    pub bands: usize,
    /// Row-major buffer of `detector_dims()` pixels.
    pub pixels: Vec<u8>,
}

impl TileRecord {
    pub fn id(&self) -> TileId {
        self.placement.id()
    }

    /// The cutout as a standalone image.
    pub fn to_image(&self, gsd: f64) -> Result<RasterImage> {
        let (w, h) = self.placement.detector_dims();
        let name = self.placement.cutout_name("png")?;
        RasterImage::new(name, w, h, self.bands, self.pixels.clone(), gsd / self.placement.pixel_scale)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> TileRecord {
        let (w, h) = self.placement.detector_dims();
        let bands = self.bands;
        let (nw, nh) = (w * factor, h * factor);
        let mut out = vec![0u8; nw * nh * bands];
        for y in 0..nh {
            let sy = y / factor;
            for x in 0..nw {
                let sx = x / factor;
                let src = (sy * w + sx) * bands;
                let dst = (y * nw + x) * bands;
                out[dst..dst + bands].copy_from_slice(&self.pixels[src..src + bands]);
            }
        }
        let mut placement = self.placement.clone();
        placement.pixel_scale *= factor as f64;
        TileRecord { placement, bands, pixels: out }
    }
}

pub(crate) fn placement_for(image: &RasterImage, row: usize, col: usize, window: usize) -> TilePlacement {
    TilePlacement {
        parent_name: image.name().to_string(),
        row,
        col,
        height: window.min(image.height()),
        width: window.min(image.width()),
        parent_width: image.width(),
        parent_height: image.height(),
        pixel_scale: 1.0,
        native_scale: (1.0, 1.0),
    }
}

/// Cuts every planned tile out of `image`, in row-major offset order.
pub fn extract_tiles(image: &RasterImage, spec: &TileSpec) -> Result<Vec<TileRecord>> {
    validate_parent_name(image.name())?;
    let offsets = plan_tiles(image.width(), image.height(), spec)?;
    Ok(par::map_ordered(&offsets, |&(row, col)| {
        let placement = placement_for(image, row, col, spec.window);
        let pixels = image.crop(row, col, placement.height, placement.width);
        TileRecord { placement, bands: image.bands(), pixels }
    }))
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub cutout_name: String,
    pub parent_name: String,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

pub fn manifest_entry(tile: &TileRecord, ext: &str) -> Result<ManifestEntry> {
    let p = &tile.placement;
    Ok(ManifestEntry {
        cutout_name: p.cutout_name(ext)?,
        parent_name: p.parent_name.clone(),
        row: p.row,
        col: p.col,
        height: p.height,
        width: p.width,
    })
}

/// Tab-separated manifest text, one line per cutout.
pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.cutout_name, e.parent_name, e.row, e.col, e.height, e.width
        );
    }
    out
}

pub fn parse_manifest(text: &str, source: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(source, lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(source, lineno, format!("bad {what} {s:?}")))
        };
        let entry = ManifestEntry {
            cutout_name: fields[0].to_string(),
            parent_name: fields[1].to_string(),
            row: num(fields[2], "row")?,
            col: num(fields[3], "col")?,
            height: num(fields[4], "height")?,
            width: num(fields[5], "width")?,
        };
        let parsed = parse_cutout_name(&entry.cutout_name)?;
        if parsed.parent != entry.parent_name
            || (parsed.row, parsed.col, parsed.height, parsed.width)
                != (entry.row, entry.col, entry.height, entry.width)
        {
            return Err(Error::parse(source, lineno, "cutout name disagrees with manifest fields"));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Rebuilds tile placements from a manifest. Parent extents are recovered
/// from the tiles themselves, which cover their parent completely.
pub fn placements_from_manifest(entries: &[ManifestEntry]) -> Vec<TilePlacement> {
    let mut extents: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in entries {
        let ext = extents.entry(&e.parent_name).or_default();
        ext.0 = ext.0.max(e.col + e.width);
        ext.1 = ext.1.max(e.row + e.height);
    }
    entries
        .iter()
        .map(|e| {
            let (pw, ph) = extents[e.parent_name.as_str()];
            TilePlacement {
                parent_name: e.parent_name.clone(),
                row: e.row,
                col: e.col,
                height: e.height,
                width: e.width,
                parent_width: pw,
                parent_height: ph,
                pixel_scale: 1.0,
                native_scale: (1.0, 1.0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(extent: usize) -> Vec<usize> {
        axis_offsets(extent, 416, TileSpec::default().stride().unwrap())
    }

    #[test]
    fn default_stride() {
        assert_eq!(TileSpec::default().stride().unwrap(), 353);
    }

    #[test]
    fn plan_examples() {
        let spec = TileSpec::default();
        assert_eq!(plan_tiles(416, 416, &spec).unwrap(), vec![(0, 0)]);
        assert_eq!(axis(1000), vec![0, 353, 584]);
        assert_eq!(plan_tiles(1000, 1000, &spec).unwrap().len(), 9);
        assert_eq!(plan_tiles(500, 416, &spec).unwrap(), vec![(0, 0), (0, 84)]);
        assert_eq!(tile_count(1000, 1000, &spec).unwrap(), 9);
    }

    #[test]
    fn small_images_get_one_tile() {
        assert_eq!(plan_tiles(50, 30, &TileSpec::default()).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(TileSpec::new(4, 0.9).is_err());
        assert!(TileSpec::new(416, 1.0).is_err());
        assert!(TileSpec::new(0, 0.1).is_err());
        assert!(TileSpec::new(416, 0.99).is_ok());
    }

    #[test]
    fn name_examples() {
        assert_eq!(
            cutout_name("panama50cm", 1370, 1180, 416, 416, "tif").unwrap(),
            "panama50cm|1370_1180_416_416.tif"
        );
        assert_eq!(cutout_name("a", 0, 0, 1, 1, "png").unwrap(), "a|0_0_1_1.png");
        assert_eq!(
            parse_cutout_name("panama50cm|1370_1180_416_416.tif").unwrap(),
            CutoutName::new("panama50cm", 1370, 1180, 416, 416, "tif")
        );
        assert_eq!(parse_cutout_name("a|0_0_1_1.png").unwrap(), CutoutName::new("a", 0, 0, 1, 1, "png"));
    }

    #[test]
    fn malformed_names() {
        let field = |n: &str| match parse_cutout_name(n) {
            Err(Error::MalformedCutoutName { field, .. }) => field,
            other => panic!("expected malformed-name error, got {other:?}"),
        };
        assert_eq!(field("nodelimiter.png"), "delimiter '|'");
        assert_eq!(field("a|0_0_1.png"), "width");
        assert_eq!(field("a|0_x_1_1.png"), "col");
        assert_eq!(field("a|0_0_1_1_5.png"), "trailing fields");
        assert_eq!(field("a|0_0_1_1"), "extension");
        assert_eq!(field("|0_0_1_1.png"), "parent");
        assert_eq!(field("a|-1_0_1_1.png"), "row");
        assert!(cutout_name("a|b", 0, 0, 1, 1, "png").is_err());
        assert!(cutout_name("a,b", 0, 0, 1, 1, "png").is_err());
    }

    #[test]
    fn underscores_in_parent_are_unambiguous() {
        let n = cutout_name("scene_01_2", 5, 6, 7, 8, "png").unwrap();
        assert_eq!(parse_cutout_name(&n).unwrap(), CutoutName::new("scene_01_2", 5, 6, 7, 8, "png"));
    }

    #[test]
    fn extract_copies_regions() {
        let w = 7;
        let h = 5;
        let px: Vec<u8> = (0..(w * h) as u8).collect();
        let img = RasterImage::new("img", w, h, 1, px, 1.0).unwrap();
        let tiles = extract_tiles(&img, &TileSpec::new(4, 0.25).unwrap()).unwrap();
        // stride 3: cols {0, 3}, rows {0, 1}
        let ids: Vec<_> = tiles.iter().map(|t| (t.placement.row, t.placement.col)).collect();
        assert_eq!(ids, vec![(0, 0), (0, 3), (1, 0), (1, 3)]);
        let t = &tiles[3];
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(t.pixels[y * 4 + x], img.get(x + 3, y + 1, 0));
            }
        }
    }

    #[test]
    fn manifest_round_trip() {
        let img = RasterImage::filled("scene", 1000, 500, 1, 0, 0.3).unwrap();
        let tiles = extract_tiles(&img, &TileSpec::default()).unwrap();
        let entries: Vec<_> = tiles.iter().map(|t| manifest_entry(t, "png").unwrap()).collect();
        let text = format_manifest(&entries);
        assert_eq!(text.lines().count(), tiles.len());
        let parsed = parse_manifest(&text, "m.tsv").unwrap();
        assert_eq!(parsed, entries);
        let placements = placements_from_manifest(&parsed);
        for (p, t) in placements.iter().zip(&tiles) {
            assert_eq!(p, &t.placement);
        }
    }

    #[test]
    fn manifest_rejects_inconsistent_rows() {
        let err = parse_manifest("a|0_0_4_4.png\ta\t0\t1\t4\t4\n", "m.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_manifest("\nonly\tthree\tfields\n", "m.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn upsample_doubles_pixels() {
        let img = RasterImage::new("u", 2, 2, 1, vec![1, 2, 3, 4], 1.0).unwrap();
        let tile = &extract_tiles(&img, &TileSpec::new(2, 0.0).unwrap()).unwrap()[0];
        let up = tile.upsample(2);
        assert_eq!(up.placement.detector_dims(), (4, 4));
        assert_eq!(up.pixels, vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
    }
}

//! PNG rasters with a JSON sidecar carrying the name and ground sample
//! distance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RasterImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub name: String,
    pub gsd_m: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), source }
}

pub fn write_png(path: &Path, width: usize, height: usize, bands: usize, pixels: &[u8]) -> Result<()> {
    let color = match bands {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => return Err(Error::BandCount(n, 3)),
    };
    image::save_buffer_with_format(path, pixels, width as u32, height as u32, color, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Decodes a PNG into (width, height, bands, pixels). Grayscale stays one
/// band; everything else is converted to RGB.
pub fn read_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() <= 2 && !img.color().has_color() {
        Ok((w, h, 1, img.into_luma8().into_raw()))
    } else {
        Ok((w, h, 3, img.into_rgb8().into_raw()))
    }
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingGsd(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::parse(side.display().to_string(), e.line(), e.to_string()))?;
    if !(s.gsd_m.is_finite() && s.gsd_m > 0.0) {
        return Err(Error::parse(side.display().to_string(), 1, format!("gsd_m {} must be positive", s.gsd_m)));
    }
    Ok(s)
}

pub fn read_raster(path: &Path) -> Result<RasterImage> {
    let side = read_sidecar(path)?;
    let (w, h, bands, pixels) = read_png(path)?;
    RasterImage::new(side.name, w, h, bands, pixels, side.gsd_m)
}

pub fn write_raster(image: &RasterImage, path: &Path) -> Result<()> {
    write_png(path, image.width(), image.height(), image.bands(), image.pixels())?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&Sidecar { name: image.name().to_string(), gsd_m: image.gsd() })
        .expect("sidecar serializes");
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rgb_and_gray() {
        let dir = tempfile::tempdir().unwrap();
        for bands in [1, 3] {
            let px: Vec<u8> = (0..7 * 5 * bands).map(|i| (i * 13 % 256) as u8).collect();
            let img = RasterImage::new("scene_a", 7, 5, bands, px, 0.3).unwrap();
            let p = dir.path().join(format!("s{bands}.png"));
            write_raster(&img, &p).unwrap();
            assert_eq!(read_raster(&p).unwrap(), img);
        }
    }

    #[test]
    fn missing_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        write_png(&p, 2, 2, 1, &[0, 1, 2, 3]).unwrap();
        assert!(matches!(read_raster(&p), Err(Error::MissingGsd(_))));
    }
}

//! Resampling and filtering on `RasterImage`, computed in f64 and rounded once.

use crate::error::{Error, Result};
use crate::model::RasterImage;

/// Source pixels and weights contributing to each output pixel when an axis
/// of length `src` is area-averaged down (or up) to length `dst`.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let lo = j as f64 * scale;
            let hi = (j + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut w: Vec<(usize, f64)> = (first..last)
                .map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (i, overlap)
                })
                .filter(|&(_, o)| o > 0.0)
                .collect();
            let total: f64 = w.iter().map(|&(_, o)| o).sum();
            for e in &mut w {
                e.1 /= total;
            }
            w
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Separable pass over rows then columns with per-axis tap lists.
fn separable(
    img: &RasterImage,
    new_w: usize,
    new_h: usize,
    xw: &[Vec<(usize, f64)>],
    yw: &[Vec<(usize, f64)>],
) -> Vec<u8> {
    let bands = img.bands();
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let mut tmp = vec![0.0f64; new_w * h * bands];
    for y in 0..h {
        for (x, taps) in xw.iter().enumerate() {
            for b in 0..bands {
                tmp[(y * new_w + x) * bands + b] =
                    taps.iter().map(|&(sx, wt)| src[(y * w + sx) * bands + b] as f64 * wt).sum();
            }
        }
    }
    let mut out = vec![0u8; new_w * new_h * bands];
    for (y, taps) in yw.iter().enumerate() {
        for x in 0..new_w {
            for b in 0..bands {
                let v: f64 = taps.iter().map(|&(sy, wt)| tmp[(sy * new_w + x) * bands + b] * wt).sum();
                out[(y * new_w + x) * bands + b] = to_u8(v);
            }
        }
    }
    out
}

/// Box-filter resampling to `new_w x new_h`; gsd is scaled by the mean
/// axis ratio.
pub fn area_resample(img: &RasterImage, new_w: usize, new_h: usize) -> Result<RasterImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::ImageTooSmall(format!("resample target {new_w}x{new_h}")));
    }
    let xw = area_weights(img.width(), new_w);
    let yw = area_weights(img.height(), new_h);
    let pixels = separable(img, new_w, new_h, &xw, &yw);
    let ratio = (img.width() as f64 / new_w as f64 + img.height() as f64 / new_h as f64) / 2.0;
    RasterImage::new(img.name(), new_w, new_h, img.bands(), pixels, img.gsd() * ratio)
}

fn gaussian_taps(len: usize, sigma: f64) -> Vec<Vec<(usize, f64)>> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    (0..len as isize)
        .map(|i| {
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(kernel.len());
            for (k, &wt) in (-radius..=radius).zip(&kernel) {
                // replicate the border
                let s = (i + k).clamp(0, len as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == s) {
                    Some(t) => t.1 += wt / norm,
                    None => taps.push((s, wt / norm)),
                }
            }
            taps
        })
        .collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("blur sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let xw = gaussian_taps(img.width(), sigma);
    let yw = gaussian_taps(img.height(), sigma);
    let pixels = separable(img, img.width(), img.height(), &xw, &yw);
    RasterImage::new(img.name(), img.width(), img.height(), img.bands(), pixels, img.gsd())
}

/// Bilinear sample at continuous pixel coordinates (pixel centres at i + 0.5);
/// returns `None` outside the image.
pub fn sample_bilinear(img: &RasterImage, x: f64, y: f64, band: usize) -> Option<f64> {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if fx < -0.5 || fy < -0.5 || fx > w - 0.5 || fy > h - 0.5 {
        return None;
    }
    let x0 = fx.floor().clamp(0.0, w - 1.0);
    let y0 = fy.floor().clamp(0.0, h - 1.0);
    let x1 = (x0 + 1.0).min(w - 1.0);
    let y1 = (y0 + 1.0).min(h - 1.0);
    let tx = (fx - x0).clamp(0.0, 1.0);
    let ty = (fy - y0).clamp(0.0, 1.0);
    let p = |xx: f64, yy: f64| img.get(xx as usize, yy as usize, band) as f64;
    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
    let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
    Some(top * (1.0 - ty) + bottom * ty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_blocks() {
        let img = RasterImage::new("a", 4, 2, 1, vec![0, 2, 4, 6, 10, 12, 14, 16], 1.0).unwrap();
        let out = area_resample(&img, 2, 1).unwrap();
        assert_eq!(out.pixels(), &[6, 10]);
        assert_eq!(out.gsd(), 2.0);
    }

    #[test]
    fn fractional_weights_sum_to_one() {
        for (src, dst) in [(10, 3), (7, 7), (5, 2), (416, 10), (3, 5)] {
            for taps in area_weights(src, dst) {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = RasterImage::filled("c", 9, 7, 3, 77, 1.0).unwrap();
        assert_eq!(gaussian_blur(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn bilinear_hits_pixel_centres() {
        let img = RasterImage::new("b", 2, 1, 1, vec![10, 30], 1.0).unwrap();
        assert_eq!(sample_bilinear(&img, 0.5, 0.5, 0), Some(10.0));
        assert_eq!(sample_bilinear(&img, 1.0, 0.5, 0), Some(20.0));
        assert_eq!(sample_bilinear(&img, 3.0, 0.5, 0), None);
    }
}

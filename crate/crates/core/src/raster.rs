//! Small raster helpers shared by synthesis, view transforms and rendering.
//!
//! Continuous pixel coordinates put the center of pixel `(i, j)` at
//! `(i + 0.5, j + 0.5)`.

use image::{Rgb, RgbImage};

pub type Rgbf = [f32; 3];

/// Rec. 601 luma of an RGB triple.
#[inline]
pub fn luma(c: Rgbf) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

#[inline]
pub fn pixel_f32(img: &RgbImage, x: u32, y: u32) -> Rgbf {
    let p = img.get_pixel(x, y).0;
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

#[inline]
pub fn to_u8(c: Rgbf) -> Rgb<u8> {
    Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8))
}

/// Per-channel mean color of an image.
pub fn mean_color(img: &RgbImage) -> Rgbf {
    let n = (img.width() as f64 * img.height() as f64).max(1.0);
    let mut acc = [0f64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            acc[c] += p.0[c] as f64;
        }
    }
    acc.map(|v| (v / n) as f32)
}

/// Bilinear sample at continuous coordinates; points outside the image
/// return `fill`.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64, fill: Rgbf) -> Rgbf {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64) || w == 0 || h == 0 {
        return fill;
    }
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = (fx - x0) as f32;
    let ty = (fy - y0) as f32;
    let cx = |v: f64| v.clamp(0.0, (w - 1) as f64) as u32;
    let cy = |v: f64| v.clamp(0.0, (h - 1) as f64) as u32;
    let (xa, xb, ya, yb) = (cx(x0), cx(x0 + 1.0), cy(y0), cy(y0 + 1.0));
    let p00 = pixel_f32(img, xa, ya);
    let p10 = pixel_f32(img, xb, ya);
    let p01 = pixel_f32(img, xa, yb);
    let p11 = pixel_f32(img, xb, yb);
    let mut out = [0f32; 3];
    for c in 0..3 {
        let top = p00[c] * (1.0 - tx) + p10[c] * tx;
        let bot = p01[c] * (1.0 - tx) + p11[c] * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, Rgb([0, 0, 0]));
        img.put_pixel(1, 0, Rgb([200, 100, 50]));
        assert_eq!(sample_bilinear(&img, 0.5, 0.5, [9.0; 3]), [0.0; 3]);
        assert_eq!(sample_bilinear(&img, 1.5, 0.5, [9.0; 3]), [200.0, 100.0, 50.0]);
        assert_eq!(sample_bilinear(&img, 1.0, 0.5, [9.0; 3]), [100.0, 50.0, 25.0]);
        assert_eq!(sample_bilinear(&img, 2.5, 0.5, [9.0; 3]), [9.0; 3]);
    }

    #[test]
    fn mean_of_two_pixels() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, Rgb([200, 100, 50]));
        assert_eq!(mean_color(&img), [100.0, 50.0, 25.0]);
    }
}

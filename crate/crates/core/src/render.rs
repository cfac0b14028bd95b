//! Box and point overlays for visual inspection.

use image::{Rgb, RgbImage};

use crate::geometry::{Point, RBox};

/// Distinct colors cycled per category index.
pub const PALETTE: [Rgb<u8>; 8] = [
    Rgb([230, 25, 75]),
    Rgb([60, 180, 75]),
    Rgb([255, 225, 25]),
    Rgb([0, 130, 200]),
    Rgb([245, 130, 48]),
    Rgb([145, 30, 180]),
    Rgb([70, 240, 240]),
    Rgb([240, 50, 230]),
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham segment between two continuous points.
pub fn draw_line(img: &mut RgbImage, a: Point, b: Point, c: Rgb<u8>) {
    let (mut x0, mut y0) = (a.x.floor() as i64, a.y.floor() as i64);
    let (x1, y1) = (b.x.floor() as i64, b.y.floor() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Box outline plus a tick from the center to the middle of the first
/// w-edge, which shows the angle.
pub fn draw_rbox(img: &mut RgbImage, b: &RBox, c: Rgb<u8>) {
    let k = b.corners();
    for i in 0..4 {
        draw_line(img, k[i], k[(i + 1) % 4], c);
    }
    let (u, _) = b.axes();
    let tip = Point::new(b.x + u.x * b.w / 2.0, b.y + u.y * b.w / 2.0);
    draw_line(img, b.center(), tip, c);
}

/// Small plus sign.
pub fn draw_point(img: &mut RgbImage, p: Point, c: Rgb<u8>) {
    let (x, y) = (p.x.floor() as i64, p.y.floor() as i64);
    for d in -3..=3 {
        put(img, x + d, y, c);
        put(img, x, y + d, c);
    }
}

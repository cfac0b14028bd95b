//! Synthetic pattern generation and compositing.
//!
//! Basic patterns are grayscale bitmaps with white faces (1) and black
//! edges (0). Around each annotated point a face color and an edge color
//! are sampled from the image; a pattern is recolored with them, randomly
//! flipped, resized and rotated, placed without overlapping other patterns
//! and alpha-blended into the image. Each placed pattern's rotated box is
//! known exactly and becomes a regression target.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb32FImage, Rgba, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rbox_to_hbox, rotated_iou, rotated_nms, ImageSize, Point, RBox};
use crate::raster::{luma, pixel_f32, to_u8, Rgbf};

pub type GrayF32 = ImageBuffer<Luma<f32>, Vec<f32>>;
pub type Rgba32F = ImageBuffer<Rgba<f32>, Vec<f32>>;

/// `(w0, h0)` presets of the rectangle/ellipse set.
pub const SETRC_SIZES: [(u32, u32); 6] = [(160, 160), (160, 80), (160, 40), (80, 80), (80, 40), (80, 20)];
/// Width of the black band along a shape's outline, in pixels.
pub const EDGE_BAND: f64 = 3.0;
pub const CURVE_EXPONENT_RANGE: (f64, f64) = (0.0, 8.0);
pub const CURVE_INNER_RADIUS_RANGE: (f64, f64) = (0.1, 0.6);
/// Opacity floor `t0` and span `t1`: opacity stays within `[t0, t0 + t1]`.
pub const OPACITY_FLOOR: f64 = 0.1;
pub const OPACITY_SPAN: f64 = 0.9;
pub const OPACITY_COEF_RANGE: (f64, f64) = (0.1, 2.0);
/// Smallest synthesized box side, in pixels.
pub const MIN_PATTERN_SIDE: f64 = 8.0;
/// Default upper bound on patterns per image.
pub const MAX_PATTERNS_PER_IMAGE: usize = 30;
pub const FACE_WINDOW: i64 = 5;
pub const EDGE_WINDOW: i64 = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternShape {
    Rectangle,
    Ellipse,
    Sketch,
}

#[derive(Debug, Clone)]
pub struct BasicPattern {
    /// Face (1) / edge (0) intensities in `[0, 1]`.
    pub bitmap: GrayF32,
    /// Shape coverage in `[0, 1]`; zero outside an ellipse.
    pub mask: GrayF32,
    /// Category for sketches, `None` for the shape set.
    pub category: Option<String>,
    pub shape: PatternShape,
}

impl BasicPattern {
    pub fn width(&self) -> u32 {
        self.bitmap.width()
    }

    pub fn height(&self) -> u32 {
        self.bitmap.height()
    }

    /// Wraps a face/edge bitmap covering its whole extent.
    pub fn from_bitmap(bitmap: GrayF32, category: Option<String>) -> Result<Self> {
        if bitmap.width() == 0 || bitmap.height() == 0 {
            return Err(Error::Config("pattern bitmap is empty".into()));
        }
        let mut bitmap = bitmap;
        for p in bitmap.pixels_mut() {
            p.0[0] = p.0[0].clamp(0.0, 1.0);
        }
        let mask = GrayF32::from_pixel(bitmap.width(), bitmap.height(), Luma([1.0]));
        Ok(Self {
            bitmap,
            mask,
            category,
            shape: PatternShape::Sketch,
        })
    }
}

/// Curve texture overlaid on a shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveSpec {
    /// `count` equally spaced lines parallel to the w-edge (or the h-edge).
    ParallelLines { count: u32, along_width: bool },
    /// `rho = (1 - k) |cos(2 phi)|^n + k`, with `rho = 1` on the inscribed ellipse.
    Polar { n: f64, k: f64 },
}

impl CurveSpec {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            CurveSpec::ParallelLines {
                count: rng.random_range(1..=4),
                along_width: rng.random_bool(0.5),
            }
        } else {
            CurveSpec::Polar {
                n: rng.random_range(CURVE_EXPONENT_RANGE.0..=CURVE_EXPONENT_RANGE.1),
                k: rng.random_range(CURVE_INNER_RADIUS_RANGE.0..=CURVE_INNER_RADIUS_RANGE.1),
            }
        }
    }
}

/// Radius of the polar texture curve at angle `phi`.
pub fn polar_radius(phi: f64, n: f64, k: f64) -> f64 {
    (1.0 - k) * (2.0 * phi).cos().abs().powf(n) + k
}

fn stroke_width(w0: u32, h0: u32) -> f64 {
    (0.02 * w0.min(h0) as f64).max(2.0)
}

/// White shape with a black outline band of [`EDGE_BAND`] pixels.
pub fn render_shape(shape: PatternShape, w0: u32, h0: u32) -> BasicPattern {
    let (w, h) = (w0 as f64, h0 as f64);
    let mut bitmap = GrayF32::new(w0, h0);
    let mut mask = GrayF32::new(w0, h0);
    for (i, j, p) in bitmap.enumerate_pixels_mut() {
        let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
        let (inside, face) = match shape {
            PatternShape::Ellipse => {
                let (a, b) = (w / 2.0, h / 2.0);
                let (dx, dy) = (px - a, py - b);
                let outer = (dx / a).powi(2) + (dy / b).powi(2) <= 1.0;
                let (ia, ib) = (a - EDGE_BAND, b - EDGE_BAND);
                let inner = ia > 0.0 && ib > 0.0 && (dx / ia).powi(2) + (dy / ib).powi(2) <= 1.0;
                (outer, inner)
            }
            _ => {
                let d = px.min(w - px).min(py).min(h - py);
                (true, d > EDGE_BAND)
            }
        };
        p.0[0] = if face { 1.0 } else { 0.0 };
        mask.put_pixel(i, j, Luma([if inside { 1.0 } else { 0.0 }]));
    }
    BasicPattern {
        bitmap,
        mask,
        category: None,
        shape,
    }
}

/// Draws a texture in edge intensity (0) on the pattern's face.
pub fn draw_curve(p: &mut BasicPattern, curve: &CurveSpec) {
    let (w0, h0) = (p.width(), p.height());
    let (w, h) = (w0 as f64, h0 as f64);
    let half = stroke_width(w0, h0) / 2.0;
    match *curve {
        CurveSpec::ParallelLines { count, along_width } => {
            for (i, j, px) in p.bitmap.enumerate_pixels_mut() {
                let (x, y) = (i as f64 + 0.5, j as f64 + 0.5);
                let (pos, len) = if along_width { (y, h) } else { (x, w) };
                let hit = (1..=count).any(|c| (pos - len * c as f64 / (count + 1) as f64).abs() < half);
                if hit {
                    px.0[0] = 0.0;
                }
            }
        }
        CurveSpec::Polar { n, k } => {
            let (a, b) = (w / 2.0, h / 2.0);
            let samples = 8192;
            for s in 0..samples {
                let phi = 2.0 * PI * s as f64 / samples as f64;
                let rho = polar_radius(phi, n, k);
                let (cx, cy) = (a + rho * a * phi.cos(), b + rho * b * phi.sin());
                let x0 = (cx - half).floor().max(0.0) as u32;
                let x1 = ((cx + half).ceil() as u32).min(w0);
                let y0 = (cy - half).floor().max(0.0) as u32;
                let y1 = ((cy + half).ceil() as u32).min(h0);
                for j in y0..y1 {
                    for i in x0..x1 {
                        let (dx, dy) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
                        if dx * dx + dy * dy <= half * half {
                            p.bitmap.put_pixel(i, j, Luma([0.0]));
                        }
                    }
                }
            }
        }
    }
}

/// One rectangle and one ellipse for each preset size; with `textured`
/// each shape also receives a random curve texture.
pub fn generate_setrc_library<R: Rng + ?Sized>(textured: bool, rng: &mut R) -> Vec<BasicPattern> {
    let mut out = Vec::with_capacity(SETRC_SIZES.len() * 2);
    for &(w0, h0) in &SETRC_SIZES {
        for shape in [PatternShape::Rectangle, PatternShape::Ellipse] {
            let mut p = render_shape(shape, w0, h0);
            if textured {
                draw_curve(&mut p, &CurveSpec::random(rng));
            }
            out.push(p);
        }
    }
    out
}

/// Converts any decoded image to `[0, 1]` intensities. Color input uses
/// Rec. 601 luma weights (0.299, 0.587, 0.114); alpha is ignored.
pub fn to_intensity(img: &DynamicImage) -> GrayF32 {
    match img {
        DynamicImage::ImageLuma8(g) => {
            GrayF32::from_fn(g.width(), g.height(), |x, y| Luma([g.get_pixel(x, y).0[0] as f32 / 255.0]))
        }
        DynamicImage::ImageLuma16(g) => {
            GrayF32::from_fn(g.width(), g.height(), |x, y| Luma([g.get_pixel(x, y).0[0] as f32 / 65535.0]))
        }
        other => {
            let rgb = other.to_rgb32f();
            GrayF32::from_fn(rgb.width(), rgb.height(), |x, y| {
                let p = rgb.get_pixel(x, y).0;
                Luma([luma(p).clamp(0.0, 1.0)])
            })
        }
    }
}

/// Loads `<category>.png` for every requested category.
pub fn load_sketch_library(dir: &Path, categories: &[String]) -> Result<Vec<BasicPattern>> {
    categories
        .iter()
        .map(|cat| {
            let path = dir.join(format!("{cat}.png"));
            if !path.is_file() {
                return Err(Error::MissingSketch {
                    category: cat.clone(),
                    path,
                });
            }
            let img = image::open(&path)?;
            BasicPattern::from_bitmap(to_intensity(&img), Some(cat.clone()))
        })
        .collect()
}

/// Every `<category>.png` in a directory, sorted by category.
pub fn discover_sketches(dir: &Path) -> Result<Vec<String>> {
    let mut cats = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                cats.push(stem.to_string());
            }
        }
    }
    cats.sort();
    Ok(cats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorSample {
    /// RGB on the 0-255 scale.
    pub face: Rgbf,
    pub edge: Rgbf,
}

fn window(center: i64, size: i64, limit: u32) -> (u32, u32) {
    let r = size / 2;
    let lo = (center - r).max(0);
    let hi = (center + r).min(limit as i64 - 1);
    (lo as u32, hi.max(lo) as u32)
}

/// Samples the face color (mean of the 5x5 neighborhood) and the edge
/// color (33x33 neighborhood weighted by normalized Sobel magnitude of the
/// luma) around a point. Windows are clipped at the image border; a flat
/// neighborhood has no gradient and its edge color falls back to the face
/// color.
pub fn sample_colors(image: &RgbImage, point: Point) -> ColorSample {
    let (w, h) = image.dimensions();
    let cx = (point.x.floor() as i64).clamp(0, w as i64 - 1);
    let cy = (point.y.floor() as i64).clamp(0, h as i64 - 1);

    let (fx0, fx1) = window(cx, FACE_WINDOW, w);
    let (fy0, fy1) = window(cy, FACE_WINDOW, h);
    let mut acc = [0f64; 3];
    let mut n = 0f64;
    for y in fy0..=fy1 {
        for x in fx0..=fx1 {
            let p = pixel_f32(image, x, y);
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
            n += 1.0;
        }
    }
    let face = acc.map(|v| (v / n) as f32);

    let (ex0, ex1) = window(cx, EDGE_WINDOW, w);
    let (ey0, ey1) = window(cy, EDGE_WINDOW, h);
    let lum = |x: i64, y: i64| {
        let x = x.clamp(ex0 as i64, ex1 as i64) as u32;
        let y = y.clamp(ey0 as i64, ey1 as i64) as u32;
        luma(pixel_f32(image, x, y)) as f64
    };
    let mut wsum = 0f64;
    let mut eacc = [0f64; 3];
    for y in ey0..=ey1 {
        for x in ex0..=ex1 {
            let (xi, yi) = (x as i64, y as i64);
            let gx = (lum(xi + 1, yi - 1) + 2.0 * lum(xi + 1, yi) + lum(xi + 1, yi + 1))
                - (lum(xi - 1, yi - 1) + 2.0 * lum(xi - 1, yi) + lum(xi - 1, yi + 1));
            let gy = (lum(xi - 1, yi + 1) + 2.0 * lum(xi, yi + 1) + lum(xi + 1, yi + 1))
                - (lum(xi - 1, yi - 1) + 2.0 * lum(xi, yi - 1) + lum(xi + 1, yi - 1));
            let d = (gx * gx + gy * gy).sqrt();
            if d > 0.0 {
                let p = pixel_f32(image, x, y);
                for c in 0..3 {
                    eacc[c] += d * p[c] as f64;
                }
                wsum += d;
            }
        }
    }
    let edge = if wsum > 1e-9 { eacc.map(|v| (v / wsum) as f32) } else { face };
    ColorSample { face, edge }
}

/// `P * face + (1 - P) * edge` per pixel.
pub fn recolor(p: &BasicPattern, c: &ColorSample) -> Rgb32FImage {
    Rgb32FImage::from_fn(p.width(), p.height(), |x, y| {
        let v = p.bitmap.get_pixel(x, y).0[0];
        let mut out = [0f32; 3];
        for ch in 0..3 {
            out[ch] = v * c.face[ch] + (1.0 - v) * c.edge[ch];
        }
        image::Rgb(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub sigma_base: f64,
    pub sigma_w: f64,
    pub sigma_r: f64,
    pub flip_prob: f64,
    pub rotation_prob: f64,
    pub placement_iou_max: f64,
    /// `None`: one per annotated point, at most [`MAX_PATTERNS_PER_IMAGE`].
    pub patterns_per_image: Option<usize>,
    pub tight_arrangement_prob: f64,
    pub placement_retries: usize,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            sigma_base: 0.4,
            sigma_w: 0.4,
            sigma_r: 0.4,
            flip_prob: 0.5,
            rotation_prob: 1.0,
            placement_iou_max: 0.05,
            patterns_per_image: None,
            tight_arrangement_prob: 0.3,
            placement_retries: 50,
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("rotation_prob", self.rotation_prob),
            ("placement_iou_max", self.placement_iou_max),
            ("tight_arrangement_prob", self.tight_arrangement_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, s) in [
            ("sigma_base", self.sigma_base),
            ("sigma_w", self.sigma_w),
            ("sigma_r", self.sigma_r),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        Ok(())
    }

    pub fn pattern_count(&self, points: usize) -> usize {
        match self.patterns_per_image {
            Some(n) => n,
            None if points == 0 => 0,
            None => points.min(MAX_PATTERNS_PER_IMAGE),
        }
    }
}

/// Image-wide base scale `exp(sigma_base * z)`.
pub fn draw_base_scale<R: Rng + ?Sized>(cfg: &SynthesisConfig, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (cfg.sigma_base * z).exp()
}

/// Resized extents for given standard-normal draws, before clamping:
/// `w = s_base exp(sigma_w z_w) w0`, `h = (h0 / w0) exp(sigma_r z_r) w`.
pub fn resize_from_draws(w0: f64, h0: f64, s_base: f64, z_w: f64, z_r: f64, cfg: &SynthesisConfig) -> (f64, f64) {
    let w = s_base * (cfg.sigma_w * z_w).exp() * w0;
    let h = (h0 / w0) * (cfg.sigma_r * z_r).exp() * w;
    (w, h)
}

/// Random resize of a `w0 x h0` pattern, clamped to
/// `[MIN_PATTERN_SIDE, image extent]` per axis.
pub fn random_resize<R: Rng + ?Sized>(
    w0: f64,
    h0: f64,
    cfg: &SynthesisConfig,
    s_base: f64,
    image: ImageSize,
    rng: &mut R,
) -> (f64, f64) {
    let z_w: f64 = rng.sample(StandardNormal);
    let z_r: f64 = rng.sample(StandardNormal);
    let (w, h) = resize_from_draws(w0, h0, s_base, z_w, z_r, cfg);
    let cap_w = (image.width as f64).max(MIN_PATTERN_SIDE);
    let cap_h = (image.height as f64).max(MIN_PATTERN_SIDE);
    (w.clamp(MIN_PATTERN_SIDE, cap_w), h.clamp(MIN_PATTERN_SIDE, cap_h))
}

/// Opacity at normalized coordinates `x, y` in `[-1, 1]`:
/// `exp(-a x^2 - b y^2) * t1 + t0`.
#[inline]
pub fn opacity(a: f64, b: f64, x: f64, y: f64) -> f64 {
    (-a * x * x - b * y * y).exp() * OPACITY_SPAN + OPACITY_FLOOR
}

fn grid_coord(i: u32, n: u32) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Opacity raster on a grid whose first and last samples sit at -1 and 1.
pub fn alpha_mask_with(width: u32, height: u32, a: f64, b: f64) -> GrayF32 {
    GrayF32::from_fn(width, height, |i, j| {
        Luma([opacity(a, b, grid_coord(i, width), grid_coord(j, height)) as f32])
    })
}

/// Opacity raster with `a, b` drawn uniformly from `[0.1, 2]`; returns the
/// coefficients as well.
pub fn alpha_mask<R: Rng + ?Sized>(width: u32, height: u32, rng: &mut R) -> (GrayF32, f64, f64) {
    let a = rng.random_range(OPACITY_COEF_RANGE.0..=OPACITY_COEF_RANGE.1);
    let b = rng.random_range(OPACITY_COEF_RANGE.0..=OPACITY_COEF_RANGE.1);
    (alpha_mask_with(width, height, a, b), a, b)
}

/// Annotated point with its category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub point: Point,
    pub label: String,
}

impl LabeledPoint {
    pub fn new(x: f64, y: f64, label: impl Into<String>) -> Self {
        Self {
            point: Point::new(x, y),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum PatternLibrary {
    /// Category-agnostic shapes; a pattern takes the label of the point
    /// its colors were sampled from.
    Shapes(Vec<BasicPattern>),
    /// One sketch per category.
    Sketches(BTreeMap<String, BasicPattern>),
}

impl PatternLibrary {
    pub fn setrc<R: Rng + ?Sized>(textured: bool, rng: &mut R) -> Self {
        PatternLibrary::Shapes(generate_setrc_library(textured, rng))
    }

    pub fn sketches(patterns: Vec<BasicPattern>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in patterns {
            let cat = p
                .category
                .clone()
                .ok_or_else(|| Error::Config("sketch pattern without a category".into()))?;
            map.insert(cat, p);
        }
        Ok(PatternLibrary::Sketches(map))
    }

    pub fn is_empty(&self) -> bool {
        match self {
            PatternLibrary::Shapes(v) => v.is_empty(),
            PatternLibrary::Sketches(m) => m.is_empty(),
        }
    }
}

/// A recolored pattern composited into the image.
#[derive(Debug, Clone)]
pub struct PlacedPattern {
    /// Recolored pattern (0-255 scale) with opacity times shape coverage in
    /// the alpha channel, at the basic pattern's resolution.
    pub rgba: Rgba32F,
    /// Ground-truth box; the raster is stretched onto it.
    pub rbox: RBox,
    pub label: String,
    /// Mirrored along the w-axis.
    pub flipped: bool,
    /// Opacity coefficients `(a, b)`.
    pub opacity: (f64, f64),
}

fn build_rgba(base: &BasicPattern, colors: &ColorSample, a: f64, b: f64) -> Rgba32F {
    let rgb = recolor(base, colors);
    let alpha = alpha_mask_with(base.width(), base.height(), a, b);
    Rgba32F::from_fn(base.width(), base.height(), |x, y| {
        let c = rgb.get_pixel(x, y).0;
        let t = alpha.get_pixel(x, y).0[0] * base.mask.get_pixel(x, y).0[0];
        Rgba([c[0], c[1], c[2], t])
    })
}

/// Bilinear sample with sample `i` at integer coordinate `i` (grid corners
/// aligned with the raster corners).
fn sample_aligned(img: &Rgba32F, fx: f64, fy: f64) -> [f32; 4] {
    let (w, h) = img.dimensions();
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
    let (xa, ya) = (x0 as u32, y0 as u32);
    let (xb, yb) = ((xa + 1).min(w - 1), (ya + 1).min(h - 1));
    let p = |x, y| img.get_pixel(x, y).0;
    let (p00, p10, p01, p11) = (p(xa, ya), p(xb, ya), p(xa, yb), p(xb, yb));
    let mut out = [0f32; 4];
    for c in 0..4 {
        let top = p00[c] * (1.0 - tx) + p10[c] * tx;
        let bot = p01[c] * (1.0 - tx) + p11[c] * tx;
        out[c] = top * (1.0 - ty) + bot * ty;
    }
    out
}

/// Floating-point RGB canvas used while compositing.
#[derive(Debug, Clone)]
pub struct Canvas {
    width: u32,
    height: u32,
    data: Vec<Rgbf>,
}

impl Canvas {
    pub fn from_image(img: &RgbImage) -> Self {
        let data = img.pixels().map(|p| p.0.map(|v| v as f32)).collect();
        Self {
            width: img.width(),
            height: img.height(),
            data,
        }
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| to_u8(self.data[(y * self.width + x) as usize]))
    }

    pub fn get(&self, x: u32, y: u32) -> Rgbf {
        self.data[(y * self.width + x) as usize]
    }

    /// Alpha-blends a placed pattern onto every pixel whose center lies in
    /// its box.
    pub fn composite(&mut self, p: &PlacedPattern) {
        let b = &p.rbox;
        let hb = rbox_to_hbox(b);
        let x0 = hb.x_min.floor().max(0.0) as u32;
        let y0 = hb.y_min.floor().max(0.0) as u32;
        let x1 = (hb.x_max.ceil().max(0.0) as u32).min(self.width);
        let y1 = (hb.y_max.ceil().max(0.0) as u32).min(self.height);
        let (u, v) = b.axes();
        let (rw, rh) = p.rgba.dimensions();
        for j in y0..y1 {
            for i in x0..x1 {
                let dx = i as f64 + 0.5 - b.x;
                let dy = j as f64 + 0.5 - b.y;
                let nx = 2.0 * (dx * u.x + dy * u.y) / b.w;
                let ny = 2.0 * (dx * v.x + dy * v.y) / b.h;
                if nx.abs() > 1.0 || ny.abs() > 1.0 {
                    continue;
                }
                let nx = if p.flipped { -nx } else { nx };
                let fx = (nx + 1.0) / 2.0 * (rw - 1) as f64;
                let fy = (ny + 1.0) / 2.0 * (rh - 1) as f64;
                let s = sample_aligned(&p.rgba, fx, fy);
                let t = s[3];
                let px = &mut self.data[(j * self.width + i) as usize];
                for c in 0..3 {
                    px[c] = t * s[c] + (1.0 - t) * px[c];
                }
            }
        }
    }
}

fn fits_inside(b: &RBox, image: ImageSize) -> bool {
    let h = rbox_to_hbox(b);
    h.x_min >= 0.0 && h.y_min >= 0.0 && h.x_max <= image.width as f64 && h.y_max <= image.height as f64
}

struct Candidate {
    rbox: RBox,
    base: usize,
    point: usize,
    flipped: bool,
    opacity: (f64, f64),
}

/// Overlays synthetic patterns on an image.
///
/// Placement draws random positions fully inside the image and retries up
/// to `placement_retries` times while the candidate overlaps an already
/// placed pattern by more than `placement_iou_max` (rotated IoU). Some
/// accepted patterns are repeated along their w-axis as a tight row of 2-4
/// touching copies. A final greedy NMS pass in placement order guarantees
/// the overlap cap; patterns that cannot be placed are dropped.
pub fn synthesize<R: Rng + ?Sized>(
    image: &RgbImage,
    points: &[LabeledPoint],
    library: &PatternLibrary,
    cfg: &SynthesisConfig,
    rng: &mut R,
) -> Result<(RgbImage, Vec<PlacedPattern>)> {
    cfg.validate()?;
    let count = cfg.pattern_count(points.len());
    if count == 0 || points.is_empty() {
        return Ok((image.clone(), Vec::new()));
    }
    if library.is_empty() {
        return Err(Error::Config("pattern library is empty".into()));
    }
    let bases: Vec<&BasicPattern> = match library {
        PatternLibrary::Shapes(v) => v.iter().collect(),
        PatternLibrary::Sketches(m) => m.values().collect(),
    };
    if let PatternLibrary::Sketches(m) = library {
        if let Some(p) = points.iter().find(|p| !m.contains_key(&p.label)) {
            return Err(Error::MissingPattern(p.label.clone()));
        }
    }
    let size = ImageSize::new(image.width(), image.height());
    let (iw, ih) = (size.width as f64, size.height as f64);
    let cap = cfg.placement_iou_max;
    let s_base = draw_base_scale(cfg, rng);

    let mut placed: Vec<Candidate> = Vec::new();
    let overlaps = |placed: &[Candidate], b: &RBox| placed.iter().any(|c| rotated_iou(&c.rbox, b) > cap);

    for _ in 0..count {
        let point = rng.random_range(0..points.len());
        let base = match library {
            PatternLibrary::Shapes(v) => rng.random_range(0..v.len()),
            PatternLibrary::Sketches(m) => m.keys().position(|k| *k == points[point].label).unwrap_or(0),
        };
        let pattern = bases[base];
        let flipped = rng.random_bool(cfg.flip_prob);
        let (mut w, mut h) = random_resize(pattern.width() as f64, pattern.height() as f64, cfg, s_base, size, rng);
        let theta = if rng.random_bool(cfg.rotation_prob) {
            rng.random_range(-FRAC_PI_2..FRAC_PI_2)
        } else {
            0.0
        };
        let (ex, ey) = RBox::new(0.0, 0.0, w, h, theta).half_extents();
        if 2.0 * ex > iw || 2.0 * ey > ih {
            let f = (iw / (2.0 * ex)).min(ih / (2.0 * ey)) * (1.0 - 1e-9);
            w *= f;
            h *= f;
        }
        let a = rng.random_range(OPACITY_COEF_RANGE.0..=OPACITY_COEF_RANGE.1);
        let b = rng.random_range(OPACITY_COEF_RANGE.0..=OPACITY_COEF_RANGE.1);
        if w < MIN_PATTERN_SIDE || h < MIN_PATTERN_SIDE {
            continue;
        }
        let (ex, ey) = RBox::new(0.0, 0.0, w, h, theta).half_extents();

        let mut accepted = None;
        let mut last = None;
        for _ in 0..=cfg.placement_retries {
            let x = if iw - ex > ex { rng.random_range(ex..=iw - ex) } else { iw / 2.0 };
            let y = if ih - ey > ey { rng.random_range(ey..=ih - ey) } else { ih / 2.0 };
            let cand = RBox::new(x, y, w, h, theta);
            if !fits_inside(&cand, size) {
                continue;
            }
            if overlaps(&placed, &cand) {
                last = Some(cand);
                continue;
            }
            accepted = Some(cand);
            break;
        }
        let make = |rbox: RBox| Candidate {
            rbox,
            base,
            point,
            flipped,
            opacity: (a, b),
        };
        let Some(rbox) = accepted else {
            if let Some(rbox) = last {
                placed.push(make(rbox));
            }
            continue;
        };
        placed.push(make(rbox));

        if rng.random_bool(cfg.tight_arrangement_prob) {
            let copies = rng.random_range(2..=4usize);
            let (u, _) = rbox.axes();
            for k in 1..copies {
                let shift = k as f64 * rbox.w;
                let copy = rbox.translated(shift * u.x, shift * u.y);
                if !fits_inside(&copy, size) || overlaps(&placed, &copy) {
                    break;
                }
                placed.push(make(copy));
            }
        }
    }

    // scores fall with placement order, so earlier patterns win
    let scored: Vec<(RBox, f64)> = placed
        .iter()
        .enumerate()
        .map(|(i, c)| (c.rbox, -(i as f64)))
        .collect();
    let mut keep = rotated_nms(&scored, cap);
    keep.sort_unstable();

    let mut colors: BTreeMap<usize, ColorSample> = BTreeMap::new();
    let mut canvas = Canvas::from_image(image);
    let mut out = Vec::with_capacity(keep.len());
    for i in keep {
        let c = &placed[i];
        let sample = *colors
            .entry(c.point)
            .or_insert_with(|| sample_colors(image, points[c.point].point));
        let base = bases[c.base];
        let label = match library {
            PatternLibrary::Shapes(_) => points[c.point].label.clone(),
            PatternLibrary::Sketches(_) => base.category.clone().unwrap_or_default(),
        };
        let p = PlacedPattern {
            rgba: build_rgba(base, &sample, c.opacity.0, c.opacity.1),
            rbox: c.rbox,
            label,
            flipped: c.flipped,
            opacity: c.opacity,
        };
        canvas.composite(&p);
        out.push(p);
    }
    Ok((canvas.to_image(), out))
}

/// [`synthesize`] with a ChaCha stream seeded from `cfg.rng_seed`.
pub fn synthesize_seeded(
    image: &RgbImage,
    points: &[LabeledPoint],
    library: &PatternLibrary,
    cfg: &SynthesisConfig,
) -> Result<(RgbImage, Vec<PlacedPattern>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    synthesize(image, points, library, cfg, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use image::Rgb;

    #[test]
    fn setrc_has_twelve_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lib = generate_setrc_library(true, &mut rng);
        assert_eq!(lib.len(), 12);
        let dims: Vec<_> = lib.iter().map(|p| (p.width(), p.height())).collect();
        assert_eq!(dims[0], (160, 160));
        assert_eq!(dims[11], (80, 20));
    }

    #[test]
    fn plain_rectangle_face_and_edge() {
        let p = render_shape(PatternShape::Rectangle, 160, 80);
        assert_eq!(p.bitmap.get_pixel(80, 40).0[0], 1.0);
        assert_eq!(p.bitmap.get_pixel(0, 40).0[0], 0.0);
        assert_eq!(p.bitmap.get_pixel(2, 40).0[0], 0.0);
        assert_eq!(p.bitmap.get_pixel(3, 40).0[0], 1.0);
        assert_eq!(p.bitmap.get_pixel(80, 79).0[0], 0.0);
        assert!(p.mask.pixels().all(|m| m.0[0] == 1.0));
    }

    #[test]
    fn ellipse_masks_corners() {
        let p = render_shape(PatternShape::Ellipse, 80, 40);
        assert_eq!(p.mask.get_pixel(0, 0).0[0], 0.0);
        assert_eq!(p.mask.get_pixel(40, 20).0[0], 1.0);
        assert_eq!(p.bitmap.get_pixel(40, 20).0[0], 1.0);
        assert_eq!(p.bitmap.get_pixel(1, 20).0[0], 0.0);
    }

    #[test]
    fn polar_curve_passes_inner_radius_diagonally() {
        for n in [1.0, 3.7, 8.0] {
            for k in [0.1, 0.35, 0.6] {
                assert_abs_diff_eq!(polar_radius(PI / 4.0, n, k), k, epsilon = 1e-12);
                assert_abs_diff_eq!(polar_radius(0.0, n, k), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn textures_draw_edge_strokes() {
        let mut p = render_shape(PatternShape::Rectangle, 160, 80);
        draw_curve(&mut p, &CurveSpec::ParallelLines { count: 1, along_width: true });
        assert_eq!(p.bitmap.get_pixel(80, 40).0[0], 0.0);
        assert_eq!(p.bitmap.get_pixel(80, 20).0[0], 1.0);
        let mut p = render_shape(PatternShape::Rectangle, 160, 160);
        draw_curve(&mut p, &CurveSpec::Polar { n: 2.0, k: 0.3 });
        // on the diagonal at rho = k: offset 0.3 * 80 / sqrt(2) from center
        let o = 0.3 * 80.0 / 2f64.sqrt();
        assert_eq!(p.bitmap.get_pixel((80.0 + o) as u32, (80.0 + o) as u32).0[0], 0.0);
        assert_eq!(p.bitmap.get_pixel(80, 80).0[0], 1.0);
    }

    #[test]
    fn flat_image_colors() {
        let img = RgbImage::from_pixel(64, 64, Rgb([10, 20, 30]));
        let c = sample_colors(&img, Point::new(32.0, 32.0));
        assert_eq!(c.face, [10.0, 20.0, 30.0]);
        assert_eq!(c.edge, c.face);
        let c = sample_colors(&img, Point::new(1.0, 63.5));
        assert_eq!(c.face, [10.0, 20.0, 30.0]);
    }

    #[test]
    fn face_is_window_mean() {
        let img = RgbImage::from_fn(20, 20, |x, y| Rgb([(x + 10 * y) as u8, 0, 0]));
        let c = sample_colors(&img, Point::new(10.2, 10.7));
        // mean over x in 8..=12, y in 8..=12 of x + 10y = 10 + 100
        assert_abs_diff_eq!(c.face[0], 110.0, epsilon = 1e-4);
    }

    #[test]
    fn step_edge_color_is_midway() {
        let img = RgbImage::from_fn(256, 64, |x, _| if x < 128 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let c = sample_colors(&img, Point::new(128.0, 32.0));
        // only columns 127 (black) and 128 (white) carry equal Sobel weight
        for ch in 0..3 {
            assert_abs_diff_eq!(c.edge[ch], 127.5, epsilon = 1e-3);
        }
    }

    #[test]
    fn recolor_endpoints_and_midpoint() {
        let mut bitmap = GrayF32::new(3, 1);
        bitmap.put_pixel(0, 0, Luma([1.0]));
        bitmap.put_pixel(1, 0, Luma([0.0]));
        bitmap.put_pixel(2, 0, Luma([0.5]));
        let p = BasicPattern::from_bitmap(bitmap, None).unwrap();
        let c = ColorSample {
            face: [200.0, 100.0, 0.0],
            edge: [0.0, 100.0, 200.0],
        };
        let r = recolor(&p, &c);
        assert_eq!(r.get_pixel(0, 0).0, c.face);
        assert_eq!(r.get_pixel(1, 0).0, c.edge);
        assert_eq!(r.get_pixel(2, 0).0, [100.0, 100.0, 100.0]);
    }

    #[test]
    fn resize_identity_and_aspect() {
        let cfg = SynthesisConfig::default();
        assert_eq!(resize_from_draws(160.0, 80.0, 1.0, 0.0, 0.0, &cfg), (160.0, 80.0));
        let z = 0.73;
        let (w, h) = resize_from_draws(160.0, 40.0, 1.3, -0.4, z, &cfg);
        assert_abs_diff_eq!(h / w, 0.25 * (0.4f64 * z).exp(), epsilon = 1e-12);
    }

    #[test]
    fn resize_clamps() {
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (w, h) = random_resize(80.0, 20.0, &cfg, 0.05, ImageSize::new(100, 60), &mut rng);
            assert!((8.0..=100.0).contains(&w) && (8.0..=60.0).contains(&h));
        }
    }

    #[test]
    fn opacity_values() {
        assert_eq!(opacity(1.3, 0.4, 0.0, 0.0), 1.0);
        assert_abs_diff_eq!(opacity(0.1, 0.1, 1.0, 1.0), 0.9 * (-0.2f64).exp() + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(opacity(0.1, 0.1, 1.0, 1.0), 0.8369, epsilon = 1e-4);
        let m = alpha_mask_with(5, 3, 0.1, 0.1);
        assert_eq!(m.get_pixel(2, 1).0[0], 1.0);
        assert_abs_diff_eq!(m.get_pixel(4, 2).0[0] as f64, 0.8369, epsilon = 1e-4);
    }

    #[test]
    fn alpha_mask_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (m, a, b) = alpha_mask(37, 21, &mut rng);
            assert!((0.1..=2.0).contains(&a) && (0.1..=2.0).contains(&b));
            for p in m.pixels() {
                assert!(p.0[0] >= 0.1 && p.0[0] <= 1.0);
            }
        }
    }

    fn points() -> Vec<LabeledPoint> {
        vec![
            LabeledPoint::new(50.0, 60.0, "ship"),
            LabeledPoint::new(200.0, 100.0, "plane"),
            LabeledPoint::new(120.0, 200.0, "ship"),
        ]
    }

    fn scene() -> RgbImage {
        RgbImage::from_fn(256, 256, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 90]))
    }

    #[test]
    fn zero_patterns_leaves_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lib = PatternLibrary::setrc(false, &mut rng);
        let cfg = SynthesisConfig {
            patterns_per_image: Some(0),
            ..Default::default()
        };
        let img = scene();
        let (out, placed) = synthesize(&img, &points(), &lib, &cfg, &mut rng).unwrap();
        assert_eq!(out, img);
        assert!(placed.is_empty());
    }

    #[test]
    fn synthesized_boxes_respect_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lib = PatternLibrary::setrc(true, &mut rng);
        let cfg = SynthesisConfig {
            patterns_per_image: Some(12),
            ..Default::default()
        };
        let (_, placed) = synthesize(&scene(), &points(), &lib, &cfg, &mut rng).unwrap();
        assert!(!placed.is_empty());
        for (i, a) in placed.iter().enumerate() {
            assert!(fits_inside(&a.rbox, ImageSize::new(256, 256)));
            assert!(a.rbox.w >= 8.0 && a.rbox.h >= 8.0);
            assert!(a.label == "ship" || a.label == "plane");
            for b in &placed[i + 1..] {
                assert!(rotated_iou(&a.rbox, &b.rbox) <= 0.05);
            }
        }
    }

    #[test]
    fn sketch_labels_follow_sketch() {
        let mk = |c: &str| {
            let mut p = render_shape(PatternShape::Rectangle, 41, 21);
            p.category = Some(c.to_string());
            p.shape = PatternShape::Sketch;
            p
        };
        let lib = PatternLibrary::sketches(vec![mk("ship"), mk("plane")]).unwrap();
        let cfg = SynthesisConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, placed) = synthesize(&scene(), &points(), &lib, &cfg, &mut rng).unwrap();
        assert!(!placed.is_empty());
        assert!(placed.iter().all(|p| p.label == "ship" || p.label == "plane"));

        let only_ship = PatternLibrary::sketches(vec![mk("ship")]).unwrap();
        let err = synthesize(&scene(), &points(), &only_ship, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::MissingPattern(ref l) if l == "plane"));
    }

    #[test]
    fn opaque_center_is_replaced() {
        let base = render_shape(PatternShape::Rectangle, 41, 21);
        let colors = ColorSample {
            face: [250.0, 10.0, 10.0],
            edge: [0.0, 0.0, 0.0],
        };
        let p = PlacedPattern {
            rgba: build_rgba(&base, &colors, 1.0, 1.0),
            rbox: RBox::new(50.5, 40.5, 41.0, 21.0, 0.0),
            label: "x".into(),
            flipped: false,
            opacity: (1.0, 1.0),
        };
        let img = RgbImage::from_pixel(100, 80, Rgb([0, 200, 0]));
        let mut canvas = Canvas::from_image(&img);
        canvas.composite(&p);
        assert_eq!(canvas.get(50, 40), [250.0, 10.0, 10.0]);
        // outside the box nothing changes
        assert_eq!(canvas.get(5, 5), [0.0, 200.0, 0.0]);
        // partial opacity near the box edge
        let edge = canvas.get(31, 40);
        assert!(edge[1] > 0.0);
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthesisConfig {
            rng_seed: 99,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lib = PatternLibrary::setrc(true, &mut rng);
        let (a, pa) = synthesize_seeded(&scene(), &points(), &lib, &cfg).unwrap();
        let (b, pb) = synthesize_seeded(&scene(), &points(), &lib, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.rbox, y.rbox);
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn sketch_loading_errors_name_category() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(4, 4, Rgb([255, 255, 255]));
        img.save(dir.path().join("ship.png")).unwrap();
        let got = load_sketch_library(dir.path(), &["ship".to_string()]).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got[0].bitmap.pixels().all(|p| p.0[0] == 1.0));
        let err = load_sketch_library(dir.path(), &["ship".into(), "plane".into()]).unwrap_err();
        assert!(err.to_string().contains("plane"));
        assert_eq!(discover_sketches(dir.path()).unwrap(), vec!["ship".to_string()]);
    }

    #[test]
    fn color_sketch_uses_rec601_luma() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_pixel(2, 2, Rgb([255, 0, 0])).save(dir.path().join("r.png")).unwrap();
        let got = load_sketch_library(dir.path(), &["r".to_string()]).unwrap();
        assert_abs_diff_eq!(got[0].bitmap.get_pixel(0, 0).0[0], 0.299, epsilon = 1e-6);
    }
}

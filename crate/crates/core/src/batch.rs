//! Buffer-level entry points for external training loops.
//!
//! Images cross this boundary as row-major, interleaved 8-bit RGB buffers
//! (`width * height * 3` bytes, no row padding). Each call validates the
//! layout and then delegates to the same functions the library and CLI
//! use, so results are identical for identical inputs and seeds.

use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use image::RgbImage;

use crate::assign::{assign, build_anchor_grid, targets_from, AnchorMatch, AnchorPrediction};
use crate::error::{Error, Result};
use crate::eval::{evaluate_map, DetectionRecord, EvalConfig, GroundTruth, MapReport};
use crate::geometry::{ImageSize, Point, RBox};
use crate::pattern::{synthesize_seeded, LabeledPoint, PatternLibrary, SynthesisConfig};

/// Library version string.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Row-major interleaved RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbBuffer {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let b = Self { width, height, data };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width as usize * self.height as usize * 3;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Layout(format!("empty image {}x{}", self.width, self.height)));
        }
        if self.data.len() != expected {
            return Err(Error::Layout(format!(
                "{}x{} RGB8 needs {expected} bytes, got {}",
                self.width,
                self.height,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn to_image(&self) -> Result<RgbImage> {
        self.validate()?;
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .ok_or_else(|| Error::Layout("buffer does not match its dimensions".into()))
    }

    pub fn from_image(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().clone(),
        }
    }
}

/// Seed of image `index` in a batch seeded with `seed` (SplitMix64 step).
pub fn image_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shape library used when a caller does not supply one: textured shapes
/// drawn from a stream seeded with `seed`.
pub fn default_library(seed: u64) -> PatternLibrary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PatternLibrary::setrc(true, &mut rng)
}

#[derive(Debug, Clone)]
pub struct BatchRequest {
    pub images: Vec<RgbBuffer>,
    /// Point labels per image.
    pub points: Vec<Vec<LabeledPoint>>,
    pub config: SynthesisConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTarget {
    pub rbox: RBox,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub images: Vec<RgbBuffer>,
    pub targets: Vec<Vec<SyntheticTarget>>,
}

/// Synthesizes every image of a batch in parallel. Image `i` uses seed
/// [`image_seed`]`(req.seed, i)`.
pub fn synthesize_batch(req: &BatchRequest, library: &PatternLibrary) -> Result<BatchOutput> {
    if req.images.len() != req.points.len() {
        return Err(Error::Layout(format!(
            "{} images but {} point lists",
            req.images.len(),
            req.points.len()
        )));
    }
    req.config.validate()?;
    let results: Vec<(RgbBuffer, Vec<SyntheticTarget>)> = req
        .images
        .par_iter()
        .zip(&req.points)
        .enumerate()
        .map(|(i, (buf, pts))| {
            let img = buf.to_image()?;
            let cfg = SynthesisConfig {
                rng_seed: image_seed(req.seed, i),
                ..req.config.clone()
            };
            let (out, placed) = synthesize_seeded(&img, pts, library, &cfg)?;
            let targets = placed
                .into_iter()
                .map(|p| SyntheticTarget {
                    rbox: p.rbox,
                    label: p.label,
                })
                .collect();
            Ok((RgbBuffer::from_image(&out), targets))
        })
        .collect::<Result<_>>()?;
    let (images, targets) = results.into_iter().unzip();
    Ok(BatchOutput { images, targets })
}

#[derive(Debug, Clone)]
pub struct AssignRequest {
    pub image: ImageSize,
    pub stride: u32,
    pub anchor_size: f64,
    pub anchors_per_cell: usize,
    pub num_classes: usize,
    /// Row-major `num_anchors x num_classes` class probabilities.
    pub scores: Vec<f64>,
    pub points: Vec<(Point, usize)>,
    pub boxes: Vec<(RBox, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignMasks {
    pub point_mask: Vec<bool>,
    pub box_mask: Vec<bool>,
    pub matches: Vec<AnchorMatch>,
    /// Targets left without a positive.
    pub unmatched: Vec<usize>,
}

/// Label assignment over flat score buffers.
pub fn assign_batch(reqs: &[AssignRequest]) -> Result<Vec<AssignMasks>> {
    reqs.par_iter()
        .map(|r| {
            let grid = build_anchor_grid(r.image, r.stride, r.anchor_size, r.anchors_per_cell)?;
            let n = grid.num_anchors();
            if r.num_classes == 0 || r.scores.len() != n * r.num_classes {
                return Err(Error::Layout(format!(
                    "expected {n} x {} scores, got {}",
                    r.num_classes,
                    r.scores.len()
                )));
            }
            let preds: Vec<AnchorPrediction> = (0..n)
                .map(|a| AnchorPrediction {
                    center: grid.anchor_center(a),
                    scores: r.scores[a * r.num_classes..(a + 1) * r.num_classes].to_vec(),
                })
                .collect();
            let boxes: Vec<(Point, usize)> = r.boxes.iter().map(|(b, l)| (b.center(), *l)).collect();
            let targets = targets_from(&r.points, &boxes);
            let res = assign(&grid, &preds, &targets)?;
            Ok(AssignMasks {
                point_mask: res.point_mask(),
                box_mask: res.box_mask(),
                matches: res.matches.clone(),
                unmatched: res.unmatched.clone(),
            })
        })
        .collect()
}

/// Rotated AP over detection and ground-truth records.
pub fn evaluate_batch(dets: &[DetectionRecord], gts: &[GroundTruth], cfg: &EvalConfig) -> Result<MapReport> {
    evaluate_map(dets, gts, cfg)
}

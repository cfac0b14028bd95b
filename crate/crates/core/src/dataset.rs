//! DOTA annotations, point derivation, patch splitting and detection merging.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::{GenericImageView, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DetectionRecord;
use crate::geometry::{min_area_rbox, rotated_nms, ImageSize, Point, RBox};

pub const DEFAULT_PATCH_SIZE: u32 = 1024;
pub const DEFAULT_OVERLAP: u32 = 200;
pub const MERGE_NMS_IOU: f64 = 0.1;
/// Point-noise levels of the annotation-noise ablation.
pub const NOISE_LEVELS: [f64; 3] = [0.0, 0.10, 0.20];

/// One DOTA object: a quadrilateral in file order plus its minimum-area box.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub polygon: [Point; 4],
    pub category: String,
    pub difficult: bool,
    pub rbox: RBox,
}

impl GtRecord {
    pub fn from_polygon(polygon: [Point; 4], category: impl Into<String>, difficult: bool) -> Result<Self> {
        let rbox = min_area_rbox(&polygon)?;
        rbox.validate()?;
        Ok(Self {
            polygon,
            category: category.into(),
            difficult,
            rbox,
        })
    }

    pub fn from_rbox(rbox: RBox, category: impl Into<String>, difficult: bool) -> Self {
        Self {
            polygon: rbox.corners(),
            category: category.into(),
            difficult,
            rbox,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            polygon: self.polygon.map(|p| Point::new(p.x + dx, p.y + dy)),
            category: self.category.clone(),
            difficult: self.difficult,
            rbox: self.rbox.translated(dx, dy),
        }
    }
}

fn is_header(line: &str) -> bool {
    line.starts_with("imagesource") || line.starts_with("gsd")
}

/// Parses DOTA text: `x1 y1 x2 y2 x3 y3 x4 y4 category [difficult]` per
/// line. `imagesource:` and `gsd:` header lines and blank lines are
/// skipped. `origin` only labels errors.
pub fn parse_dota_str(text: &str, origin: &Path) -> Result<Vec<GtRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || is_header(line) {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.display().to_string(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(9..=10).contains(&fields.len()) {
            return Err(err(format!("expected 9 or 10 fields, found {}", fields.len())));
        }
        let mut coords = [0f64; 8];
        for (c, f) in coords.iter_mut().zip(&fields[..8]) {
            *c = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad coordinate {f:?}")))?;
        }
        let difficult = match fields.get(9) {
            None | Some(&"0") => false,
            Some(&"1") => true,
            Some(other) => return Err(err(format!("bad difficulty flag {other:?}"))),
        };
        let polygon = [0, 1, 2, 3].map(|i| Point::new(coords[2 * i], coords[2 * i + 1]));
        let rec = GtRecord::from_polygon(polygon, fields[8], difficult).map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_dota(path: &Path) -> Result<Vec<GtRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_dota_str(&text, path)
}

/// Inverse of [`parse_dota_str`]; coordinates use shortest round-trip
/// formatting.
pub fn format_dota(records: &[GtRecord]) -> String {
    let mut s = String::new();
    for r in records {
        for p in &r.polygon {
            let _ = write!(s, "{} {} ", p.x, p.y);
        }
        let _ = writeln!(s, "{} {}", r.category, u8::from(r.difficult));
    }
    s
}

pub fn write_dota(path: &Path, records: &[GtRecord]) -> Result<()> {
    std::fs::write(path, format_dota(records))?;
    Ok(())
}

/// Loads every `*.txt` annotation file in a directory, keyed by file stem.
pub fn load_dota_dir(dir: &Path) -> Result<BTreeMap<String, Vec<GtRecord>>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), parse_dota(&path)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PointSource {
    Center,
    Noisy { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointAnnotation {
    pub x: f64,
    pub y: f64,
    pub category: String,
    pub source: PointSource,
}

impl PointAnnotation {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Point labels from boxes: the box center plus independent offsets drawn
/// uniformly from `[-sigma * h, sigma * h]` on each axis, `h` being the box
/// height. With `bounds` the result is clamped into the image.
pub fn derive_points<R: Rng + ?Sized>(
    gts: &[GtRecord],
    sigma: f64,
    bounds: Option<ImageSize>,
    rng: &mut R,
) -> Result<Vec<PointAnnotation>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative, got {sigma}")));
    }
    let source = if sigma == 0.0 {
        PointSource::Center
    } else {
        PointSource::Noisy { sigma }
    };
    Ok(gts
        .iter()
        .map(|g| {
            let r = sigma * g.rbox.h;
            let dx = rng.random_range(-1.0..=1.0) * r;
            let dy = rng.random_range(-1.0..=1.0) * r;
            let (mut x, mut y) = (g.rbox.x + dx, g.rbox.y + dy);
            if let Some(b) = bounds {
                x = x.clamp(0.0, b.width as f64);
                y = y.clamp(0.0, b.height as f64);
            }
            PointAnnotation {
                x,
                y,
                category: g.category.clone(),
                source,
            }
        })
        .collect())
}

/// Window origins along one axis: a fixed stride of `patch - overlap` with
/// the last window flush to the far edge.
pub fn split_offsets(len: u32, patch: u32, overlap: u32) -> Result<Vec<u32>> {
    if patch == 0 || overlap >= patch {
        return Err(Error::Config(format!(
            "patch size ({patch}) must exceed the overlap ({overlap})"
        )));
    }
    if len <= patch {
        return Ok(vec![0]);
    }
    let stride = patch - overlap;
    let mut out = vec![0];
    let mut o = 0;
    while o + patch < len {
        o = (o + stride).min(len - patch);
        out.push(o);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Patch {
    /// `patch x patch` pixels; zero-padded where the source is smaller.
    pub image: RgbImage,
    /// Top-left corner in source coordinates.
    pub offset: (u32, u32),
    /// Objects whose box center lies in the window, in patch coordinates.
    pub gts: Vec<GtRecord>,
}

impl Patch {
    pub fn name(&self, stem: &str) -> String {
        patch_id(stem, self.offset)
    }
}

pub fn patch_id(stem: &str, offset: (u32, u32)) -> String {
    format!("{stem}__{}__{}", offset.0, offset.1)
}

/// Recovers `(stem, offset)` from a patch id; `None` for plain image ids.
pub fn parse_patch_id(id: &str) -> Option<(&str, (u32, u32))> {
    let mut parts = id.rsplitn(3, "__");
    let oy = parts.next()?.parse().ok()?;
    let ox = parts.next()?.parse().ok()?;
    let stem = parts.next()?;
    Some((stem, (ox, oy)))
}

/// Tiles an image into overlapping square windows.
pub fn split_image(image: &RgbImage, gts: &[GtRecord], patch: u32, overlap: u32) -> Result<Vec<Patch>> {
    let xs = split_offsets(image.width(), patch, overlap)?;
    let ys = split_offsets(image.height(), patch, overlap)?;
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            let cw = patch.min(image.width() - ox);
            let ch = patch.min(image.height() - oy);
            let mut tile = RgbImage::new(patch, patch);
            let view = image.view(ox, oy, cw, ch);
            for (x, y, p) in view.pixels() {
                tile.put_pixel(x, y, p);
            }
            let (fx, fy) = (ox as f64, oy as f64);
            let (ex, ey) = (fx + patch as f64, fy + patch as f64);
            let kept = gts
                .iter()
                .filter(|g| g.rbox.x >= fx && g.rbox.x < ex && g.rbox.y >= fy && g.rbox.y < ey)
                .map(|g| g.translated(-fx, -fy))
                .collect();
            out.push(Patch {
                image: tile,
                offset: (ox, oy),
                gts: kept,
            });
        }
    }
    Ok(out)
}

/// Moves patch detections back to source coordinates and suppresses
/// duplicates per image and category with rotated NMS.
pub fn merge_detections(patches: &[((u32, u32), Vec<DetectionRecord>)], nms_iou: f64) -> Vec<DetectionRecord> {
    let mut groups: BTreeMap<(String, String), Vec<DetectionRecord>> = BTreeMap::new();
    for ((ox, oy), dets) in patches {
        for d in dets {
            let image_id = parse_patch_id(&d.image_id)
                .map(|(stem, _)| stem.to_string())
                .unwrap_or_else(|| d.image_id.clone());
            let moved = DetectionRecord {
                image_id,
                category: d.category.clone(),
                score: d.score,
                rbox: d.rbox.translated(*ox as f64, *oy as f64),
            };
            groups
                .entry((moved.image_id.clone(), moved.category.clone()))
                .or_default()
                .push(moved);
        }
    }
    let mut out = Vec::new();
    for (_, dets) in groups {
        let scored: Vec<(RBox, f64)> = dets.iter().map(|d| (d.rbox, d.score)).collect();
        for i in rotated_nms(&scored, nms_iou) {
            out.push(dets[i].clone());
        }
    }
    out
}

/// Groups detections whose image ids are patch ids by their offset, ready
/// for [`merge_detections`]. Plain ids get offset `(0, 0)`.
pub fn group_by_patch(dets: Vec<DetectionRecord>) -> Vec<((u32, u32), Vec<DetectionRecord>)> {
    let mut groups: BTreeMap<(String, (u32, u32)), Vec<DetectionRecord>> = BTreeMap::new();
    for d in dets {
        let key = match parse_patch_id(&d.image_id) {
            Some((stem, off)) => (stem.to_string(), off),
            None => (d.image_id.clone(), (0, 0)),
        };
        groups.entry(key).or_default().push(d);
    }
    groups.into_iter().map(|((_, off), v)| (off, v)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    image_id: String,
    category: String,
    score: f64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    theta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    image_id: String,
    category: String,
    x: f64,
    y: f64,
}

/// Reads `image_id,category,score,x,y,w,h,theta` rows.
pub fn read_detections_csv<R: std::io::Read>(reader: R) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: DetectionRow = row?;
        let d = DetectionRecord {
            image_id: r.image_id,
            category: r.category,
            score: r.score,
            rbox: RBox::new(r.x, r.y, r.w, r.h, r.theta),
        };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_detections_csv<W: std::io::Write>(writer: W, dets: &[DetectionRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for d in dets {
        wtr.serialize(DetectionRow {
            image_id: d.image_id.clone(),
            category: d.category.clone(),
            score: d.score,
            x: d.rbox.x,
            y: d.rbox.y,
            w: d.rbox.w,
            h: d.rbox.h,
            theta: d.rbox.theta,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `image_id,category,x,y` rows, grouped by image id.
pub fn read_points_csv<R: std::io::Read>(reader: R) -> Result<BTreeMap<String, Vec<PointAnnotation>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: BTreeMap<String, Vec<PointAnnotation>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: PointRow = row?;
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::NonFinite("point coordinate"));
        }
        out.entry(r.image_id).or_default().push(PointAnnotation {
            x: r.x,
            y: r.y,
            category: r.category,
            source: PointSource::Center,
        });
    }
    Ok(out)
}

pub fn write_points_csv<'a, W, I>(writer: W, rows: I) -> Result<()>
where
    W: std::io::Write,
    I: IntoIterator<Item = (&'a str, &'a PointAnnotation)>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    for (id, p) in rows {
        wtr.serialize(PointRow {
            image_id: id.to_string(),
            category: p.category.clone(),
            x: p.x,
            y: p.y,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

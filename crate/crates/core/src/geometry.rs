//! Rotated and horizontal box primitives.
//!
//! Coordinate frame: origin at the top-left image corner, x to the right,
//! y down. An angle `theta` is measured from the +x axis to the box's
//! w-edge, positive clockwise on screen (the usual rotation matrix applied
//! to y-down coordinates). Angles are kept in the half-open range
//! `[-pi/2, pi/2)` ("le90").

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::TransformSpec;

/// Boxes with an area below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Wraps an angle into `[-pi/2, pi/2)`, i.e. `((x + pi/2) mod pi) - pi/2`.
///
/// Values already inside the range are returned unchanged, so the
/// function is exactly idempotent.
pub fn normalize_angle(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(wrap_angle(x))
}

/// Infallible variant of [`normalize_angle`] for internal hot paths.
/// Non-finite input yields NaN.
#[inline]
pub(crate) fn wrap_angle(x: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&x) {
        return x;
    }
    let r = (x + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can round up to exactly pi for tiny negative inputs
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    #[inline]
    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn l1_distance(self, o: Point) -> f64 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }
}

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn center(&self) -> Point {
        Point::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Oriented box: center `(x, y)`, extents `w` (along the angle direction)
/// and `h`, angle `theta` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { x, y, w, h, theta }
    }

    /// Checks `w > 0`, `h > 0` and that every field is finite.
    pub fn validate(&self) -> Result<()> {
        let all = [self.x, self.y, self.w, self.h, self.theta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box parameter"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "extents must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    /// Same box with its angle wrapped into `[-pi/2, pi/2)`.
    pub fn normalized(&self) -> RBox {
        RBox {
            theta: wrap_angle(self.theta),
            ..*self
        }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> RBox {
        RBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Unit vectors along the w-edge and the h-edge.
    #[inline]
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.theta.sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    /// Corners with positive shoelace orientation.
    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        let at = |a: f64, b: f64| {
            Point::new(
                self.x + a * hw * u.x + b * hh * v.x,
                self.y + a * hw * u.y + b * hh * v.y,
            )
        };
        [at(1.0, 1.0), at(-1.0, 1.0), at(-1.0, -1.0), at(1.0, -1.0)]
    }

    /// Half extents of the circumscribed axis-aligned box.
    #[inline]
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        ((hw * c).abs() + (hh * s).abs(), (hw * s).abs() + (hh * c).abs())
    }

    /// Whether a point lies inside the closed box.
    pub fn contains(&self, p: Point) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center());
        d.dot(u).abs() <= self.w / 2.0 && d.dot(v).abs() <= self.h / 2.0
    }
}

/// Axis-aligned box given by its extreme coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl HBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// All coordinates multiplied by `s` (scaling about the origin).
    pub fn scaled(&self, s: f64) -> HBox {
        HBox::new(self.x_min * s, self.y_min * s, self.x_max * s, self.y_max * s)
    }

    pub fn union(&self, o: &HBox) -> HBox {
        HBox::new(
            self.x_min.min(o.x_min),
            self.y_min.min(o.y_min),
            self.x_max.max(o.x_max),
            self.y_max.max(o.y_max),
        )
    }
}

/// The circumscribed horizontal box of a rotated box.
pub fn rbox_to_hbox(b: &RBox) -> HBox {
    let (ex, ey) = b.half_extents();
    HBox::new(b.x - ex, b.y - ey, b.x + ex, b.y + ey)
}

/// Generalized IoU of two horizontal boxes, in `(-1, 1]`.
pub fn hbox_giou(a: &HBox, b: &HBox) -> Result<f64> {
    let area_a = a.area();
    let area_b = b.area();
    if area_a < DEGENERATE_AREA && area_b < DEGENERATE_AREA {
        return Err(Error::DegenerateBoxes);
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    let enclosing = a.union(b).area();
    Ok(inter / union - (enclosing - union) / enclosing)
}

/// Convex quadrilateral with positive signed area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPolygon {
    vertices: [Point; 4],
}

impl QuadPolygon {
    /// Accepts any vertex order that forms a convex quadrilateral;
    /// clockwise input is reversed.
    pub fn new(mut vertices: [Point; 4]) -> Result<Self> {
        let area = signed_area(&vertices);
        if area.abs() < DEGENERATE_AREA {
            return Err(Error::InvalidBox("quadrilateral has no area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let convex = (0..4).all(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % 4];
            let c = vertices[(i + 2) % 4];
            b.sub(a).cross(c.sub(b)) >= -1e-9 * area.abs()
        });
        if !convex {
            return Err(Error::InvalidBox("quadrilateral is not convex".into()));
        }
        Ok(Self { vertices })
    }

    pub fn from_rbox(b: &RBox) -> Self {
        Self {
            vertices: b.corners(),
        }
    }

    pub fn vertices(&self) -> &[Point; 4] {
        &self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }
}

/// Minimum-area enclosing rotated box of a point set, in le90 form.
///
/// Among hull edges giving the same minimal area the one with the smallest
/// `|theta|` wins, so axis-aligned rectangles come out with `theta = 0`.
pub fn min_area_rbox(points: &[Point]) -> Result<RBox> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("polygon coordinate"));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 || signed_area(&hull).abs() < DEGENERATE_AREA {
        return Err(Error::InvalidBox("polygon is degenerate".into()));
    }
    let mut best: Option<(f64, RBox)> = None;
    for i in 0..hull.len() {
        let e = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = e.dot(e).sqrt();
        if len == 0.0 {
            continue;
        }
        let mut u = Point::new(e.x / len, e.y / len);
        if !(u.x > 0.0 || (u.x == 0.0 && u.y < 0.0)) {
            u = Point::new(-u.x, -u.y);
        }
        let v = Point::new(-u.y, u.x);
        let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let pu = p.dot(u);
            let pv = p.dot(v);
            u0 = u0.min(pu);
            u1 = u1.max(pu);
            v0 = v0.min(pv);
            v1 = v1.max(pv);
        }
        let (cu, cv) = ((u0 + u1) / 2.0, (v0 + v1) / 2.0);
        let theta = wrap_angle(u.y.atan2(u.x));
        let cand = RBox::new(
            cu * u.x + cv * v.x,
            cu * u.y + cv * v.y,
            u1 - u0,
            v1 - v0,
            theta,
        );
        let area = cand.area();
        best = match best {
            None => Some((area, cand)),
            Some((ba, bb)) => {
                let tol = 1e-9 * ba.max(area);
                if area < ba - tol || (area <= ba + tol && theta.abs() < bb.theta.abs() - 1e-12) {
                    Some((area, cand))
                } else {
                    Some((ba, bb))
                }
            }
        };
    }
    best.map(|(_, b)| b)
        .ok_or_else(|| Error::InvalidBox("polygon is degenerate".into()))
}

fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2
            && lower[lower.len() - 1]
                .sub(lower[lower.len() - 2])
                .cross(p.sub(lower[lower.len() - 1]))
                <= 0.0
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2
            && upper[upper.len() - 1]
                .sub(upper[upper.len() - 2])
                .cross(p.sub(upper[upper.len() - 1]))
                <= 0.0
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    acc / 2.0
}

/// Clips `subject` against every edge of the convex, positively oriented
/// polygon `clip` (Sutherland-Hodgman).
fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let mut input: Vec<Point> = Vec::with_capacity(8);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let p = clip[i];
        let q = clip[(i + 1) % clip.len()];
        let edge = q.sub(p);
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let side = |x: Point| edge.cross(x.sub(p));
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(segment_cross(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(segment_cross(prev, cur, sp, sc));
            }
        }
    }
    output
}

#[inline]
fn segment_cross(a: Point, b: Point, sa: f64, sb: f64) -> Point {
    let t = sa / (sa - sb);
    Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
}

/// Area of the intersection of two rotated boxes.
pub fn intersection_area(a: &RBox, b: &RBox) -> f64 {
    let (ax, ay) = a.half_extents();
    let (bx, by) = b.half_extents();
    if (a.x - b.x).abs() > ax + bx || (a.y - b.y).abs() > ay + by {
        return 0.0;
    }
    let poly = clip_convex(&a.corners(), &b.corners());
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(&poly).max(0.0)
}

/// Exact IoU of two rotated boxes via convex clipping and the shoelace
/// formula. Degenerate boxes have IoU 0.
pub fn rotated_iou(a: &RBox, b: &RBox) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if !(area_a >= DEGENERATE_AREA && area_b >= DEGENERATE_AREA) {
        return 0.0;
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Brute-force reference IoU: counts grid-cell centers inside each box on a
/// `resolution x resolution` grid spanning both boxes.
///
/// Each grid row is resolved analytically into the x-interval covered by
/// each box, so the cost is linear in `resolution`. Shares no code with
/// [`rotated_iou`].
pub fn raster_iou(a: &RBox, b: &RBox, resolution: usize) -> f64 {
    let res = resolution.max(1);
    let region = rbox_to_hbox(a).union(&rbox_to_hbox(b));
    let dx = region.width() / res as f64;
    let dy = region.height() / res as f64;
    if !(dx > 0.0 && dy > 0.0) {
        return 0.0;
    }
    let (mut na, mut nb, mut nab) = (0u64, 0u64, 0u64);
    for j in 0..res {
        let y = region.y_min + (j as f64 + 0.5) * dy;
        let ia = row_interval(a, y);
        let ib = row_interval(b, y);
        na += count_centers(ia, region.x_min, dx, res);
        nb += count_centers(ib, region.x_min, dx, res);
        if let (Some((a0, a1)), Some((b0, b1))) = (ia, ib) {
            nab += count_centers(Some((a0.max(b0), a1.min(b1))), region.x_min, dx, res);
        }
    }
    let union = na + nb - nab;
    if union == 0 {
        0.0
    } else {
        nab as f64 / union as f64
    }
}

/// x-interval of the horizontal line at height `y` inside the box.
fn row_interval(b: &RBox, y: f64) -> Option<(f64, f64)> {
    let (u, v) = b.axes();
    let dy = y - b.y;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (axis, half) in [(u, b.w / 2.0), (v, b.h / 2.0)] {
        // constraint: |(x - cx) * axis.x + dy * axis.y| <= half
        let off = dy * axis.y;
        if axis.x.abs() < 1e-15 {
            if off.abs() > half {
                return None;
            }
            continue;
        }
        let t0 = (-half - off) / axis.x;
        let t1 = (half - off) / axis.x;
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (lo <= hi).then_some((b.x + lo, b.x + hi))
}

fn count_centers(iv: Option<(f64, f64)>, x0: f64, dx: f64, res: usize) -> u64 {
    let Some((lo, hi)) = iv else { return 0 };
    if lo > hi {
        return 0;
    }
    let first = ((lo - x0) / dx - 0.5).ceil().max(0.0);
    let last = ((hi - x0) / dx - 0.5).floor().min(res as f64 - 1.0);
    if last < first {
        0
    } else {
        (last - first) as u64 + 1
    }
}

/// Greedy rotated non-maximum suppression.
///
/// Returns kept indices in descending score order; equal scores keep the
/// lower index first. A box is suppressed when its IoU with an already
/// kept box exceeds `iou_threshold`.
pub fn rotated_nms(boxes: &[(RBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[j].1.total_cmp(&boxes[i].1).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let b = &boxes[i].0;
        if kept
            .iter()
            .all(|&k| rotated_iou(&boxes[k].0, b) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Maps a box through the same transform applied to the image.
///
/// * flip: vertical, `y -> H - y`, `theta -> -theta`
/// * rotate by `R`: rigid rotation about the image center, `theta -> theta + R`
/// * scale by `s`: about the origin, every length multiplied by `s`
pub fn transform_rbox(b: &RBox, t: &TransformSpec, image: ImageSize) -> RBox {
    match *t {
        TransformSpec::Flip => RBox::new(
            b.x,
            image.height as f64 - b.y,
            b.w,
            b.h,
            wrap_angle(-b.theta),
        ),
        TransformSpec::Rotate(r) => {
            let c = image.center();
            let (s, co) = r.sin_cos();
            let (dx, dy) = (b.x - c.x, b.y - c.y);
            RBox::new(
                c.x + co * dx - s * dy,
                c.y + s * dx + co * dy,
                b.w,
                b.h,
                wrap_angle(b.theta + r),
            )
        }
        TransformSpec::Scale(s) => RBox::new(b.x * s, b.y * s, b.w * s, b.h * s, b.theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(normalize_angle(PI).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(normalize_angle(0.6 * PI).unwrap(), -0.4 * PI, epsilon = 1e-15);
        assert_eq!(normalize_angle(FRAC_PI_2).unwrap(), -FRAC_PI_2);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn normalize_tiny_negative_stays_in_range() {
        let x = -FRAC_PI_2 - 1e-17;
        let r = normalize_angle(x).unwrap();
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&r));
        let r = normalize_angle(-1e-300 - PI / 2.0 * 3.0).unwrap();
        assert!((-FRAC_PI_2..FRAC_PI_2).contains(&r));
    }

    #[test]
    fn hbox_examples() {
        let h = rbox_to_hbox(&RBox::new(0.0, 0.0, 4.0, 2.0, 0.0));
        assert_eq!(h, HBox::new(-2.0, -1.0, 2.0, 1.0));
        let h = rbox_to_hbox(&RBox::new(0.0, 0.0, 4.0, 2.0, FRAC_PI_2));
        assert_abs_diff_eq!(h.x_min, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.y_min, -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.x_max, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.y_max, 2.0, epsilon = 1e-12);
        let h = rbox_to_hbox(&RBox::new(0.0, 0.0, SQRT_2, SQRT_2, FRAC_PI_4));
        assert_abs_diff_eq!(h.x_min, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.y_max, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hbox_area_bounds_rbox_area() {
        for t in [0.0, -FRAC_PI_2] {
            let b = RBox::new(5.0, 5.0, 3.0, 3.0, t);
            assert_abs_diff_eq!(rbox_to_hbox(&b).area(), b.area(), epsilon = 1e-12);
        }
        for i in 0..64 {
            let t = -FRAC_PI_2 + PI * i as f64 / 64.0;
            let b = RBox::new(0.0, 0.0, 7.0, 2.5, t);
            assert!(rbox_to_hbox(&b).area() >= b.area() - 1e-12);
        }
    }

    #[test]
    fn corners_positive_orientation() {
        let b = RBox::new(3.0, -2.0, 5.0, 1.5, 0.7);
        let q = QuadPolygon::from_rbox(&b);
        assert_abs_diff_eq!(q.signed_area(), b.area(), epsilon = 1e-12);
    }

    #[test]
    fn iou_examples() {
        let a = RBox::new(10.0, 10.0, 6.0, 3.0, 0.3);
        assert_abs_diff_eq!(rotated_iou(&a, &a), 1.0, epsilon = 1e-12);
        let b = RBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let c = RBox::new(100.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(rotated_iou(&b, &c), 0.0);
        let sq = RBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
        let rot = RBox::new(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        assert_abs_diff_eq!(rotated_iou(&sq, &rot), SQRT_2 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_of_period_equivalent_boxes() {
        let a = RBox::new(5.0, 5.0, 8.0, 3.0, 0.4);
        let b = RBox::new(5.0, 5.0, 8.0, 3.0, 0.4 - PI);
        let c = RBox::new(5.0, 5.0, 3.0, 8.0, 0.4 + FRAC_PI_2);
        assert_abs_diff_eq!(rotated_iou(&a, &b), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rotated_iou(&a, &c), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_iou_is_zero() {
        let a = RBox::new(0.0, 0.0, 0.0, 3.0, 0.0);
        let b = RBox::new(0.0, 0.0, 2.0, 3.0, 0.0);
        assert_eq!(rotated_iou(&a, &b), 0.0);
        assert_eq!(rotated_iou(&a, &a), 0.0);
    }

    #[test]
    fn raster_examples() {
        let a = RBox::new(10.0, 10.0, 6.0, 3.0, 0.3);
        assert_abs_diff_eq!(raster_iou(&a, &a, 1000), 1.0, epsilon = 1e-3);
        let b = RBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let c = RBox::new(100.0, 0.0, 2.0, 2.0, 0.0);
        assert_eq!(raster_iou(&b, &c, 1000), 0.0);
        let sq = RBox::new(0.0, 0.0, 1.0, 1.0, 0.0);
        let rot = RBox::new(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        assert_abs_diff_eq!(raster_iou(&sq, &rot, 2000), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-3);
    }

    #[test]
    fn giou_examples() {
        let u = HBox::new(0.0, 0.0, 1.0, 1.0);
        assert_abs_diff_eq!(hbox_giou(&u, &u).unwrap(), 1.0);
        let t = HBox::new(1.0, 0.0, 2.0, 1.0);
        assert_abs_diff_eq!(hbox_giou(&u, &t).unwrap(), 0.0);
        let f = HBox::new(2.0, 0.0, 3.0, 1.0);
        assert_abs_diff_eq!(hbox_giou(&u, &f).unwrap(), -1.0 / 3.0, epsilon = 1e-15);
        let z = HBox::new(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(hbox_giou(&z, &z), Err(Error::DegenerateBoxes)));
        assert!(hbox_giou(&z, &u).is_ok());
    }

    #[test]
    fn nms_examples() {
        let b = RBox::new(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(rotated_nms(&[(b, 0.8), (b, 0.9)], 0.05), vec![1]);
        let far = RBox::new(100.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(rotated_nms(&[(b, 0.8), (far, 0.9)], 0.05), vec![1, 0]);
    }

    #[test]
    fn nms_chain_hand_trace() {
        // IoU(A,B) = 7.5/12.5 = 0.6, IoU(B,C) = 2.5/11.5, A and C only touch.
        let a = RBox::new(5.0, 0.5, 10.0, 1.0, 0.0);
        let b = RBox::new(7.5, 0.5, 10.0, 1.0, 0.0);
        let c = RBox::new(12.0, 0.5, 4.0, 1.0, 0.0);
        assert_abs_diff_eq!(rotated_iou(&a, &b), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(rotated_iou(&b, &c), 2.5 / 11.5, epsilon = 1e-12);
        assert_eq!(rotated_iou(&a, &c), 0.0);
        let kept = rotated_nms(&[(a, 0.9), (b, 0.8), (c, 0.7)], 0.5);
        assert_eq!(kept, vec![0, 2]);
        // a lower threshold lets B suppress C only if B survives; it does not
        let kept = rotated_nms(&[(a, 0.9), (b, 0.8), (c, 0.7)], 0.2);
        assert_eq!(kept, vec![0, 2]);
    }
}

//! Loss terms for point supervision, synthetic-box regression and
//! transform self-supervision, with analytic gradients with respect to the
//! box parameters `(x, y, w, h, theta)`.
//!
//! All angle residuals are wrapped into `[-pi/2, pi/2)` before the
//! smooth-L1 penalty, so every loss is pi-periodic in each angle.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::AnchorMatch;
use crate::error::{Error, Result};
use crate::geometry::{rbox_to_hbox, wrap_angle, Point, RBox, DEGENERATE_AREA};
use crate::transform::{TransformKind, TransformSpec};

/// Smooth-L1 transition point used when none is given.
pub const DEFAULT_BETA: f64 = 1.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// `0.5 (x - t)^2 / beta` inside `|x - t| < beta`, `|x - t| - beta / 2` outside.
#[inline]
pub fn smooth_l1(x: f64, target: f64, beta: f64) -> f64 {
    let d = (x - target).abs();
    if d < beta {
        0.5 * d * d / beta
    } else {
        d - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1`] with respect to `x`.
#[inline]
pub fn smooth_l1_grad(x: f64, target: f64, beta: f64) -> f64 {
    let d = x - target;
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub cen: f64,
    pub box_reg: f64,
    /// Self-supervision weight for flip and rotate views.
    pub ss_angle: f64,
    /// Self-supervision weight for scaled views.
    pub ss_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            cen: 0.1,
            box_reg: 1.0,
            ss_angle: 0.3,
            ss_scale: 0.02,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cls, self.cen, self.box_reg, self.ss_angle, self.ss_scale];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn ss_weight(&self, kind: TransformKind) -> f64 {
        match kind {
            TransformKind::Flip | TransformKind::Rotate => self.ss_angle,
            TransformKind::Scale => self.ss_scale,
        }
    }
}

/// Flip consistency: `smooth_l1(mod(theta_trs + theta_ori), 0)`.
pub fn loss_flip(theta_ori: f64, theta_trs: f64) -> f64 {
    flip_loss_grad(theta_ori, theta_trs, DEFAULT_BETA).0
}

/// Value and `[d/d theta_ori, d/d theta_trs]`.
pub fn flip_loss_grad(theta_ori: f64, theta_trs: f64, beta: f64) -> (f64, [f64; 2]) {
    let r = wrap_angle(theta_trs + theta_ori);
    let g = smooth_l1_grad(r, 0.0, beta);
    (smooth_l1(r, 0.0, beta), [g, g])
}

/// Rotation consistency. The residual `mod(theta_trs - theta_ori) - R` is
/// wrapped a second time, so the loss vanishes whenever
/// `theta_trs == theta_ori + R (mod pi)` for any `R`.
pub fn loss_rotate(theta_ori: f64, theta_trs: f64, rotation: f64) -> f64 {
    rotate_loss_grad(theta_ori, theta_trs, rotation, DEFAULT_BETA).0
}

pub fn rotate_loss_grad(theta_ori: f64, theta_trs: f64, rotation: f64, beta: f64) -> (f64, [f64; 2]) {
    let r = rotate_residual(theta_ori, theta_trs, rotation);
    let g = smooth_l1_grad(r, 0.0, beta);
    (smooth_l1(r, 0.0, beta), [-g, g])
}

/// Wrapped angular residual of a rotate pair; zero at consistency.
pub fn rotate_residual(theta_ori: f64, theta_trs: f64, rotation: f64) -> f64 {
    wrap_angle(wrap_angle(theta_trs - theta_ori) - rotation)
}

/// Scale consistency as a GIoU loss: `1 - GIoU(r2h(b_ori) * s, r2h(b_trs))`.
pub fn loss_scale(b_ori: &RBox, b_trs: &RBox, s: f64) -> Result<f64> {
    scale_loss_grad(b_ori, b_trs, s).map(|(v, _, _)| v)
}

/// Value and gradients with respect to both boxes.
pub fn scale_loss_grad(b_ori: &RBox, b_trs: &RBox, s: f64) -> Result<(f64, [f64; 5], [f64; 5])> {
    let ho = HalfExtentGrad::of(b_ori);
    let ht = HalfExtentGrad::of(b_trs);
    let a = [
        s * (b_ori.x - ho.ex),
        s * (b_ori.y - ho.ey),
        s * (b_ori.x + ho.ex),
        s * (b_ori.y + ho.ey),
    ];
    let b = [b_trs.x - ht.ex, b_trs.y - ht.ey, b_trs.x + ht.ex, b_trs.y + ht.ey];
    let (g, ga, gb) = giou_grad(&a, &b)?;
    let mut d_ori = chain_hbox(&ho, &ga);
    for v in d_ori.iter_mut() {
        *v *= -s;
    }
    let mut d_trs = chain_hbox(&ht, &gb);
    for v in d_trs.iter_mut() {
        *v = -*v;
    }
    Ok((1.0 - g, d_ori, d_trs))
}

/// Half extents of the circumscribed HBox and their partial derivatives
/// with respect to `(w, h, theta)`.
struct HalfExtentGrad {
    ex: f64,
    ey: f64,
    dex: [f64; 3],
    dey: [f64; 3],
}

impl HalfExtentGrad {
    fn of(b: &RBox) -> Self {
        let (s, c) = b.theta.sin_cos();
        let (hw, hh) = (b.w / 2.0, b.h / 2.0);
        let (sc, ss) = (c.signum(), s.signum());
        Self {
            ex: (hw * c).abs() + (hh * s).abs(),
            ey: (hw * s).abs() + (hh * c).abs(),
            dex: [0.5 * c.abs(), 0.5 * s.abs(), -hw * sc * s + hh * ss * c],
            dey: [0.5 * s.abs(), 0.5 * c.abs(), hw * ss * c - hh * sc * s],
        }
    }
}

/// Pulls a gradient over `(x_min, y_min, x_max, y_max)` back to `(x, y, w, h, theta)`.
fn chain_hbox(h: &HalfExtentGrad, g: &[f64; 4]) -> [f64; 5] {
    let dx = g[0] + g[2];
    let dy = g[1] + g[3];
    let mut out = [dx, dy, 0.0, 0.0, 0.0];
    for k in 0..3 {
        out[2 + k] = (g[2] - g[0]) * h.dex[k] + (g[3] - g[1]) * h.dey[k];
    }
    out
}

/// GIoU of two HBoxes given as `[x_min, y_min, x_max, y_max]` with its
/// gradient with respect to each box's coordinates.
fn giou_grad(a: &[f64; 4], b: &[f64; 4]) -> Result<(f64, [f64; 4], [f64; 4])> {
    let (aw, ah) = (a[2] - a[0], a[3] - a[1]);
    let (bw, bh) = (b[2] - b[0], b[3] - b[1]);
    let area_a = aw.max(0.0) * ah.max(0.0);
    let area_b = bw.max(0.0) * bh.max(0.0);
    if area_a < DEGENERATE_AREA && area_b < DEGENERATE_AREA {
        return Err(Error::DegenerateBoxes);
    }
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    let overlap = iw > 0.0 && ih > 0.0;
    let inter = if overlap { iw * ih } else { 0.0 };
    let union = area_a + area_b - inter;
    let cw = a[2].max(b[2]) - a[0].min(b[0]);
    let ch = a[3].max(b[3]) - a[1].min(b[1]);
    let enclosing = cw * ch;
    let giou = inter / union - 1.0 + union / enclosing;

    let d_inter = 1.0 / union + inter / (union * union) - 1.0 / enclosing;
    let d_area = -inter / (union * union) + 1.0 / enclosing;
    let d_encl = -union / (enclosing * enclosing);

    let mut ga = [0.0; 4];
    let mut gb = [0.0; 4];
    // areas
    ga[0] -= d_area * ah;
    ga[2] += d_area * ah;
    ga[1] -= d_area * aw;
    ga[3] += d_area * aw;
    gb[0] -= d_area * bh;
    gb[2] += d_area * bh;
    gb[1] -= d_area * bw;
    gb[3] += d_area * bw;
    // intersection
    if overlap {
        let (fx, fy) = (d_inter * ih, d_inter * iw);
        if a[2] <= b[2] { ga[2] += fx } else { gb[2] += fx }
        if a[0] >= b[0] { ga[0] -= fx } else { gb[0] -= fx }
        if a[3] <= b[3] { ga[3] += fy } else { gb[3] += fy }
        if a[1] >= b[1] { ga[1] -= fy } else { gb[1] -= fy }
    }
    // enclosing box
    let (ex, ey) = (d_encl * ch, d_encl * cw);
    if a[2] >= b[2] { ga[2] += ex } else { gb[2] += ex }
    if a[0] <= b[0] { ga[0] -= ex } else { gb[0] -= ex }
    if a[3] >= b[3] { ga[3] += ey } else { gb[3] += ey }
    if a[1] <= b[1] { ga[1] -= ey } else { gb[1] -= ey }
    Ok((giou, ga, gb))
}

/// Rotated-box regression loss of one prediction against a target:
/// smooth-L1 over the size-normalized center offsets, the log size ratios
/// and the wrapped angle difference.
pub fn box_pair_loss(pred: &RBox, gt: &RBox, beta: f64, w_angle: f64) -> f64 {
    box_pair_loss_grad(pred, gt, beta, w_angle).0
}

/// Value and gradient with respect to the prediction.
pub fn box_pair_loss_grad(pred: &RBox, gt: &RBox, beta: f64, w_angle: f64) -> (f64, [f64; 5]) {
    let dx = (pred.x - gt.x) / gt.w;
    let dy = (pred.y - gt.y) / gt.h;
    let dw = (pred.w / gt.w).ln();
    let dh = (pred.h / gt.h).ln();
    let da = wrap_angle(pred.theta - gt.theta);
    let value = smooth_l1(dx, 0.0, beta)
        + smooth_l1(dy, 0.0, beta)
        + smooth_l1(dw, 0.0, beta)
        + smooth_l1(dh, 0.0, beta)
        + w_angle * smooth_l1(da, 0.0, beta);
    let grad = [
        smooth_l1_grad(dx, 0.0, beta) / gt.w,
        smooth_l1_grad(dy, 0.0, beta) / gt.h,
        smooth_l1_grad(dw, 0.0, beta) / pred.w,
        smooth_l1_grad(dh, 0.0, beta) / pred.h,
        w_angle * smooth_l1_grad(da, 0.0, beta),
    ];
    (value, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Original,
    Transformed,
}

/// Outputs of one branch for every anchor, together with the assignment
/// of each anchor (point-assigned, box-assigned or background).
#[derive(Debug, Clone)]
pub struct BranchPrediction {
    pub boxes: Vec<RBox>,
    pub class_scores: Vec<Vec<f64>>,
    pub matches: Vec<AnchorMatch>,
    pub branch: Branch,
}

impl BranchPrediction {
    pub fn validate(&self) -> Result<()> {
        let n = self.boxes.len();
        if self.class_scores.len() != n || self.matches.len() != n {
            return Err(Error::Misaligned(format!(
                "{} boxes, {} score rows, {} matches",
                n,
                self.class_scores.len(),
                self.matches.len()
            )));
        }
        if self
            .class_scores
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("class scores must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `M_point` as a boolean mask.
    pub fn point_mask(&self) -> Vec<bool> {
        self.matches.iter().map(|m| matches!(m, AnchorMatch::Point(_))).collect()
    }

    /// `M_box` as a boolean mask.
    pub fn box_mask(&self) -> Vec<bool> {
        self.matches.iter().map(|m| matches!(m, AnchorMatch::Box(_))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointLoss {
    pub cls: f64,
    pub cen: f64,
    /// Number of point-assigned predictions that contributed.
    pub count: usize,
}

/// Sigmoid focal loss summed over classes for one prediction.
pub fn focal_loss(scores: &[f64], label: usize, alpha: f64, gamma: f64) -> f64 {
    const EPS: f64 = 1e-12;
    scores
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if c == label {
                -alpha * (1.0 - p).powf(gamma) * p.ln()
            } else {
                -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
            }
        })
        .sum()
}

/// Classification and center losses over point-assigned predictions.
///
/// `L_cls` is the focal loss averaged over assigned predictions; `L_cen` is
/// the L1 center distance averaged over predictions and coordinates.
pub fn loss_point(pred: &BranchPrediction, gt_points: &[(Point, usize)]) -> Result<PointLoss> {
    pred.validate()?;
    let mut out = PointLoss::default();
    for (i, m) in pred.matches.iter().enumerate() {
        let AnchorMatch::Point(j) = *m else { continue };
        let (pt, label) = gt_points
            .get(j)
            .ok_or_else(|| Error::Misaligned(format!("point ground truth {j} does not exist")))?;
        let scores = &pred.class_scores[i];
        if *label >= scores.len() {
            return Err(Error::Misaligned(format!(
                "label {label} outside {} class scores",
                scores.len()
            )));
        }
        out.cls += focal_loss(scores, *label, FOCAL_ALPHA, FOCAL_GAMMA);
        let b = &pred.boxes[i];
        out.cen += 0.5 * ((b.x - pt.x).abs() + (b.y - pt.y).abs());
        out.count += 1;
    }
    if out.count > 0 {
        out.cls /= out.count as f64;
        out.cen /= out.count as f64;
    }
    Ok(out)
}

/// Mean box regression loss over box-assigned predictions.
pub fn loss_box(pred: &BranchPrediction, gt_boxes: &[(RBox, usize)]) -> Result<f64> {
    pred.validate()?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, m) in pred.matches.iter().enumerate() {
        let AnchorMatch::Box(j) = *m else { continue };
        let (gt, _) = gt_boxes
            .get(j)
            .ok_or_else(|| Error::Misaligned(format!("box ground truth {j} does not exist")))?;
        total += box_pair_loss(&pred.boxes[i], gt, DEFAULT_BETA, 1.0);
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Self-supervision loss between the two branches for the transform that
/// produced the second view. Only point-assigned (real object) predictions
/// take part; both branches must assign the same point to the same index.
pub fn loss_ss(pred_ori: &BranchPrediction, pred_trs: &BranchPrediction, t: &TransformSpec) -> Result<f64> {
    pred_ori.validate()?;
    pred_trs.validate()?;
    if pred_ori.branch != Branch::Original || pred_trs.branch != Branch::Transformed {
        return Err(Error::Misaligned("branch tags must be (original, transformed)".into()));
    }
    if pred_ori.boxes.len() != pred_trs.boxes.len() {
        return Err(Error::Misaligned(format!(
            "{} original vs {} transformed predictions",
            pred_ori.boxes.len(),
            pred_trs.boxes.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, (mo, mt)) in pred_ori.matches.iter().zip(&pred_trs.matches).enumerate() {
        match (mo, mt) {
            (AnchorMatch::Point(a), AnchorMatch::Point(b)) if a == b => {}
            (AnchorMatch::Point(_), _) | (_, AnchorMatch::Point(_)) => {
                return Err(Error::Misaligned(format!(
                    "index {i}: {mo:?} in original branch vs {mt:?} in transformed branch"
                )));
            }
            _ => continue,
        }
        let (bo, bt) = (&pred_ori.boxes[i], &pred_trs.boxes[i]);
        total += pair_ss_loss(bo, bt, t)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Transform loss of a single (original, transformed) box pair.
pub fn pair_ss_loss(b_ori: &RBox, b_trs: &RBox, t: &TransformSpec) -> Result<f64> {
    Ok(match *t {
        TransformSpec::Flip => loss_flip(b_ori.theta, b_trs.theta),
        TransformSpec::Rotate(r) => loss_rotate(b_ori.theta, b_trs.theta, r),
        TransformSpec::Scale(s) => loss_scale(b_ori, b_trs, s)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub cls: f64,
    pub cen: f64,
    pub box_reg: f64,
    pub ss: f64,
}

/// Weighted sum; the self-supervision weight depends on the transform kind.
pub fn total_loss(parts: &LossParts, weights: &LossWeights, kind: TransformKind) -> f64 {
    weights.cls * parts.cls
        + weights.cen * parts.cen
        + weights.box_reg * parts.box_reg
        + weights.ss_weight(kind) * parts.ss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossName {
    SmoothL1,
    Flip,
    Rotate,
    Scale,
    Box,
}

impl LossName {
    pub const ALL: [LossName; 5] = [
        LossName::SmoothL1,
        LossName::Flip,
        LossName::Rotate,
        LossName::Scale,
        LossName::Box,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossName::SmoothL1 => "smooth_l1",
            LossName::Flip => "loss_flip",
            LossName::Rotate => "loss_rotate",
            LossName::Scale => "loss_scale",
            LossName::Box => "loss_box",
        }
    }
}

/// A loss together with the point at which its gradient is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheckCase {
    SmoothL1 { x: f64, target: f64, beta: f64 },
    Flip { theta_ori: f64, theta_trs: f64 },
    Rotate { theta_ori: f64, theta_trs: f64, rotation: f64 },
    Scale { ori: RBox, trs: RBox, factor: f64 },
    Box { pred: RBox, gt: RBox },
}

fn rbox_params(b: &RBox) -> [f64; 5] {
    [b.x, b.y, b.w, b.h, b.theta]
}

fn rbox_from(p: &[f64]) -> RBox {
    RBox::new(p[0], p[1], p[2], p[3], p[4])
}

/// Distance from `x` to the nearest point of the lattice `offset + k * period`.
fn lattice_distance(x: f64, offset: f64, period: f64) -> f64 {
    let y = x - offset;
    (y - period * (y / period).round()).abs()
}

impl GradCheckCase {
    pub fn name(&self) -> LossName {
        match self {
            GradCheckCase::SmoothL1 { .. } => LossName::SmoothL1,
            GradCheckCase::Flip { .. } => LossName::Flip,
            GradCheckCase::Rotate { .. } => LossName::Rotate,
            GradCheckCase::Scale { .. } => LossName::Scale,
            GradCheckCase::Box { .. } => LossName::Box,
        }
    }

    /// The free parameters that are differentiated.
    pub fn params(&self) -> Vec<f64> {
        match self {
            GradCheckCase::SmoothL1 { x, .. } => vec![*x],
            GradCheckCase::Flip { theta_ori, theta_trs } => vec![*theta_ori, *theta_trs],
            GradCheckCase::Rotate { theta_ori, theta_trs, .. } => vec![*theta_ori, *theta_trs],
            GradCheckCase::Scale { ori, trs, .. } => {
                let mut v = rbox_params(ori).to_vec();
                v.extend(rbox_params(trs));
                v
            }
            GradCheckCase::Box { pred, .. } => rbox_params(pred).to_vec(),
        }
    }

    pub fn value_at(&self, p: &[f64]) -> Result<f64> {
        Ok(match self {
            GradCheckCase::SmoothL1 { target, beta, .. } => smooth_l1(p[0], *target, *beta),
            GradCheckCase::Flip { .. } => flip_loss_grad(p[0], p[1], DEFAULT_BETA).0,
            GradCheckCase::Rotate { rotation, .. } => rotate_loss_grad(p[0], p[1], *rotation, DEFAULT_BETA).0,
            GradCheckCase::Scale { factor, .. } => loss_scale(&rbox_from(&p[..5]), &rbox_from(&p[5..]), *factor)?,
            GradCheckCase::Box { gt, .. } => box_pair_loss(&rbox_from(p), gt, DEFAULT_BETA, 1.0),
        })
    }

    pub fn analytic_gradient(&self) -> Result<Vec<f64>> {
        Ok(match self {
            GradCheckCase::SmoothL1 { x, target, beta } => vec![smooth_l1_grad(*x, *target, *beta)],
            GradCheckCase::Flip { theta_ori, theta_trs } => {
                flip_loss_grad(*theta_ori, *theta_trs, DEFAULT_BETA).1.to_vec()
            }
            GradCheckCase::Rotate { theta_ori, theta_trs, rotation } => {
                rotate_loss_grad(*theta_ori, *theta_trs, *rotation, DEFAULT_BETA).1.to_vec()
            }
            GradCheckCase::Scale { ori, trs, factor } => {
                let (_, a, b) = scale_loss_grad(ori, trs, *factor)?;
                let mut v = a.to_vec();
                v.extend(b);
                v
            }
            GradCheckCase::Box { pred, gt } => box_pair_loss_grad(pred, gt, DEFAULT_BETA, 1.0).1.to_vec(),
        })
    }

    /// Smallest parameter-space distance to a point where the loss is not
    /// differentiable, with the kind of kink that is closest.
    pub fn kink_margin(&self) -> (f64, &'static str) {
        let beta = DEFAULT_BETA;
        let mut best = (f64::INFINITY, "none");
        let mut take = |m: f64, why: &'static str| {
            if m < best.0 {
                best = (m, why);
            }
        };
        match self {
            GradCheckCase::SmoothL1 { x, target, beta } => {
                take(((x - target).abs() - beta).abs(), "smooth-L1 transition");
            }
            GradCheckCase::Flip { theta_ori, theta_trs } => {
                let s = theta_ori + theta_trs;
                take(lattice_distance(s, -FRAC_PI_2, PI), "angle wrap");
                take((wrap_angle(s).abs() - beta).abs(), "smooth-L1 transition");
            }
            GradCheckCase::Rotate { theta_ori, theta_trs, rotation } => {
                let d = theta_trs - theta_ori;
                take(lattice_distance(d, -FRAC_PI_2, PI), "angle wrap");
                take(lattice_distance(wrap_angle(d) - rotation, -FRAC_PI_2, PI), "residual wrap");
                let r = rotate_residual(*theta_ori, *theta_trs, *rotation);
                take((r.abs() - beta).abs(), "smooth-L1 transition");
            }
            GradCheckCase::Scale { ori, trs, factor } => {
                for b in [ori, trs] {
                    take(lattice_distance(b.theta, 0.0, FRAC_PI_2), "axis-aligned angle");
                    take(b.w.min(b.h), "vanishing extent");
                }
                let ha = rbox_to_hbox(ori).scaled(*factor);
                let hb = rbox_to_hbox(trs);
                let lip = (factor * (1.0f64).max((ori.w + ori.h) / 2.0)).max((1.0f64).max((trs.w + trs.h) / 2.0));
                let ties = [
                    (ha.x_min - hb.x_min).abs(),
                    (ha.x_max - hb.x_max).abs(),
                    (ha.y_min - hb.y_min).abs(),
                    (ha.y_max - hb.y_max).abs(),
                    (ha.x_max.min(hb.x_max) - ha.x_min.max(hb.x_min)).abs(),
                    (ha.y_max.min(hb.y_max) - ha.y_min.max(hb.y_min)).abs(),
                ];
                let m = ties.iter().cloned().fold(f64::INFINITY, f64::min);
                take(m / (2.0 * lip), "min/max tie in GIoU");
            }
            GradCheckCase::Box { pred, gt } => {
                take(((pred.x - gt.x).abs() - beta * gt.w).abs(), "smooth-L1 transition (x)");
                take(((pred.y - gt.y).abs() - beta * gt.h).abs(), "smooth-L1 transition (y)");
                for (p, g) in [(pred.w, gt.w), (pred.h, gt.h)] {
                    take((p - g * beta.exp()).abs(), "smooth-L1 transition (size)");
                    take((p - g * (-beta).exp()).abs(), "smooth-L1 transition (size)");
                    take(p, "vanishing extent");
                }
                let d = pred.theta - gt.theta;
                take(lattice_distance(d, -FRAC_PI_2, PI), "angle wrap");
                take((wrap_angle(d).abs() - beta).abs(), "smooth-L1 transition (angle)");
            }
        }
        best
    }

    /// A random evaluation point for the given loss that keeps at least
    /// `min_margin` away from every kink.
    pub fn random_smooth<R: Rng + ?Sized>(name: LossName, rng: &mut R, min_margin: f64) -> Self {
        loop {
            let c = Self::random(name, rng);
            if c.kink_margin().0 >= min_margin {
                return c;
            }
        }
    }

    pub fn random<R: Rng + ?Sized>(name: LossName, rng: &mut R) -> Self {
        let angle = |rng: &mut R| rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        match name {
            LossName::SmoothL1 => GradCheckCase::SmoothL1 {
                x: rng.random_range(-3.0..3.0),
                target: rng.random_range(-1.0..1.0),
                beta: DEFAULT_BETA,
            },
            LossName::Flip => GradCheckCase::Flip {
                theta_ori: angle(rng),
                theta_trs: angle(rng),
            },
            LossName::Rotate => GradCheckCase::Rotate {
                theta_ori: angle(rng),
                theta_trs: angle(rng),
                rotation: rng.random_range(0.25 * PI..0.75 * PI),
            },
            LossName::Scale => {
                let ori = random_box(rng, 100.0, 10.0..80.0);
                let factor = rng.random_range(0.5..1.5);
                let mut trs = random_box(rng, 100.0, 10.0..80.0);
                trs.x = ori.x * factor + rng.random_range(-15.0..15.0);
                trs.y = ori.y * factor + rng.random_range(-15.0..15.0);
                GradCheckCase::Scale { ori, trs, factor }
            }
            LossName::Box => {
                let gt = random_box(rng, 100.0, 10.0..80.0);
                let pred = RBox::new(
                    gt.x + rng.random_range(-1.5..1.5) * gt.w,
                    gt.y + rng.random_range(-1.5..1.5) * gt.h,
                    gt.w * rng.random_range(-1.5f64..1.5).exp(),
                    gt.h * rng.random_range(-1.5f64..1.5).exp(),
                    angle(rng),
                );
                GradCheckCase::Box { pred, gt }
            }
        }
    }
}

fn random_box<R: Rng + ?Sized>(rng: &mut R, extent: f64, size: std::ops::Range<f64>) -> RBox {
    RBox::new(
        rng.random_range(0.0..extent),
        rng.random_range(0.0..extent),
        rng.random_range(size.clone()),
        rng.random_range(size),
        rng.random_range(-FRAC_PI_2..FRAC_PI_2),
    )
}

/// Compares the analytic gradient against central finite differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`. Points
/// closer than `10 * epsilon` to a kink are rejected.
pub fn grad_check(case: &GradCheckCase, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let (margin, reason) = case.kink_margin();
    let required = 10.0 * epsilon;
    if margin < required {
        return Err(Error::NearKink {
            margin,
            required,
            reason,
        });
    }
    let analytic = case.analytic_gradient()?;
    let mut p = case.params();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + epsilon;
        let up = case.value_at(&p)?;
        p[i] = orig - epsilon;
        let down = case.value_at(&p)?;
        p[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

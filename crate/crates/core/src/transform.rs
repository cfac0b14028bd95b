//! Transformed views for self-supervision and a small gradient-descent
//! fitting problem over free box parameters.
//!
//! The fitting problem stands in for the two weight-shared network branches:
//! every object carries independent `(x, y, w, h, theta)` parameters in
//! both views, synthetic objects are pulled toward their known boxes and
//! real objects are only tied to each other through the transform loss.

use std::f64::consts::PI;
use std::fmt::Write as _;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_rbox, wrap_angle, ImageSize, RBox};
use crate::losses::{
    box_pair_loss_grad, flip_loss_grad, rotate_loss_grad, rotate_residual, scale_loss_grad, LossWeights,
    DEFAULT_BETA,
};
use crate::raster::{mean_color, sample_bilinear, to_u8, Rgbf};

/// Probability of drawing a scale transform.
pub const SCALE_PROB: f64 = 0.30;
/// Rotate share of the remaining probability mass (rotate : flip = 95 : 5).
pub const ROTATE_SHARE: f64 = 0.95;
pub const ROTATION_RANGE: (f64, f64) = (0.25 * PI, 0.75 * PI);
pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    Flip,
    Rotate,
    Scale,
}

/// A view transform. Flips are vertical; rotations turn about the image
/// center by the given angle (radians); scales act about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TransformSpec {
    Flip,
    Rotate(f64),
    Scale(f64),
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Flip => TransformKind::Flip,
            TransformSpec::Rotate(_) => TransformKind::Rotate,
            TransformSpec::Scale(_) => TransformKind::Scale,
        }
    }
}

/// Draws scale with probability 0.30, otherwise rotate or flip at 95:5.
/// Rotation angles are uniform on `(pi/4, 3pi/4)`, scale factors on `(0.5, 1.5)`.
pub fn sample_transform<R: Rng + ?Sized>(rng: &mut R) -> TransformSpec {
    let u: f64 = rng.random();
    if u < SCALE_PROB {
        TransformSpec::Scale(open_uniform(rng, SCALE_RANGE))
    } else if u < SCALE_PROB + (1.0 - SCALE_PROB) * ROTATE_SHARE {
        TransformSpec::Rotate(open_uniform(rng, ROTATION_RANGE))
    } else {
        TransformSpec::Flip
    }
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Applies `t` to the image (fill for uncovered pixels: the image's mean
/// color) and maps the boxes consistently.
pub fn apply_transform(image: &RgbImage, boxes: &[RBox], t: &TransformSpec) -> (RgbImage, Vec<RBox>) {
    let fill = mean_color(image);
    apply_transform_with_fill(image, boxes, t, fill)
}

/// Like [`apply_transform`] with an explicit fill color.
///
/// Rotation keeps the canvas size (equivalent to expanding and center
/// cropping back). Scaling resizes the canvas to `round(s * size)`.
pub fn apply_transform_with_fill(image: &RgbImage, boxes: &[RBox], t: &TransformSpec, fill: Rgbf) -> (RgbImage, Vec<RBox>) {
    let size = ImageSize::new(image.width(), image.height());
    let out_boxes = boxes.iter().map(|b| transform_rbox(b, t, size)).collect();
    let out = match *t {
        TransformSpec::Flip => image::imageops::flip_vertical(image),
        TransformSpec::Rotate(r) => {
            let c = size.center();
            let (s, co) = r.sin_cos();
            RgbImage::from_fn(size.width, size.height, |i, j| {
                let dx = i as f64 + 0.5 - c.x;
                let dy = j as f64 + 0.5 - c.y;
                let sx = c.x + co * dx + s * dy;
                let sy = c.y - s * dx + co * dy;
                to_u8(sample_bilinear(image, sx, sy, fill))
            })
        }
        TransformSpec::Scale(s) => {
            let w = ((size.width as f64 * s).round() as u32).max(1);
            let h = ((size.height as f64 * s).round() as u32).max(1);
            RgbImage::from_fn(w, h, |i, j| {
                let sx = (i as f64 + 0.5) / s;
                let sy = (j as f64 + 0.5) / s;
                to_u8(sample_bilinear(image, sx, sy, fill))
            })
        }
    };
    (out, out_boxes)
}

/// Supervision of a fitted object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitRole {
    /// Synthetic pattern with a known box in the original view; its
    /// transformed-view target is the transformed box.
    Synthetic { target: RBox },
    /// Point-annotated object, supervised only by transform consistency.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitObject {
    pub ori: RBox,
    pub trs: RBox,
    pub role: FitRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Gradient step in normalized box coordinates.
    pub step: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub max_iters: usize,
    /// Abort after this many consecutive loss increases.
    pub divergence_window: usize,
    pub beta: f64,
    pub weights: LossWeights,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            step: 1.0,
            decay: 0.5,
            decay_every: 200,
            max_iters: 2000,
            divergence_window: 50,
            beta: DEFAULT_BETA,
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub objects: Vec<FitObject>,
    pub transform: TransformSpec,
    pub image: ImageSize,
    pub settings: FitSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss before each iteration, plus the final loss.
    pub losses: Vec<f64>,
    pub objects: Vec<FitObject>,
    /// Per object: worst absolute parameter error against the targets
    /// (synthetic) or the transform-consistency residual (real).
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(0.0)
    }

    /// `iteration,loss` lines with a header.
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{l:.12e}");
        }
        s
    }
}

/// Reference lengths that make the five parameters of a box comparable.
#[derive(Clone, Copy)]
struct Scale2 {
    w: f64,
    h: f64,
}

fn encode(b: &RBox, r: Scale2) -> [f64; 5] {
    [b.x / r.w, b.y / r.h, (b.w / r.w).ln(), (b.h / r.h).ln(), b.theta]
}

fn decode(q: &[f64], r: Scale2) -> RBox {
    RBox::new(q[0] * r.w, q[1] * r.h, q[2].exp() * r.w, q[3].exp() * r.h, q[4])
}

/// Gradient over `(x, y, w, h, theta)` mapped into the encoded coordinates.
fn pull_back(g: &[f64; 5], b: &RBox, r: Scale2) -> [f64; 5] {
    [g[0] * r.w, g[1] * r.h, g[2] * b.w, g[3] * b.h, g[4]]
}

struct Prepared {
    refs: Vec<(Scale2, Scale2)>,
    targets: Vec<Option<(RBox, RBox)>>,
    n_box_pairs: usize,
    n_real: usize,
}

impl FitProblem {
    fn prepare(&self) -> Prepared {
        let mut refs = Vec::new();
        let mut targets = Vec::new();
        let (mut n_box_pairs, mut n_real) = (0, 0);
        for o in &self.objects {
            match o.role {
                FitRole::Synthetic { target } => {
                    let tt = transform_rbox(&target, &self.transform, self.image);
                    refs.push((Scale2 { w: target.w, h: target.h }, Scale2 { w: tt.w, h: tt.h }));
                    targets.push(Some((target, tt)));
                    n_box_pairs += 2;
                }
                FitRole::Real => {
                    refs.push((Scale2 { w: o.ori.w, h: o.ori.h }, Scale2 { w: o.trs.w, h: o.trs.h }));
                    targets.push(None);
                    n_real += 1;
                }
            }
        }
        Prepared {
            refs,
            targets,
            n_box_pairs,
            n_real,
        }
    }

    fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            o.ori.validate().map_err(|e| Error::Config(format!("object {i}: {e}")))?;
            o.trs.validate().map_err(|e| Error::Config(format!("object {i}: {e}")))?;
            if let FitRole::Synthetic { target } = o.role {
                target.validate().map_err(|e| Error::Config(format!("object {i} target: {e}")))?;
            }
        }
        let s = &self.settings;
        if !(s.step > 0.0 && s.decay > 0.0 && s.beta > 0.0) || s.decay_every == 0 {
            return Err(Error::Config("step, decay, decay interval and beta must be positive".into()));
        }
        s.weights.validate()
    }

    /// Total loss and its gradient over the encoded parameters
    /// (10 per object: original view then transformed view).
    fn loss_and_grad(&self, prep: &Prepared, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s = &self.settings;
        let w_box = s.weights.box_reg;
        let w_ss = s.weights.ss_weight(self.transform.kind());
        let mut loss = 0.0;
        let mut grad = vec![0.0; q.len()];
        for (i, target) in prep.targets.iter().enumerate() {
            let (r_ori, r_trs) = prep.refs[i];
            let qo = &q[10 * i..10 * i + 5];
            let qt = &q[10 * i + 5..10 * i + 10];
            let bo = decode(qo, r_ori);
            let bt = decode(qt, r_trs);
            let (go, gt) = match target {
                Some((to, tt)) => {
                    let scale = w_box / prep.n_box_pairs as f64;
                    let (lo, go) = box_pair_loss_grad(&bo, to, s.beta, 1.0);
                    let (lt, gt) = box_pair_loss_grad(&bt, tt, s.beta, 1.0);
                    loss += scale * (lo + lt);
                    (go.map(|v| v * scale), gt.map(|v| v * scale))
                }
                None => {
                    let scale = w_ss / prep.n_real as f64;
                    let (l, go, gt) = match self.transform {
                        TransformSpec::Flip => {
                            let (l, g) = flip_loss_grad(bo.theta, bt.theta, s.beta);
                            (l, [0.0, 0.0, 0.0, 0.0, g[0]], [0.0, 0.0, 0.0, 0.0, g[1]])
                        }
                        TransformSpec::Rotate(r) => {
                            let (l, g) = rotate_loss_grad(bo.theta, bt.theta, r, s.beta);
                            (l, [0.0, 0.0, 0.0, 0.0, g[0]], [0.0, 0.0, 0.0, 0.0, g[1]])
                        }
                        TransformSpec::Scale(f) => scale_loss_grad(&bo, &bt, f)?,
                    };
                    loss += scale * l;
                    (go.map(|v| v * scale), gt.map(|v| v * scale))
                }
            };
            let po = pull_back(&go, &bo, r_ori);
            let pt = pull_back(&gt, &bt, r_trs);
            grad[10 * i..10 * i + 5].copy_from_slice(&po);
            grad[10 * i + 5..10 * i + 10].copy_from_slice(&pt);
        }
        Ok((loss, grad))
    }

    fn residual(&self, o: &FitObject) -> Result<f64> {
        Ok(match o.role {
            FitRole::Synthetic { target } => {
                let tt = transform_rbox(&target, &self.transform, self.image);
                box_error(&o.ori, &target).max(box_error(&o.trs, &tt))
            }
            FitRole::Real => match self.transform {
                TransformSpec::Flip => wrap_angle(o.trs.theta + o.ori.theta).abs(),
                TransformSpec::Rotate(r) => rotate_residual(o.ori.theta, o.trs.theta, r).abs(),
                TransformSpec::Scale(f) => scale_loss_grad(&o.ori, &o.trs, f)?.0,
            },
        })
    }
}

/// Largest absolute difference over the five box parameters, with the
/// angle difference wrapped.
pub fn box_error(a: &RBox, b: &RBox) -> f64 {
    [
        (a.x - b.x).abs(),
        (a.y - b.y).abs(),
        (a.w - b.w).abs(),
        (a.h - b.h).abs(),
        wrap_angle(a.theta - b.theta).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Plain gradient descent on the weighted box and self-supervision losses.
///
/// Parameters are optimized in normalized coordinates
/// `(x / w_ref, y / h_ref, ln(w / w_ref), ln(h / h_ref), theta)`, where the
/// reference size is the target box for synthetic objects and the initial
/// box for real ones. The step is multiplied by `decay` every
/// `decay_every` iterations.
pub fn fit_demo(problem: &FitProblem) -> Result<FitReport> {
    problem.validate()?;
    let prep = problem.prepare();
    let s = &problem.settings;
    let mut q: Vec<f64> = problem
        .objects
        .iter()
        .zip(&prep.refs)
        .flat_map(|(o, (ro, rt))| {
            let mut v = encode(&o.ori, *ro).to_vec();
            v.extend(encode(&o.trs, *rt));
            v
        })
        .collect();

    let mut losses = Vec::with_capacity(s.max_iters + 1);
    let mut rising = 0usize;
    let mut iterations = 0;
    for it in 0..s.max_iters {
        let (loss, grad) = problem.loss_and_grad(&prep, &q)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                from: losses.last().copied().unwrap_or(f64::NAN),
                to: loss,
                window: 1,
            });
        }
        if let Some(&prev) = losses.last() {
            if loss > prev {
                rising += 1;
                if rising >= s.divergence_window {
                    let from = losses[losses.len() - rising];
                    return Err(Error::Diverged {
                        iteration: it,
                        from,
                        to: loss,
                        window: rising,
                    });
                }
            } else {
                rising = 0;
            }
        }
        losses.push(loss);
        if grad.iter().all(|g| g.abs() < 1e-15) {
            break;
        }
        let step = s.step * s.decay.powi((it / s.decay_every) as i32);
        for (p, g) in q.iter_mut().zip(&grad) {
            *p -= step * g;
        }
        iterations = it + 1;
    }
    let (final_loss, _) = problem.loss_and_grad(&prep, &q)?;
    if iterations > 0 || losses.is_empty() {
        losses.push(final_loss);
    }

    let objects: Vec<FitObject> = problem
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (ro, rt) = prep.refs[i];
            FitObject {
                ori: decode(&q[10 * i..10 * i + 5], ro).normalized(),
                trs: decode(&q[10 * i + 5..10 * i + 10], rt).normalized(),
                role: o.role,
            }
        })
        .collect();
    let residuals = objects
        .iter()
        .map(|o| problem.residual(o))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitReport {
        losses,
        objects,
        residuals,
        iterations,
    })
}

//! Classification-score based label assignment on a single-level anchor
//! grid of fixed-size anchors.
//!
//! Each ground truth (annotated point or synthetic box) is matched to the
//! anchors whose predictions score highest on its class, restricted to
//! predictions whose center lies within an L1 distance of 32 px.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageSize, Point};

pub const DEFAULT_STRIDE: u32 = 16;
pub const DEFAULT_ANCHORS_PER_CELL: usize = 5;
/// Positives per ground truth.
pub const POSITIVES_PER_GT: usize = 4;
/// Predictions farther than this (L1, pixels) from a ground truth score 0.
pub const CENTER_GATE: f64 = 32.0;
/// Anchor size for DOTA-like aerial imagery.
pub const ANCHOR_SIZE_DOTA: f64 = 64.0;
/// Anchor size for other datasets.
pub const ANCHOR_SIZE_DEFAULT: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub stride: u32,
    pub anchor_size: f64,
    pub anchors_per_cell: usize,
    pub cols: usize,
    pub rows: usize,
}

/// Builds the lattice of `anchors_per_cell` identical anchors per stride
/// cell, with `ceil(size / stride)` cells along each axis.
pub fn build_anchor_grid(image: ImageSize, stride: u32, anchor_size: f64, anchors_per_cell: usize) -> Result<AnchorGrid> {
    if stride == 0 {
        return Err(Error::Config("anchor stride must be positive".into()));
    }
    if !(anchor_size > 0.0) {
        return Err(Error::Config("anchor size must be positive".into()));
    }
    if anchors_per_cell == 0 {
        return Err(Error::Config("at least one anchor per cell is required".into()));
    }
    Ok(AnchorGrid {
        stride,
        anchor_size,
        anchors_per_cell,
        cols: image.width.div_ceil(stride) as usize,
        rows: image.height.div_ceil(stride) as usize,
    })
}

impl AnchorGrid {
    pub fn num_cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn num_anchors(&self) -> usize {
        self.num_cells() * self.anchors_per_cell
    }

    /// Cell `(col, row)` of an anchor index; anchors of a cell are contiguous.
    pub fn cell_of(&self, anchor: usize) -> (usize, usize) {
        let cell = anchor / self.anchors_per_cell;
        (cell % self.cols, cell / self.cols)
    }

    pub fn anchor_center(&self, anchor: usize) -> Point {
        let (c, r) = self.cell_of(anchor);
        let s = self.stride as f64;
        Point::new((c as f64 + 0.5) * s, (r as f64 + 0.5) * s)
    }
}

/// What an anchor is matched to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AnchorMatch {
    #[default]
    Background,
    /// Index into the point ground truths.
    Point(usize),
    /// Index into the synthetic-box ground truths.
    Box(usize),
}

/// One anchor's prediction: decoded box center and per-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPrediction {
    pub center: Point,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtKind {
    Point,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignTarget {
    /// Annotated point, or the center of a synthetic box.
    pub center: Point,
    pub label: usize,
    pub kind: GtKind,
    /// Index within its own kind (point list or synthetic box list).
    pub index: usize,
}

/// Matching score: 0 beyond the center gate, otherwise the predicted
/// probability of the ground-truth class.
pub fn matching_score(pred_center: Point, pred_scores: &[f64], gt_center: Point, gt_label: usize) -> f64 {
    if pred_center.l1_distance(gt_center) > CENTER_GATE {
        return 0.0;
    }
    pred_scores.get(gt_label).copied().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignResult {
    /// Positive anchor indices per target, best first.
    pub positives: Vec<Vec<usize>>,
    /// Per-anchor match.
    pub matches: Vec<AnchorMatch>,
    /// Targets that received no positive anchor.
    pub unmatched: Vec<usize>,
}

impl AssignResult {
    pub fn point_mask(&self) -> Vec<bool> {
        self.matches.iter().map(|m| matches!(m, AnchorMatch::Point(_))).collect()
    }

    pub fn box_mask(&self) -> Vec<bool> {
        self.matches.iter().map(|m| matches!(m, AnchorMatch::Box(_))).collect()
    }
}

/// Assigns up to [`POSITIVES_PER_GT`] anchors to each target.
///
/// Candidates are all (target, anchor) pairs inside the center gate. They
/// are visited by descending score, then ascending center distance, anchor
/// index and target index; a candidate is accepted when its anchor is
/// still free and its target has fewer than K positives. An anchor wanted
/// by several targets therefore goes to the one that scores it highest,
/// and the others fall back to their next best anchors.
pub fn assign(grid: &AnchorGrid, predictions: &[AnchorPrediction], targets: &[AssignTarget]) -> Result<AssignResult> {
    assign_k(grid, predictions, targets, POSITIVES_PER_GT)
}

pub fn assign_k(
    grid: &AnchorGrid,
    predictions: &[AnchorPrediction],
    targets: &[AssignTarget],
    k: usize,
) -> Result<AssignResult> {
    if predictions.len() != grid.num_anchors() {
        return Err(Error::Misaligned(format!(
            "{} predictions for {} anchors",
            predictions.len(),
            grid.num_anchors()
        )));
    }
    if let Some(p) = predictions
        .iter()
        .flat_map(|p| &p.scores)
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Config(format!("class probability {p} outside [0, 1]")));
    }

    struct Candidate {
        score: f64,
        dist: f64,
        anchor: usize,
        target: usize,
    }
    let mut cands = Vec::new();
    for (t, gt) in targets.iter().enumerate() {
        for (a, p) in predictions.iter().enumerate() {
            let dist = p.center.l1_distance(gt.center);
            if dist > CENTER_GATE {
                continue;
            }
            cands.push(Candidate {
                score: matching_score(p.center, &p.scores, gt.center, gt.label),
                dist,
                anchor: a,
                target: t,
            });
        }
    }
    cands.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.dist.total_cmp(&y.dist))
            .then(x.anchor.cmp(&y.anchor))
            .then(x.target.cmp(&y.target))
    });

    let mut matches = vec![AnchorMatch::Background; predictions.len()];
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); targets.len()];
    for c in cands {
        if matches[c.anchor] != AnchorMatch::Background || positives[c.target].len() >= k {
            continue;
        }
        let gt = &targets[c.target];
        matches[c.anchor] = match gt.kind {
            GtKind::Point => AnchorMatch::Point(gt.index),
            GtKind::Box => AnchorMatch::Box(gt.index),
        };
        positives[c.target].push(c.anchor);
    }
    let unmatched = positives
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_empty())
        .map(|(i, _)| i)
        .collect();
    Ok(AssignResult {
        positives,
        matches,
        unmatched,
    })
}

/// Targets for a set of annotated points followed by synthetic boxes.
pub fn targets_from(points: &[(Point, usize)], boxes: &[(Point, usize)]) -> Vec<AssignTarget> {
    let p = points.iter().enumerate().map(|(i, &(center, label))| AssignTarget {
        center,
        label,
        kind: GtKind::Point,
        index: i,
    });
    let b = boxes.iter().enumerate().map(|(i, &(center, label))| AssignTarget {
        center,
        label,
        kind: GtKind::Box,
        index: i,
    });
    p.chain(b).collect()
}

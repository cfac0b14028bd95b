//! Rotated-box average precision.
//!
//! Detections of one category are visited in descending score. Each is
//! matched to the highest-IoU ground truth of the same image that is still
//! unmatched (or flagged difficult) with IoU at least the threshold. A match
//! on a regular object is a true positive and consumes it; a match on a
//! difficult object is ignored; no match is a false positive. Difficult
//! objects never count as misses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_points, GtRecord};
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, RBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: String,
    pub score: f64,
    pub rbox: RBox,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.score.is_finite() {
            return Err(Error::NonFinite("detection score"));
        }
        self.rbox.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub category: String,
    pub rbox: RBox,
    pub difficult: bool,
}

impl GroundTruth {
    pub fn from_record(image_id: &str, g: &GtRecord) -> Self {
        Self {
            image_id: image_id.to_string(),
            category: g.category.clone(),
            rbox: g.rbox,
            difficult: g.difficult,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMethod {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    ElevenPoint,
    /// Area under the interpolated precision-recall curve.
    AllPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            method: ApMethod::ElevenPoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// True positive on the given ground-truth index.
    TruePositive(usize),
    FalsePositive,
    /// Matched a difficult object; excluded from the curve.
    Ignored,
}

/// Matches detections to ground truths of a single category. Returns one
/// outcome per detection, in input order.
pub fn match_detections(dets: &[DetectionRecord], gts: &[GroundTruth], iou_threshold: f64) -> Vec<MatchOutcome> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut out = vec![MatchOutcome::FalsePositive; dets.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.image_id != d.image_id || (taken[j] && !g.difficult) {
                continue;
            }
            let iou = rotated_iou(&d.rbox, &g.rbox);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        out[i] = match best {
            Some((j, _)) if gts[j].difficult => MatchOutcome::Ignored,
            Some((j, _)) => {
                taken[j] = true;
                MatchOutcome::TruePositive(j)
            }
            None => MatchOutcome::FalsePositive,
        };
    }
    out
}

/// AP from cumulative recall/precision points ordered by descending score.
pub fn average_precision(recall: &[f64], precision: &[f64], method: ApMethod) -> f64 {
    match method {
        ApMethod::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let t = t as f64 / 10.0;
                let p = recall
                    .iter()
                    .zip(precision)
                    .filter(|(r, _)| **r >= t - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                sum += p;
            }
            sum / 11.0
        }
        ApMethod::AllPoint => {
            let mut mrec = Vec::with_capacity(recall.len() + 2);
            let mut mpre = Vec::with_capacity(recall.len() + 2);
            mrec.push(0.0);
            mpre.push(0.0);
            mrec.extend_from_slice(recall);
            mpre.extend_from_slice(precision);
            mrec.push(1.0);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len()).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: String,
    pub ap: f64,
    /// Non-difficult ground truths.
    pub num_gt: usize,
    pub num_det: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub categories: Vec<CategoryAp>,
    pub map: f64,
    pub warnings: Vec<String>,
}

impl MapReport {
    /// Fixed-width table, one row per category followed by the mean.
    pub fn to_table(&self) -> String {
        let width = self.categories.iter().map(|c| c.category.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>5}  {:>5}  {:>6}  {:>6}", "category", "gts", "dets", "tp", "fp", "recall", "AP50");
        for c in &self.categories {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6}  {:>6}  {:>5}  {:>5}  {:>6.4}  {:>6.4}",
                c.category, c.num_gt, c.num_det, c.true_positives, c.false_positives, c.recall, c.ap
            );
        }
        let _ = writeln!(s, "mAP {:.4}", self.map);
        s
    }

    /// One row with a column per category and a trailing mean, scaled to
    /// percent: `method,<cat>...,mAP`.
    pub fn to_csv(&self, method_name: &str) -> String {
        let mut header = vec!["method".to_string()];
        let mut row = vec![method_name.to_string()];
        for c in &self.categories {
            header.push(c.category.clone());
            row.push(format!("{:.2}", 100.0 * c.ap));
        }
        header.push("mAP".into());
        row.push(format!("{:.2}", 100.0 * self.map));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Per-category AP and the unweighted mean over every category seen in
/// either input. A category without regular ground truths scores 0 and
/// produces a warning.
pub fn evaluate_map(dets: &[DetectionRecord], gts: &[GroundTruth], cfg: &EvalConfig) -> Result<MapReport> {
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Error::Config(format!("IoU threshold must lie in (0, 1], got {}", cfg.iou_threshold)));
    }
    for d in dets {
        d.validate()?;
    }
    let mut det_by: BTreeMap<&str, Vec<DetectionRecord>> = BTreeMap::new();
    let mut gt_by: BTreeMap<&str, Vec<GroundTruth>> = BTreeMap::new();
    for d in dets {
        det_by.entry(&d.category).or_default().push(d.clone());
    }
    for g in gts {
        gt_by.entry(&g.category).or_default().push(g.clone());
    }
    let cats: BTreeSet<&str> = det_by.keys().chain(gt_by.keys()).copied().collect();

    let mut categories = Vec::with_capacity(cats.len());
    let mut warnings = Vec::new();
    for cat in cats {
        let d = det_by.get(cat).map(Vec::as_slice).unwrap_or(&[]);
        let g = gt_by.get(cat).map(Vec::as_slice).unwrap_or(&[]);
        let npos = g.iter().filter(|g| !g.difficult).count();
        let outcomes = match_detections(d, g, cfg.iou_threshold);

        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[b].score.total_cmp(&d[a].score).then(a.cmp(&b)));
        let (mut tp, mut fp) = (0usize, 0usize);
        let (mut recall, mut precision) = (Vec::new(), Vec::new());
        for i in order {
            match outcomes[i] {
                MatchOutcome::TruePositive(_) => tp += 1,
                MatchOutcome::FalsePositive => fp += 1,
                MatchOutcome::Ignored => continue,
            }
            if npos > 0 {
                recall.push(tp as f64 / npos as f64);
            }
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        let ap = if npos == 0 {
            warnings.push(format!("category {cat:?} has detections but no ground truth; AP set to 0"));
            0.0
        } else {
            average_precision(&recall, &precision, cfg.method)
        };
        categories.push(CategoryAp {
            category: cat.to_string(),
            ap,
            num_gt: npos,
            num_det: d.len(),
            true_positives: tp,
            false_positives: fp,
            recall: if npos > 0 { tp as f64 / npos as f64 } else { 0.0 },
        });
    }
    let map = if categories.is_empty() {
        0.0
    } else {
        categories.iter().map(|c| c.ap).sum::<f64>() / categories.len() as f64
    };
    Ok(MapReport {
        categories,
        map,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepRow {
    pub sigma: f64,
    pub map: f64,
    /// Mean distance from each derived point to its box center.
    pub mean_offset: f64,
}

/// Annotation-noise sweep: for each noise level, derives point labels from
/// the ground truths, turns them into detections with `detector` and
/// evaluates them against the same ground truths.
///
/// `detector` receives each ground truth with its noisy point and returns
/// a box and score for it.
pub fn noise_sweep<F>(
    gts: &BTreeMap<String, Vec<GtRecord>>,
    sigmas: &[f64],
    seed: u64,
    cfg: &EvalConfig,
    mut detector: F,
) -> Result<Vec<NoiseSweepRow>>
where
    F: FnMut(&GtRecord, crate::geometry::Point) -> (RBox, f64),
{
    let truth: Vec<GroundTruth> = gts
        .iter()
        .flat_map(|(id, v)| v.iter().map(move |g| GroundTruth::from_record(id, g)))
        .collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dets = Vec::new();
        let mut offset_sum = 0.0;
        for (id, v) in gts {
            let points = derive_points(v, sigma, None, &mut rng)?;
            for (g, p) in v.iter().zip(points) {
                offset_sum += (p.x - g.rbox.x).hypot(p.y - g.rbox.y);
                let (rbox, score) = detector(g, p.point());
                dets.push(DetectionRecord {
                    image_id: id.clone(),
                    category: g.category.clone(),
                    score,
                    rbox,
                });
            }
        }
        let report = evaluate_map(&dets, &truth, cfg)?;
        rows.push(NoiseSweepRow {
            sigma,
            map: report.map,
            mean_offset: if truth.is_empty() { 0.0 } else { offset_sum / truth.len() as f64 },
        });
    }
    Ok(rows)
}

/// Box of the ground-truth shape centered on the point; the score decays
/// with a random jitter so ranking is not tied.
pub fn shape_at_point<R: Rng + ?Sized>(rng: &mut R) -> impl FnMut(&GtRecord, crate::geometry::Point) -> (RBox, f64) + '_ {
    move |g, p| {
        let score = rng.random_range(0.5..1.0);
        (RBox::new(p.x, p.y, g.rbox.w, g.rbox.h, g.rbox.theta), score)
    }
}

pub fn noise_sweep_csv(rows: &[NoiseSweepRow]) -> String {
    let mut s = String::from("sigma,mAP,mean_offset\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.sigma, r.map, r.mean_offset);
    }
    s
}

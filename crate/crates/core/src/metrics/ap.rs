//! COCO-style box AP.
//!
//! Per category and IoU threshold, detections on each frame are taken in
//! descending score order and greedily matched to the unmatched ground
//! truth with the highest IoU at or above the threshold. The pooled
//! precision/recall curve is read at 101 recall points after making
//! precision monotone, and AP is the mean of those readings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datamodel::{CategoryId, Detection, GtBox};
use crate::geometry::{area_bucket, iou, AreaBucket, BBox};

pub const NUM_IOU_THRESHOLDS: usize = 10;
pub const NUM_RECALL_POINTS: usize = 101;
/// Per frame and category, only the highest-scoring detections count.
pub const MAX_DETS_PER_FRAME: usize = 100;

/// `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; NUM_IOU_THRESHOLDS] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

fn recall_points() -> [f64; NUM_RECALL_POINTS] {
    std::array::from_fn(|i| i as f64 / 100.0)
}

/// Ground truth and the predictions scored against it for one query.
#[derive(Debug, Clone, Copy)]
pub struct EvalFrame<'a> {
    pub gt: &'a [GtBox],
    pub detections: &'a [Detection],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over IoU thresholds 0.50:0.05:0.95 and categories. `None` when no
    /// category has ground truth.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub per_category: BTreeMap<CategoryId, Option<f64>>,
    /// True-positive matches at IoU 0.5 over all sizes.
    pub matched_pairs: usize,
    pub frames_evaluated: usize,
    /// Query times skipped because no output had been emitted yet.
    pub cold_start_frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AreaRange {
    All,
    Bucket(AreaBucket),
}

impl AreaRange {
    fn excludes(self, b: &BBox) -> bool {
        match self {
            AreaRange::All => false,
            AreaRange::Bucket(bucket) => area_bucket(b) != bucket,
        }
    }
}

/// One detection's outcome at one threshold.
#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    tp: bool,
    ignored: bool,
}

/// IoU used for matching; crowd regions are measured against the
/// detection's own area.
fn match_iou(det: &BBox, gt: &GtBox) -> f64 {
    if gt.iscrowd {
        let a = det.area();
        if a <= 0.0 {
            0.0
        } else {
            det.intersection_area(&gt.bbox) / a
        }
    } else {
        iou(det, &gt.bbox)
    }
}

struct CategoryFrame<'a> {
    gt: Vec<&'a GtBox>,
    dets: Vec<&'a Detection>,
}

fn split_by_category<'a>(frame: &EvalFrame<'a>, category: CategoryId) -> CategoryFrame<'a> {
    let gt = frame
        .gt
        .iter()
        .filter(|g| g.category_id == category)
        .collect();
    let mut dets: Vec<&Detection> = frame
        .detections
        .iter()
        .filter(|d| d.category_id == category)
        .collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    dets.truncate(MAX_DETS_PER_FRAME);
    CategoryFrame { gt, dets }
}

/// Greedy matching on one frame. Returns per-detection outcomes in score
/// order plus the number of non-ignored ground-truth boxes.
fn match_frame(cf: &CategoryFrame<'_>, threshold: f64, area: AreaRange) -> (Vec<Scored>, usize) {
    // non-ignored ground truth first
    let mut gt: Vec<(&GtBox, bool)> = cf
        .gt
        .iter()
        .map(|g| (*g, g.iscrowd || area.excludes(&g.bbox)))
        .collect();
    gt.sort_by_key(|(_, ignored)| *ignored);
    let num_positive = gt.iter().filter(|(_, ig)| !ig).count();

    let mut taken = vec![false; gt.len()];
    let mut out = Vec::with_capacity(cf.dets.len());
    for det in &cf.dets {
        let mut best = threshold.min(1.0 - 1e-10);
        let mut chosen: Option<usize> = None;
        for (gi, (g, ignored)) in gt.iter().enumerate() {
            if taken[gi] && !g.iscrowd {
                continue;
            }
            if let Some(m) = chosen {
                if !gt[m].1 && *ignored {
                    break;
                }
            }
            let v = match_iou(&det.bbox, g);
            if v < best {
                continue;
            }
            best = v;
            chosen = Some(gi);
        }
        let scored = match chosen {
            Some(gi) => {
                taken[gi] = true;
                Scored {
                    score: det.score,
                    tp: true,
                    ignored: gt[gi].1,
                }
            }
            None => Scored {
                score: det.score,
                tp: false,
                ignored: area.excludes(&det.bbox),
            },
        };
        out.push(scored);
    }
    (out, num_positive)
}

/// 101-point interpolated AP from detections pooled in score order.
/// `None` when there is nothing to recall.
fn interpolated_ap(scored: &[Scored], num_positive: usize) -> Option<f64> {
    if num_positive == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for s in scored.iter().filter(|s| !s.ignored) {
        if s.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_positive as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let total: f64 = recall_points()
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&rc| rc < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / NUM_RECALL_POINTS as f64)
}

/// AP for one category, area range and threshold over all frames.
fn category_ap(
    frames: &[CategoryFrame<'_>],
    threshold: f64,
    area: AreaRange,
) -> (Option<f64>, usize) {
    let mut pooled: Vec<(usize, usize, Scored)> = Vec::new();
    let mut num_positive = 0;
    for (fi, cf) in frames.iter().enumerate() {
        let (scored, npos) = match_frame(cf, threshold, area);
        num_positive += npos;
        pooled.extend(
            scored
                .into_iter()
                .enumerate()
                .map(|(rank, s)| (fi, rank, s)),
        );
    }
    // stable in (frame, rank) among equal scores
    pooled.sort_by(|a, b| {
        b.2.score
            .total_cmp(&a.2.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let scored: Vec<Scored> = pooled.into_iter().map(|(_, _, s)| s).collect();
    let matched = scored.iter().filter(|s| s.tp && !s.ignored).count();
    (interpolated_ap(&scored, num_positive), matched)
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Evaluates a list of (ground truth, predictions) pairs. Categories with no
/// ground truth anywhere are left out of every mean.
pub fn evaluate_frames(frames: &[EvalFrame<'_>]) -> EvalReport {
    let categories: BTreeSet<CategoryId> = frames
        .iter()
        .flat_map(|f| f.gt.iter().map(|g| g.category_id))
        .collect();
    let thresholds = iou_thresholds();

    let mut per_category = BTreeMap::new();
    // [area][threshold] -> APs over categories that are defined there
    let areas = [
        AreaRange::All,
        AreaRange::Bucket(AreaBucket::Small),
        AreaRange::Bucket(AreaBucket::Medium),
        AreaRange::Bucket(AreaBucket::Large),
    ];
    let mut by_area: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); thresholds.len()]; areas.len()];
    let mut matched_pairs = 0;

    for &cat in &categories {
        let split: Vec<CategoryFrame<'_>> =
            frames.iter().map(|f| split_by_category(f, cat)).collect();
        for (ai, &area) in areas.iter().enumerate() {
            let mut cat_aps = Vec::new();
            for (ti, &thr) in thresholds.iter().enumerate() {
                let (ap, matched) = category_ap(&split, thr, area);
                if area == AreaRange::All && ti == 0 {
                    matched_pairs += matched;
                }
                if let Some(ap) = ap {
                    by_area[ai][ti].push(ap);
                    cat_aps.push(ap);
                }
            }
            if area == AreaRange::All {
                per_category.insert(cat, mean(cat_aps));
            }
        }
    }

    let area_mean = |ai: usize| mean(by_area[ai].iter().flatten().copied());
    EvalReport {
        ap: area_mean(0),
        ap50: mean(by_area[0][0].iter().copied()),
        ap75: mean(by_area[0][5].iter().copied()),
        ap_small: area_mean(1),
        ap_medium: area_mean(2),
        ap_large: area_mean(3),
        per_category,
        matched_pairs,
        frames_evaluated: frames.len(),
        cold_start_frames: 0,
    }
}

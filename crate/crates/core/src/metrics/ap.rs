//! Detection matching, precision/recall accumulation, AP and AOS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::iou::{iou, IouKind};
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D};

/// Recall sampling used when averaging interpolated precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ApInterpolation {
    /// Recall ∈ {0, 0.1, …, 1}.
    #[serde(rename = "11")]
    Points11,
    /// Recall ∈ {1/40, 2/40, …, 1}.
    #[default]
    #[serde(rename = "40")]
    Points40,
}

impl ApInterpolation {
    pub fn from_points(n: u32) -> Result<Self> {
        match n {
            11 => Ok(ApInterpolation::Points11),
            40 => Ok(ApInterpolation::Points40),
            other => Err(Error::InvalidConfig(format!("AP interpolation must use 11 or 40 points, got {other}"))),
        }
    }

    pub fn points(&self) -> u32 {
        match self {
            ApInterpolation::Points11 => 11,
            ApInterpolation::Points40 => 40,
        }
    }

    /// Recall levels as `(numerator, denominator)` pairs.
    fn levels(&self) -> (std::ops::RangeInclusive<u64>, u64) {
        match self {
            ApInterpolation::Points11 => (0..=10, 10),
            ApInterpolation::Points40 => (1..=40, 40),
        }
    }
}

/// Object-difficulty filter applied to ground truth (and to unmatched
/// detections by height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difficulty {
    pub name: String,
    /// Minimum 2D box height, pixels.
    pub min_height: f64,
    /// Maximum occlusion level (0–3).
    pub max_occlusion: u8,
    /// Maximum truncation fraction.
    pub max_truncation: f64,
}

impl Difficulty {
    /// The official KITTI easy / moderate / hard levels.
    pub fn kitti() -> Vec<Difficulty> {
        vec![
            Difficulty { name: "easy".into(), min_height: 40.0, max_occlusion: 0, max_truncation: 0.15 },
            Difficulty { name: "moderate".into(), min_height: 25.0, max_occlusion: 1, max_truncation: 0.30 },
            Difficulty { name: "hard".into(), min_height: 25.0, max_occlusion: 2, max_truncation: 0.50 },
        ]
    }

    /// Negative occlusion (unknown) never qualifies.
    pub fn admits(&self, height: f64, occlusion: i32, truncation: f64) -> bool {
        height >= self.min_height
            && (0..=self.max_occlusion as i32).contains(&occlusion)
            && truncation <= self.max_truncation
    }
}

/// Evaluation settings for one AP computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub kind: IouKind,
    pub interpolation: ApInterpolation,
    pub difficulties: Vec<Difficulty>,
    /// Increasing depth edges (meters) of the localization-error bins.
    pub distance_bins: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            kind: IouKind::ThreeD,
            interpolation: ApInterpolation::Points40,
            difficulties: Difficulty::kitti(),
            distance_bins: (0..=8).map(|i| 10.0 * i as f64).collect(),
        }
    }
}

impl EvalConfig {
    pub fn new(iou_threshold: f64, kind: IouKind, interpolation: ApInterpolation) -> Result<Self> {
        let cfg = EvalConfig { iou_threshold, kind, interpolation, ..EvalConfig::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!("IoU threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        if self.distance_bins.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("distance bins must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// A box with an evaluation "don't care" flag.
///
/// Ignored ground truth neither counts toward recall nor produces false
/// positives; ignored detections are dropped unless they match valid ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalBox {
    pub box3d: Box3D,
    pub ignore: bool,
}

impl From<Box3D> for EvalBox {
    fn from(box3d: Box3D) -> Self {
        EvalBox { box3d, ignore: false }
    }
}

/// One scored detection after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDetection {
    pub frame: usize,
    pub det_index: usize,
    pub score: f64,
    pub tp: bool,
    /// Matched ground truth and its IoU.
    pub matched: Option<(usize, f64)>,
    /// Orientation similarity `(1 + cos Δθ) / 2` for true positives, else 0.
    pub similarity: f64,
}

/// Matching result for one frame, detections in descending score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    pub detections: Vec<RankedDetection>,
    pub num_gt: usize,
}

/// Precision/recall samples and the interpolated AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

pub fn orientation_similarity(det_yaw: f64, gt_yaw: f64) -> f64 {
    0.5 * (1.0 + normalize_angle(det_yaw - gt_yaw).cos())
}

/// Greedy score-ordered matching with ignore handling.
pub fn match_frame(dets: &[EvalBox], gts: &[EvalBox], cfg: &EvalConfig, frame: usize) -> FrameMatch {
    let scores: Vec<f64> = dets.iter().map(|d| d.box3d.score).collect();
    let mut taken = vec![false; gts.len()];
    let mut detections = Vec::with_capacity(dets.len());
    for di in score_order(&scores) {
        let det = &dets[di].box3d;
        let best = |want_ignored: bool, taken: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if taken[gi] || gt.ignore != want_ignored {
                    continue;
                }
                let o = iou(det, &gt.box3d, cfg.kind);
                if o >= cfg.iou_threshold && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((gi, o));
                }
            }
            best
        };
        if let Some((gi, o)) = best(false, &taken) {
            taken[gi] = true;
            detections.push(RankedDetection {
                frame,
                det_index: di,
                score: det.score,
                tp: true,
                matched: Some((gi, o)),
                similarity: orientation_similarity(det.yaw, gts[gi].box3d.yaw),
            });
        } else if best(true, &taken).is_some() || dets[di].ignore {
            continue;
        } else {
            detections.push(RankedDetection {
                frame,
                det_index: di,
                score: det.score,
                tp: false,
                matched: None,
                similarity: 0.0,
            });
        }
    }
    FrameMatch { detections, num_gt: gts.iter().filter(|g| !g.ignore).count() }
}

/// Matches plain detections to plain ground truth (no ignore flags).
pub fn match_and_rank(dets: &[Box3D], gts: &[Box3D], cfg: &EvalConfig) -> FrameMatch {
    let d: Vec<EvalBox> = dets.iter().cloned().map(EvalBox::from).collect();
    let g: Vec<EvalBox> = gts.iter().cloned().map(EvalBox::from).collect();
    match_frame(&d, &g, cfg, 0)
}

/// Mean over recall levels of the best `values[j]` among ranks whose recall
/// `tp_cum[j] / num_gt` reaches the level.
fn interpolate(tp_cum: &[u64], values: &[f64], num_gt: usize, interp: ApInterpolation) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    // suffix maxima so each level is a single lookup
    let mut suffix = values.to_vec();
    for j in (0..suffix.len().saturating_sub(1)).rev() {
        suffix[j] = suffix[j].max(suffix[j + 1]);
    }
    let (levels, denom) = interp.levels();
    let n = num_gt as u64;
    let mut sum = 0.0;
    let mut count = 0u32;
    for i in levels {
        count += 1;
        // first rank whose recall ≥ i/denom; tp_cum is non-decreasing
        let j = tp_cum.partition_point(|&tp| tp * denom < i * n);
        if j < suffix.len() {
            sum += suffix[j];
        }
    }
    sum / count as f64
}

/// AP from true/false-positive flags already in descending score order.
pub fn average_precision(flags: &[bool], num_gt: usize, interp: ApInterpolation) -> PRCurve {
    let mut tp = 0u64;
    let mut tp_cum = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (j, &f) in flags.iter().enumerate() {
        tp += f as u64;
        tp_cum.push(tp);
        recall.push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
        precision.push(tp as f64 / (j + 1) as f64);
    }
    let ap = interpolate(&tp_cum, &precision, num_gt, interp);
    PRCurve { recall, precision, ap }
}

/// Average orientation similarity over ranked detections: precision with
/// each true positive weighted by its similarity.
pub fn aos_from_ranked(ranked: &[RankedDetection], num_gt: usize, interp: ApInterpolation) -> f64 {
    let mut tp = 0u64;
    let mut sim = 0.0;
    let mut tp_cum = Vec::with_capacity(ranked.len());
    let mut values = Vec::with_capacity(ranked.len());
    for (j, d) in ranked.iter().enumerate() {
        if d.tp {
            tp += 1;
            sim += d.similarity;
        }
        tp_cum.push(tp);
        values.push(sim / (j + 1) as f64);
    }
    interpolate(&tp_cum, &values, num_gt, interp)
}

/// AOS of a single frame.
pub fn aos(dets: &[Box3D], gts: &[Box3D], cfg: &EvalConfig) -> f64 {
    let m = match_and_rank(dets, gts, cfg);
    aos_from_ranked(&m.detections, m.num_gt, cfg.interpolation)
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalFrame {
    pub detections: Vec<EvalBox>,
    pub ground_truth: Vec<EvalBox>,
}

/// Dataset-level AP and AOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub curve: PRCurve,
    pub aos: f64,
    pub num_gt: usize,
    pub num_detections: usize,
}

/// Matches each frame, then ranks all detections globally (score
/// descending, ties by frame then detection index).
pub fn rank_frames(frames: &[EvalFrame], cfg: &EvalConfig) -> (Vec<RankedDetection>, usize) {
    let mut all = Vec::new();
    let mut num_gt = 0;
    for (f, frame) in frames.iter().enumerate() {
        let m = match_frame(&frame.detections, &frame.ground_truth, cfg, f);
        num_gt += m.num_gt;
        all.extend(m.detections);
    }
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.frame.cmp(&b.frame))
            .then(a.det_index.cmp(&b.det_index))
    });
    (all, num_gt)
}

pub fn evaluate(frames: &[EvalFrame], cfg: &EvalConfig) -> EvalResult {
    let (ranked, num_gt) = rank_frames(frames, cfg);
    let flags: Vec<bool> = ranked.iter().map(|d| d.tp).collect();
    EvalResult {
        curve: average_precision(&flags, num_gt, cfg.interpolation),
        aos: aos_from_ranked(&ranked, num_gt, cfg.interpolation),
        num_gt,
        num_detections: ranked.len(),
    }
}

/// Mean center error of true positives whose ground-truth depth falls in
/// `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` flags an empty bin.
    pub mean_error: Option<f64>,
}

/// Localization error as a function of ground-truth distance (depth).
pub fn localization_error_curve(frames: &[EvalFrame], cfg: &EvalConfig) -> Vec<DistanceBin> {
    let edges = &cfg.distance_bins;
    let mut sums = vec![0.0; edges.len().saturating_sub(1)];
    let mut counts = vec![0usize; sums.len()];
    for (f, frame) in frames.iter().enumerate() {
        let m = match_frame(&frame.detections, &frame.ground_truth, cfg, f);
        for d in m.detections.iter().filter(|d| d.tp) {
            let (gi, _) = d.matched.expect("true positives carry a match");
            let gt = &frame.ground_truth[gi].box3d;
            let err = (frame.detections[d.det_index].box3d.center - gt.center).norm();
            if let Some(b) = (0..sums.len()).find(|&b| gt.center.z >= edges[b] && gt.center.z < edges[b + 1]) {
                sums[b] += err;
                counts[b] += 1;
            }
        }
    }
    (0..sums.len())
        .map(|b| DistanceBin {
            lo: edges[b],
            hi: edges[b + 1],
            count: counts[b],
            mean_error: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect()
}

//! KITTI-style evaluation: rotated IoU, matching, AP, AOS, localization error
//! curves and 3D non-maximum suppression.

mod ap;
mod iou;
mod report;

pub use ap::{
    aos, aos_from_ranked, average_precision, evaluate, localization_error_curve, match_and_rank,
    match_frame, orientation_similarity, rank_frames, ApInterpolation, Difficulty, DistanceBin,
    EvalBox, EvalConfig, EvalFrame, EvalResult, FrameMatch, PRCurve, RankedDetection,
};
pub use iou::{
    bev_intersection_area, bev_polygon, convex_intersection, iou, iou_3d, iou_bev, signed_area,
    vertical_overlap, IouKind, Point2, SLIVER_AREA,
};
pub use report::{EvalRow, EvalTable};

use std::cmp::Ordering;

use crate::geometry::Box3D;

/// Greedy score-descending suppression: a box is dropped when its IoU with an
/// already kept box reaches `iou_threshold`. Ties in score keep the lower index.
pub fn nms_3d(dets: &[Box3D], iou_threshold: f64, kind: IouKind) -> Vec<Box3D> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let mut kept: Vec<Box3D> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(k, &dets[i], kind) < iou_threshold) {
            kept.push(dets[i].clone());
        }
    }
    kept
}

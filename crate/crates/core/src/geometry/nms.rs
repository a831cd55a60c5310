use std::cmp::Ordering;

use super::bbox::Box3D;
use super::iou::iou_bev;

/// Indices ordered by descending score, ties broken by lower index.
pub(crate) fn score_order(boxes: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .partial_cmp(&boxes[i].score)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

/// Indices of the boxes kept by greedy BEV-IoU suppression, in score order.
pub fn nms_indices(boxes: &[Box3D], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(boxes) {
        if kept.iter().all(|&k| iou_bev(&boxes[k], &boxes[i]) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Greedy non-maximum suppression. A box is suppressed when its BEV IoU with
/// an already kept box exceeds `iou_threshold`.
pub fn nms(boxes: &[Box3D], iou_threshold: f64) -> Vec<Box3D> {
    nms_indices(boxes, iou_threshold).into_iter().map(|i| boxes[i]).collect()
}

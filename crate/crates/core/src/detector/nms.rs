use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou_unchecked, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f32,
}

/// Indices sorted by descending score, ties by ascending index.
pub fn score_order(scores: impl Iterator<Item = f32>) -> Vec<usize> {
    let scores: Vec<f32> = scores.collect();
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Greedy per-class non-maximum suppression.
///
/// A box is dropped when its IoU with an already kept box of the same class
/// exceeds `iou_thresh`. At most `max_out` boxes survive, highest score first.
pub fn nms(dets: &[Detection], iou_thresh: f64, max_out: usize) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in score_order(dets.iter().map(|d| d.score)) {
        if kept.len() >= max_out {
            break;
        }
        let d = dets[i];
        if kept.iter().all(|k| k.class_id != d.class_id || iou_unchecked(&k.bbox, &d.bbox) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept
}

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};

/// A scored box predicted for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f32,
}

/// A ground-truth box of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: BBox,
    pub class_id: usize,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Recall grid points of the interpolated precision curve.
pub const RECALL_POINTS: usize = 101;

/// Predictions of one class in descending score order (stable), each with
/// the IoU against every same-class ground truth of its image.
struct ClassCase {
    n_gt: usize,
    /// (image slot, IoU per gt of that image in input order)
    ranked: Vec<(usize, Vec<f64>)>,
    gts_per_image: Vec<usize>,
}

impl ClassCase {
    fn build(preds: &[Prediction], gts: &[GroundTruth], class_id: usize) -> Self {
        let mut slots: HashMap<&str, usize> = HashMap::new();
        let mut boxes: Vec<Vec<BBox>> = Vec::new();
        for g in gts.iter().filter(|g| g.class_id == class_id) {
            let slot = *slots.entry(&g.image_id).or_insert_with(|| {
                boxes.push(Vec::new());
                boxes.len() - 1
            });
            boxes[slot].push(g.bbox);
        }
        let n_gt = boxes.iter().map(Vec::len).sum();
        let mut mine: Vec<&Prediction> = preds.iter().filter(|p| p.class_id == class_id).collect();
        // stable: equal scores keep input order
        mine.sort_by(|a, b| b.score.total_cmp(&a.score));
        let none = boxes.len();
        let ranked = mine
            .into_iter()
            .map(|p| match slots.get(p.image_id.as_str()) {
                Some(&s) => (s, boxes[s].iter().map(|g| iou_unchecked(&p.bbox, g)).collect()),
                None => (none, Vec::new()),
            })
            .collect();
        let mut gts_per_image: Vec<usize> = boxes.iter().map(Vec::len).collect();
        gts_per_image.push(0);
        ClassCase { n_gt, ranked, gts_per_image }
    }

    /// True-positive flag per ranked prediction at `thresh`.
    fn match_at(&self, thresh: f64) -> Vec<bool> {
        let mut taken: Vec<Vec<bool>> = self.gts_per_image.iter().map(|&n| vec![false; n]).collect();
        self.ranked
            .iter()
            .map(|(slot, ious)| {
                let mut best: Option<(usize, f64)> = None;
                for (j, &v) in ious.iter().enumerate() {
                    if !taken[*slot][j] && v >= thresh && best.map_or(true, |(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                match best {
                    Some((j, _)) => {
                        taken[*slot][j] = true;
                        true
                    }
                    None => false,
                }
            })
            .collect()
    }
}

/// 101-point interpolated area under the precision-recall curve traced by
/// `tp` (true-positive flags in rank order) against `n_gt` ground truths.
pub fn interpolated_ap(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let level = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < level);
        if idx < recall.len() {
            sum += precision[idx];
        }
    }
    sum / RECALL_POINTS as f64
}

/// Average precision of one class at one IoU threshold.
///
/// Predictions are ranked by descending score, ties in input order. Each is
/// matched to the unmatched same-class ground truth of its image with the
/// highest IoU (lowest index on ties) provided the IoU reaches `iou_thresh`.
/// Returns 0 when the class has no ground truth.
pub fn average_precision(preds: &[Prediction], gts: &[GroundTruth], class_id: usize, iou_thresh: f64) -> f64 {
    let case = ClassCase::build(preds, gts, class_id);
    interpolated_ap(&case.match_at(iou_thresh), case.n_gt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub num_gt: usize,
    pub num_predictions: usize,
    /// AP at each threshold; empty for classes without ground truth, which
    /// are left out of the means.
    pub ap: Vec<f64>,
}

impl ClassReport {
    pub fn included(&self) -> bool {
        self.num_gt > 0
    }

    pub fn mean_ap(&self) -> Option<f64> {
        (!self.ap.is_empty()).then(|| self.ap.iter().sum::<f64>() / self.ap.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub gt_boxes: usize,
    pub predictions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    /// Class-mean AP at each threshold.
    pub map_per_threshold: Vec<f64>,
    /// mAP@[0.5:0.95].
    pub map: f64,
    pub map_50: f64,
    pub map_75: f64,
    pub counts: EvalCounts,
    /// Free-form description of what was evaluated (checkpoint, split, ...).
    #[serde(default)]
    pub config: serde_json::Value,
}

/// COCO-style evaluation over classes `0..num_classes`.
pub fn coco_map(preds: &[Prediction], gts: &[GroundTruth], num_classes: usize) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::Eval("no ground-truth boxes to evaluate against".into()));
    }
    if let Some(g) = gts.iter().find(|g| g.class_id >= num_classes) {
        return Err(Error::Eval(format!("ground truth in {} has class {} but only {num_classes} classes exist", g.image_id, g.class_id)));
    }
    if let Some(p) = preds.iter().find(|p| p.class_id >= num_classes) {
        return Err(Error::Eval(format!("prediction in {} has class {} but only {num_classes} classes exist", p.image_id, p.class_id)));
    }
    if let Some(p) = preds.iter().find(|p| !p.score.is_finite()) {
        return Err(Error::Eval(format!("prediction in {} has non-finite score {}", p.image_id, p.score)));
    }
    let thresholds = coco_thresholds();
    let classes: Vec<ClassReport> = (0..num_classes)
        .map(|c| {
            let case = ClassCase::build(preds, gts, c);
            let ap = if case.n_gt == 0 {
                Vec::new()
            } else {
                thresholds.iter().map(|&t| interpolated_ap(&case.match_at(t), case.n_gt)).collect()
            };
            ClassReport { class_id: c, num_gt: case.n_gt, num_predictions: case.ranked.len(), ap }
        })
        .collect();
    let included: Vec<&ClassReport> = classes.iter().filter(|c| c.included()).collect();
    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|t| included.iter().map(|c| c.ap[t]).sum::<f64>() / included.len() as f64)
        .collect();
    let map = map_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    let images: BTreeSet<&str> = gts.iter().map(|g| g.image_id.as_str()).chain(preds.iter().map(|p| p.image_id.as_str())).collect();
    Ok(EvalReport {
        map_50: map_per_threshold[0],
        map_75: map_per_threshold[5],
        thresholds,
        classes,
        map_per_threshold,
        map,
        counts: EvalCounts { images: images.len(), gt_boxes: gts.len(), predictions: preds.len() },
        config: serde_json::Value::Null,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut rows = vec![["class".to_string(), "gt".into(), "pred".into(), "AP50".into(), "AP75".into(), "AP".into()]];
        for c in &self.classes {
            rows.push([
                c.class_id.to_string(),
                c.num_gt.to_string(),
                c.num_predictions.to_string(),
                fmt(c.ap.first().copied()),
                fmt(c.ap.get(5).copied()),
                fmt(c.mean_ap()),
            ]);
        }
        rows.push([
            "all".into(),
            self.counts.gt_boxes.to_string(),
            self.counts.predictions.to_string(),
            fmt(Some(self.map_50)),
            fmt(Some(self.map_75)),
            fmt(Some(self.map)),
        ]);
        let widths: Vec<usize> = (0..6).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in rows {
            let cells: Vec<String> = r.iter().zip(&widths).enumerate().map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") }).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str(&format!("images: {}\n", self.counts.images));
        out
    }
}

//! Detection metrics: IoU, per-class average precision, COCO-style
//! mAP@[0.5:0.95] and NetScore.

mod ap;
mod io;
mod netscore;

pub use crate::geometry::iou;
pub use ap::{average_precision, coco_map, coco_thresholds, interpolated_ap, ClassReport, EvalCounts, EvalReport, GroundTruth, Prediction, RECALL_POINTS};
pub use io::{read_ground_truth, read_predictions, write_ground_truth, write_predictions, BoxLine};
pub use netscore::{netscore, NetScoreInputs};


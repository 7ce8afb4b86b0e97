//! Single-stage detector: pyramid over the later backbone stages, shared
//! classification and box sub-nets, anchors, losses and post-processing.

pub mod anchors;
pub mod boxes;
pub mod checkpoint;
pub mod config;
pub mod fpn;
pub mod head;
pub mod loss;
pub mod matching;
pub mod model;
pub mod nms;
pub mod train;

pub use anchors::{generate_anchors, AnchorGrid, AnchorLevel};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RunManifest};
pub use config::{AnchorConfig, DetectorConfig, FpnConfig, HeadConfig, InferenceConfig, LossConfig, MatchConfig};
pub use fpn::{Fpn, Pyramid, PyramidLevel};
pub use matching::{match_anchors, AnchorLabel};
pub use model::{Detector, DetectorOutput, LossBreakdown, Sample};
pub use nms::{nms, Detection};
pub use train::{train_step, Trainer, TrainerConfig};

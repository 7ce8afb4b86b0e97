//! Single-stage object detection with a double-condensing attention-condenser
//! backbone, plus the evaluation tooling around it: COCO-style mAP, parameter
//! counting, latency benchmarking and NetScore.

pub mod backbone;
pub mod bench;
pub mod cli;
pub mod data;
pub mod eval;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod par;

pub use error::{Error, Result};

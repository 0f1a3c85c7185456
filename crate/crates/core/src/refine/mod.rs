//! Confidence-driven suppression and detection-quality evaluation.

pub mod eval;
pub mod nms;

pub use eval::{action_map, evaluate_map, EvalConfig, MapResult};
pub use nms::{nms, Detection, DEFAULT_SCORE_FLOOR};

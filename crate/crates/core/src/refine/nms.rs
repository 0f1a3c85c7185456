use std::cmp::Ordering;

use crate::geometry::{iou, BBox};
use crate::temporal::model::argmax;

pub const DEFAULT_SCORE_FLOOR: f64 = 0.3;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub primary: Vec<f64>,
    pub secondary: Vec<f64>,
    pub track_id: u32,
}

impl Detection {
    /// Detection without action distributions.
    pub fn boxed(bbox: BBox, confidence: f64) -> Self {
        Self { bbox, confidence, primary: Vec::new(), secondary: Vec::new(), track_id: 0 }
    }

    pub fn primary_action(&self) -> Option<usize> {
        (!self.primary.is_empty()).then(|| argmax(&self.primary))
    }

    pub fn secondary_action(&self) -> Option<usize> {
        (!self.secondary.is_empty()).then(|| argmax(&self.secondary))
    }
}

/// Confidence descending, then `(y0, x0, y1, x1)` ascending.
pub fn priority(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.total_cmp(&a.confidence).then_with(|| a.bbox.canonical_key().cmp(&b.bbox.canonical_key()))
}

/// Drops detections under `score_floor`, then greedily keeps detections in
/// priority order unless an already kept one overlaps with IoU above
/// `iou_threshold`.
pub fn nms(detections: &[Detection], iou_threshold: f64, score_floor: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().filter(|d| d.confidence >= score_floor).collect();
    order.sort_by(|a, b| priority(a, b));
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d.clone());
        }
    }
    kept
}

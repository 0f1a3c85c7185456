//! Average precision at a fixed IoU threshold, for boxes and for action
//! labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::nms::Detection;
use crate::annotation::AnnotationRecord;
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iou_threshold > 0.0 && self.iou_threshold < 1.0 {
            Ok(())
        } else {
            Err(format!("iou threshold must lie in (0, 1), got {}", self.iou_threshold))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub confidence: f64,
    pub true_positive: bool,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub ap: f64,
    pub curve: Vec<PrPoint>,
    pub ground_truth: usize,
    pub predictions: usize,
}

pub type FrameDetections = BTreeMap<u32, Vec<Detection>>;
pub type FrameTruth = BTreeMap<u32, Vec<AnnotationRecord>>;

struct Scored {
    frame: u32,
    bbox: BBox,
    confidence: f64,
}

/// Area under the all-point interpolated precision envelope.
pub fn all_point_ap(curve: &[PrPoint]) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    for p in curve {
        recall.push(p.recall);
        precision.push(p.precision);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (0..recall.len() - 1).map(|i| (recall[i + 1] - recall[i]) * precision[i + 1]).sum()
}

fn average_precision(mut preds: Vec<Scored>, truth: &BTreeMap<u32, Vec<BBox>>, threshold: f64) -> MapResult {
    let n_gt: usize = truth.values().map(Vec::len).sum();
    preds.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.frame.cmp(&b.frame))
            .then(a.bbox.canonical_key().cmp(&b.bbox.canonical_key()))
    });
    let mut used: BTreeMap<u32, Vec<bool>> = truth.iter().map(|(&f, v)| (f, vec![false; v.len()])).collect();
    let mut curve = Vec::with_capacity(preds.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for p in &preds {
        let mut best: Option<(f64, usize)> = None;
        if let (Some(gts), Some(flags)) = (truth.get(&p.frame), used.get(&p.frame)) {
            for (i, g) in gts.iter().enumerate() {
                if flags[i] {
                    continue;
                }
                let v = iou(&p.bbox, g);
                if v >= threshold && best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, i));
                }
            }
        }
        let hit = match best {
            Some((_, i)) => {
                used.get_mut(&p.frame).expect("frame present")[i] = true;
                tp += 1;
                true
            }
            None => {
                fp += 1;
                false
            }
        };
        curve.push(PrPoint {
            confidence: p.confidence,
            true_positive: hit,
            recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    let ap = if n_gt == 0 {
        if !preds.is_empty() {
            log::warn!("no ground truth boxes; {} predictions scored as AP 0", preds.len());
        }
        0.0
    } else {
        all_point_ap(&curve)
    };
    MapResult { ap, curve, ground_truth: n_gt, predictions: preds.len() }
}

/// Box AP over all frames: predictions ranked by confidence and greedily
/// matched to the best unmatched ground truth box in the same frame.
pub fn evaluate_map(predictions: &FrameDetections, truth: &FrameTruth, cfg: &EvalConfig) -> MapResult {
    let preds = predictions
        .iter()
        .flat_map(|(&frame, ds)| ds.iter().map(move |d| Scored { frame, bbox: d.bbox, confidence: d.confidence }))
        .collect();
    let gt = truth.iter().map(|(&f, rs)| (f, rs.iter().map(|r| r.bbox).collect())).collect();
    average_precision(preds, &gt, cfg.iou_threshold)
}

fn class_macro_ap(
    predictions: &FrameDetections,
    truth: &FrameTruth,
    cfg: &EvalConfig,
    pred_label: impl Fn(&Detection) -> Option<usize>,
    gt_label: impl Fn(&AnnotationRecord) -> Option<usize>,
) -> f64 {
    let mut classes: Vec<usize> = truth.values().flatten().filter_map(&gt_label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &k in &classes {
        let preds = predictions
            .iter()
            .flat_map(|(&frame, ds)| {
                ds.iter()
                    .filter(|d| pred_label(d) == Some(k))
                    .map(move |d| Scored { frame, bbox: d.bbox, confidence: d.confidence })
            })
            .collect();
        let gt = truth
            .iter()
            .map(|(&f, rs)| (f, rs.iter().filter(|r| gt_label(r) == Some(k)).map(|r| r.bbox).collect()))
            .collect();
        sum += average_precision(preds, &gt, cfg.iou_threshold).ap;
    }
    sum / classes.len() as f64
}

/// Per-class AP over argmax action labels, macro-averaged over the classes
/// present in the ground truth; returns `(primary, secondary)`.
pub fn action_map(predictions: &FrameDetections, truth: &FrameTruth, cfg: &EvalConfig) -> (f64, f64) {
    let primary = class_macro_ap(predictions, truth, cfg, Detection::primary_action, AnnotationRecord::primary_index);
    let secondary =
        class_macro_ap(predictions, truth, cfg, Detection::secondary_action, AnnotationRecord::secondary_index);
    (primary, secondary)
}

/// Key-value summary lines.
pub fn format_summary(ap: f64, primary_ap: f64, secondary_ap: f64) -> String {
    format!("ap={ap:.6}\nprimary_ap={primary_ap:.6}\nsecondary_ap={secondary_ap:.6}\n")
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("rank,confidence,tp,recall,precision\n");
    for (i, p) in curve.iter().enumerate() {
        let _ = writeln!(out, "{},{:.6},{},{:.6},{:.6}", i + 1, p.confidence, u8::from(p.true_positive), p.recall, p.precision);
    }
    out
}

/// Prediction records (annotation format with a confidence column) as
/// detections with one-hot action distributions.
pub fn detections_from_records(records: &[AnnotationRecord], n_primary: usize, n_secondary: usize) -> FrameDetections {
    let one_hot = |k: Option<usize>, n: usize| match k {
        Some(k) if k < n => (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect(),
        _ => Vec::new(),
    };
    let mut out = FrameDetections::new();
    for r in records {
        out.entry(r.frame_id).or_default().push(Detection {
            bbox: r.bbox,
            confidence: r.confidence_or_one(),
            primary: one_hot(r.primary_index(), n_primary),
            secondary: one_hot(r.secondary_index(), n_secondary),
            track_id: u32::try_from(r.track_id).unwrap_or(0),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::UNSET;
    use crate::rng::SplitMix64;

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt(frame: u32, b: BBox, p: i64, s: i64) -> AnnotationRecord {
        AnnotationRecord { frame_id: frame, bbox: b, track_id: 0, primary_action: p, secondary_action: s, confidence: None }
    }

    fn labeled(b: BBox, c: f64, p: usize, s: usize) -> Detection {
        let mut d = Detection::boxed(b, c);
        d.primary = (0..4).map(|i| if i == p { 0.9 } else { 0.1 / 3.0 }).collect();
        d.secondary = (0..2).map(|i| if i == s { 0.8 } else { 0.2 }).collect();
        d
    }

    #[test]
    fn hand_computed_half() {
        let g1 = bb(0, 0, 10, 10);
        let g2 = bb(50, 50, 60, 60);
        // IoU 0.7 against g1: same height, 70% of the width
        let tp_shift = bb(0, 0, 7, 10);
        assert!((iou(&tp_shift, &g1) - 0.7).abs() < 1e-12);
        let truth: FrameTruth = [(0, vec![gt(0, g1, UNSET, UNSET), gt(0, g2, UNSET, UNSET)])].into();
        let preds: FrameDetections =
            [(0, vec![Detection::boxed(tp_shift, 0.9), Detection::boxed(bb(100, 0, 110, 10), 0.8)])].into();
        let r = evaluate_map(&preds, &truth, &EvalConfig::default());
        assert_eq!(r.curve.len(), 2);
        assert_eq!((r.curve[0].precision, r.curve[0].recall), (1.0, 0.5));
        assert_eq!((r.curve[1].precision, r.curve[1].recall), (0.5, 0.5));
        assert!((r.ap - 0.5).abs() < 1e-12);
        assert!(pr_curve_csv(&r.curve).starts_with("rank,confidence,tp,recall,precision\n1,0.900000,1,"));
    }

    #[test]
    fn perfect_and_empty() {
        let boxes = [bb(0, 0, 10, 10), bb(20, 0, 30, 12), bb(5, 40, 15, 55)];
        let truth: FrameTruth = [
            (0, vec![gt(0, boxes[0], 0, 1), gt(0, boxes[1], 2, 0)]),
            (1, vec![gt(1, boxes[2], 3, 1)]),
        ]
        .into();
        let preds: FrameDetections = [
            (0, vec![labeled(boxes[0], 1.0, 0, 1), labeled(boxes[1], 1.0, 2, 0)]),
            (1, vec![labeled(boxes[2], 1.0, 3, 1)]),
        ]
        .into();
        let cfg = EvalConfig::default();
        assert_eq!(evaluate_map(&preds, &truth, &cfg).ap, 1.0);
        assert_eq!(action_map(&preds, &truth, &cfg), (1.0, 1.0));
        assert_eq!(evaluate_map(&FrameDetections::new(), &truth, &cfg).ap, 0.0);
        assert_eq!(evaluate_map(&preds, &FrameTruth::new(), &cfg).ap, 0.0);

        let wrong: FrameDetections = [
            (0, vec![labeled(boxes[0], 1.0, 1, 1), labeled(boxes[1], 1.0, 3, 0)]),
            (1, vec![labeled(boxes[2], 1.0, 0, 1)]),
        ]
        .into();
        assert_eq!(action_map(&wrong, &truth, &cfg).0, 0.0);
        assert_eq!(action_map(&wrong, &truth, &cfg).1, 1.0);
    }

    #[test]
    fn manual_action_instance() {
        // 3 GT, 4 detections. Primary labels: g0=0, g1=0, g2=1.
        let g = [bb(0, 0, 10, 10), bb(20, 0, 30, 10), bb(40, 0, 50, 10)];
        let truth: FrameTruth = [(0, vec![gt(0, g[0], 0, 0), gt(0, g[1], 0, 1), gt(0, g[2], 1, 1)])].into();
        let preds: FrameDetections = [(
            0,
            vec![
                labeled(g[0], 0.9, 0, 0),             // class 0 TP
                labeled(g[2], 0.8, 0, 1),             // class 0, wrong label -> FP
                labeled(g[1], 0.7, 0, 1),             // class 0 TP
                labeled(bb(41, 0, 51, 10), 0.6, 1, 0), // class 1 TP (IoU 90/110)
            ],
        )]
        .into();
        // class 0: TP, FP, TP over 2 GT -> points (1,.5), (.5,.5), (2/3, 1)
        //   envelope: recall .5 at 1.0, recall 1 at 2/3 -> AP = .5 + .5 * 2/3
        // class 1: single TP over 1 GT -> AP 1
        let class0 = 0.5 + 0.5 * (2.0 / 3.0);
        let (p, s) = action_map(&preds, &truth, &EvalConfig::default());
        assert!((p - (class0 + 1.0) / 2.0).abs() < 1e-12);
        // secondary: class 0 GT {g0}, preds labeled 0: g0 (0.9, TP), shifted (0.6, FP) -> AP 1
        // class 1 GT {g1, g2}, preds labeled 1: g2 (0.8, TP), g1 (0.7, TP) -> AP 1
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_only_dependence() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..50 {
            let mut truth = FrameTruth::new();
            let mut preds = FrameDetections::new();
            for f in 0..3u32 {
                let mut gts = Vec::new();
                let mut ds = Vec::new();
                for _ in 0..rng.range_usize(0, 4) {
                    let x = rng.range_i64(0, 60) as i32;
                    gts.push(gt(f, bb(x, 0, x + 10, 10), UNSET, UNSET));
                }
                for _ in 0..rng.range_usize(0, 5) {
                    let x = rng.range_i64(0, 60) as i32;
                    ds.push(Detection::boxed(bb(x, 0, x + 10, 10), rng.next_f64()));
                }
                truth.insert(f, gts);
                preds.insert(f, ds);
            }
            let cfg = EvalConfig::default();
            let a = evaluate_map(&preds, &truth, &cfg).ap;
            assert!((0.0..=1.0).contains(&a));
            let squashed: FrameDetections = preds
                .iter()
                .map(|(&f, ds)| {
                    (f, ds.iter().map(|d| Detection { confidence: d.confidence.powi(3) * 0.5, ..d.clone() }).collect())
                })
                .collect();
            assert_eq!(evaluate_map(&squashed, &truth, &cfg).ap, a);
        }
    }

    #[test]
    fn summary_and_record_conversion() {
        assert_eq!(format_summary(0.5, 0.25, 1.0), "ap=0.500000\nprimary_ap=0.250000\nsecondary_ap=1.000000\n");
        let mut r = gt(3, bb(0, 0, 4, 4), 2, UNSET);
        r.confidence = Some(0.4);
        let d = detections_from_records(&[r], 4, 5);
        assert_eq!(d[&3][0].primary, vec![0.0, 0.0, 1.0, 0.0]);
        assert!(d[&3][0].secondary.is_empty());
        assert_eq!(d[&3][0].confidence, 0.4);
    }
}

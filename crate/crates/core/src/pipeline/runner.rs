use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};

use super::config::PipelineConfig;
use super::features::{feature_stub, FrameRecord};
use super::PipelineError;
use crate::attention::crop_and_resize;
use crate::boxgen::box_generator;
use crate::codec::DenseMaps;
use crate::refine::nms::{nms, Detection};
use crate::temporal::{ActivityModel, ActionVocabulary, Mode, TrackStore};
use crate::wire::{encode_message, ReportEntry, ReportMessage};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub features: Duration,
    pub decode: Duration,
    pub attention: Duration,
    pub temporal: Duration,
    pub nms: Duration,
    pub wire: Duration,
}

impl StageTimings {
    /// Everything except the feature stub.
    pub fn frame_path(&self) -> Duration {
        self.decode + self.attention + self.temporal + self.nms + self.wire
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_id: u32,
    /// Proposals before suppression, in decode order, with track ids.
    pub proposals: Vec<Detection>,
    /// Survivors of confidence NMS, highest priority first.
    pub detections: Vec<Detection>,
    pub report: ReportMessage,
    pub encoded: Vec<u8>,
    pub timings: StageTimings,
}

/// Per-sequence state: the activity model and live tracks.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    model: ActivityModel,
    tracks: TrackStore,
    last_frame: Option<u32>,
}

pub fn model_input_size(cfg: &PipelineConfig) -> usize {
    (cfg.features.depth() + 1) * cfg.attention.out_size * cfg.attention.out_size
}

impl Pipeline {
    /// Loads `model.path` when set, otherwise builds a seeded cell with
    /// zero-initialized heads.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let model = match &cfg.model.path {
            Some(p) => ActivityModel::load(p)?,
            None => {
                let vocab = ActionVocabulary::default();
                ActivityModel::new(
                    model_input_size(&cfg),
                    cfg.model.hidden,
                    vocab.n_primary(),
                    vocab.n_secondary(),
                    cfg.model.seed,
                )
            }
        };
        Self::with_model(cfg, model)
    }

    pub fn with_model(cfg: PipelineConfig, mut model: ActivityModel) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let want = model_input_size(&cfg);
        if model.cell.input_size() != want {
            return Err(PipelineError::Model(format!(
                "model expects {} inputs but crops have {want}",
                model.cell.input_size()
            )));
        }
        model.cell.mode = Mode::Infer;
        let tracks = TrackStore::new(model.cell.hidden_size(), cfg.track.max_dist, cfg.track.max_age);
        Ok(Self { cfg, model, tracks, last_frame: None })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ActivityModel {
        &self.model
    }

    pub fn tracks(&self) -> &TrackStore {
        &self.tracks
    }

    pub fn timestamp(&self, frame_id: u32) -> u64 {
        self.cfg.wire.base_timestamp_ms + u64::from(frame_id) * self.cfg.wire.frame_interval_ms
    }

    pub fn run_frame(&mut self, frame: &FrameRecord) -> Result<FrameOutput, PipelineError> {
        frame.validate()?;
        let maps = frame.maps.as_ref().ok_or_else(|| PipelineError::Frame {
            frame_id: frame.frame_id,
            message: "frame carries no dense maps".into(),
        })?;
        let t = Instant::now();
        let features = feature_stub(&frame.intensity, &self.cfg.features);
        let stub = t.elapsed();
        let mut out = self.run_with_features(frame.frame_id, maps, &features)?;
        out.timings.features = stub;
        Ok(out)
    }

    /// The frame path after feature extraction: decode, crops with
    /// attention, association and prediction, NMS and report encoding.
    pub fn run_with_features(
        &mut self,
        frame_id: u32,
        maps: &DenseMaps,
        features: &Array3<f32>,
    ) -> Result<FrameOutput, PipelineError> {
        let ctx = |message: String| PipelineError::Frame { frame_id, message };
        if let Some(last) = self.last_frame {
            if frame_id <= last {
                return Err(ctx(format!("frame ids must increase; previous was {last}")));
            }
        }
        let (depth, fw, fh) = features.dim();
        if depth != self.cfg.features.depth() || (fw, fh) != (maps.width(), maps.height()) {
            return Err(ctx(format!("feature grid {depth}x{fw}x{fh} does not match the configuration or maps")));
        }
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let boxes = box_generator(maps, &self.cfg.boxgen).map_err(|e| ctx(e.to_string()))?;
        timings.decode = t.elapsed();

        let t = Instant::now();
        let input = model_input_size(&self.cfg);
        let mut x = Array2::<f64>::zeros((boxes.len(), input));
        for (i, b) in boxes.iter().enumerate() {
            let crop = crop_and_resize(features, b, frame_id, &self.cfg.attention);
            for (slot, v) in x.row_mut(i).iter_mut().zip(crop.tensor.iter()) {
                *slot = *v;
            }
        }
        timings.attention = t.elapsed();

        let t = Instant::now();
        let ids = self.tracks.update(&boxes);
        let mut proposals = Vec::with_capacity(boxes.len());
        if !boxes.is_empty() {
            let hidden = self.model.cell.hidden_size();
            let mut h = Array2::<f64>::zeros((boxes.len(), hidden));
            let mut c = Array2::<f64>::zeros((boxes.len(), hidden));
            for (i, id) in ids.iter().enumerate() {
                let tr = self.tracks.get(*id).expect("track assigned this frame");
                h.row_mut(i).assign(&tr.h);
                c.row_mut(i).assign(&tr.c);
            }
            let (h2, c2, preds) = self.model.predict(&x, &h, &c).map_err(|e| ctx(e.to_string()))?;
            for (i, (id, p)) in ids.iter().zip(preds).enumerate() {
                let tr = self.tracks.get_mut(*id).expect("track assigned this frame");
                tr.h.assign(&h2.row(i));
                tr.c.assign(&c2.row(i));
                proposals.push(Detection {
                    bbox: boxes[i],
                    confidence: p.confidence,
                    primary: p.primary.clone(),
                    secondary: p.secondary.clone(),
                    track_id: *id,
                });
                tr.prediction = Some(p);
            }
        }
        timings.temporal = t.elapsed();

        let t = Instant::now();
        let detections = nms(&proposals, self.cfg.nms.iou, self.cfg.nms.floor);
        timings.nms = t.elapsed();

        let t = Instant::now();
        let mut report = ReportMessage {
            flags: 0,
            frame_id,
            timestamp: self.timestamp(frame_id),
            drone_lat: self.cfg.wire.drone_lat,
            drone_lon: self.cfg.wire.drone_lon,
            drone_alt: self.cfg.wire.drone_alt,
            detections: detections
                .iter()
                .map(|d| {
                    ReportEntry::from_box(
                        &d.bbox,
                        d.track_id,
                        d.primary_action().unwrap_or(0),
                        d.secondary_action().unwrap_or(0),
                        d.confidence,
                    )
                })
                .collect::<Result<_, _>>()?,
        };
        report.truncate_to_cap();
        let encoded = encode_message(&report)?;
        timings.wire = t.elapsed();

        self.last_frame = Some(frame_id);
        log::info!(
            "frame {frame_id}: {} proposals, {} kept, {} B; decode {:.3} ms, attention {:.3} ms, temporal {:.3} ms, nms {:.3} ms, wire {:.3} ms",
            proposals.len(),
            detections.len(),
            encoded.len(),
            ms(timings.decode),
            ms(timings.attention),
            ms(timings.temporal),
            ms(timings.nms),
            ms(timings.wire),
        );
        Ok(FrameOutput { frame_id, proposals, detections, report, encoded, timings })
    }
}

pub(crate) fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;
    use crate::geometry::{iou, BBox};
    use crate::synth::{generate_sequence, SceneConfig};
    use crate::wire::decode_message;

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.scene = SceneConfig { width: 160, height: 120, count_min: 2, count_max: 4, seed: 11, ..SceneConfig::default() };
        cfg.model.hidden = 16;
        cfg
    }

    #[test]
    fn zero_maps_give_empty_report() {
        let mut p = Pipeline::new(small_cfg()).unwrap();
        let out = p.run_frame(&FrameRecord::from_maps(0, DenseMaps::zeros(160, 120))).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.encoded.len(), 31);
        assert_eq!(decode_message(&out.encoded).unwrap(), out.report);
    }

    #[test]
    fn identical_frames_keep_boxes_and_ids() {
        let boxes = [BBox::new(10, 10, 30, 40).unwrap(), BBox::new(60, 50, 80, 70).unwrap()];
        let maps = encode(&boxes, 160, 120).unwrap();
        let mut p = Pipeline::new(small_cfg()).unwrap();
        let a = p.run_frame(&FrameRecord::from_maps(0, maps.clone())).unwrap();
        let b = p.run_frame(&FrameRecord::from_maps(1, maps)).unwrap();
        let key = |o: &FrameOutput| {
            let mut v: Vec<_> = o.detections.iter().map(|d| (d.bbox.canonical_key(), d.track_id)).collect();
            v.sort();
            v
        };
        assert_eq!(key(&a), key(&b));
        assert_eq!(a.detections.len(), 2);
    }

    #[test]
    fn clean_sequence_matches_truth_and_is_deterministic() {
        let cfg = small_cfg();
        let scenes = generate_sequence(&cfg.scene, 8).unwrap();
        let run = || {
            let mut p = Pipeline::new(cfg.clone()).unwrap();
            scenes.iter().map(|s| p.run_frame(&FrameRecord::from_maps(s.frame_id, s.maps.clone())).unwrap()).collect::<Vec<_>>()
        };
        let first = run();
        for (s, o) in scenes.iter().zip(&first) {
            assert_eq!(o.detections.len(), s.objects.len());
            for obj in &s.objects {
                assert!(o.detections.iter().any(|d| iou(&d.bbox, &obj.bbox) >= 0.9));
            }
            assert_eq!(decode_message(&o.encoded).unwrap(), o.report);
            assert_eq!(o.report.timestamp, 1_700_000_000_000 + 100 * u64::from(s.frame_id));
        }
        let second = run();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.detections, b.detections);
            assert_eq!(a.encoded, b.encoded);
        }
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let mut p = Pipeline::new(small_cfg()).unwrap();
        p.run_frame(&FrameRecord::from_maps(5, DenseMaps::zeros(160, 120))).unwrap();
        let err = p.run_frame(&FrameRecord::from_maps(5, DenseMaps::zeros(160, 120))).unwrap_err();
        assert!(matches!(err, PipelineError::Frame { frame_id: 5, .. }));
    }

    #[test]
    fn model_size_mismatch() {
        let model = ActivityModel::new(10, 4, 4, 5, 0);
        assert!(matches!(Pipeline::with_model(small_cfg(), model), Err(PipelineError::Model(_))));
    }
}

//! Per-stage latency over a synthetic sequence.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use super::config::PipelineConfig;
use super::features::{feature_stub, intensity_from_maps};
use super::runner::{ms, Pipeline, StageTimings};
use super::PipelineError;
use crate::synth::{generate_sequence, SceneConfig};

pub const STAGES: [&str; 5] = ["decode", "attention", "temporal", "nms", "wire"];
const WARMUP_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub frames: usize,
    pub boxes: usize,
    /// Skip to the newest frame whenever processing falls behind a camera
    /// delivering one frame per `wire.frame_interval_ms`.
    pub latest_only: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { frames: 100, boxes: 10, latest_only: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Rows for each of [`STAGES`], then `frame` (their per-frame sum) and
    /// `features_stub`.
    pub rows: Vec<(String, StageStats)>,
    pub processed: usize,
    pub dropped: usize,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<StageStats> {
        self.rows.iter().find(|r| r.0 == name).map(|r| r.1)
    }

    /// Running sum of stage means in pipeline order.
    pub fn cumulative_means(&self) -> Vec<f64> {
        STAGES
            .iter()
            .scan(0.0, |acc, s| {
                *acc += self.stage(s).map_or(0.0, |x| x.mean_ms);
                Some(*acc)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,mean_ms,p95_ms\n");
        for (name, s) in &self.rows {
            let _ = writeln!(out, "{name},{:.4},{:.4}", s.mean_ms, s.p95_ms);
        }
        out
    }
}

/// Nearest-rank 95th percentile.
pub fn percentile95(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (0.95 * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn stats(samples: &[f64]) -> StageStats {
    let mean = if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 };
    StageStats { mean_ms: mean, p95_ms: percentile95(samples) }
}

/// Scenes hold exactly `boxes` objects (zero gives empty maps). Features
/// are computed outside the timed frame path.
pub fn bench_frames(cfg: &PipelineConfig, bench: &BenchConfig) -> Result<BenchReport, PipelineError> {
    let scene_cfg = SceneConfig { count_min: bench.boxes, count_max: bench.boxes, ..cfg.scene.clone() };
    let scenes = generate_sequence(&scene_cfg, bench.frames + WARMUP_FRAMES)?;
    let mut pipeline = Pipeline::new(cfg.clone())?;

    let mut per_stage: Vec<Vec<f64>> = vec![Vec::new(); STAGES.len() + 2];
    let interval = cfg.wire.frame_interval_ms as f64;
    let mut clock_ms = 0.0;
    let (mut processed, mut dropped) = (0, 0);
    let mut k = 0;
    while k < scenes.len() {
        let s = &scenes[k];
        let t = Instant::now();
        let features = feature_stub(&intensity_from_maps(&s.maps), &cfg.features);
        let stub = t.elapsed();
        let out = pipeline.run_with_features(s.frame_id, &s.maps, &features)?;
        let timed = k >= WARMUP_FRAMES;
        if timed {
            record(&mut per_stage, &out.timings, stub);
            processed += 1;
        }
        let next = if bench.latest_only && timed {
            clock_ms += ms(stub + out.timings.frame_path());
            let newest = if interval > 0.0 { (clock_ms / interval).floor() as usize + WARMUP_FRAMES } else { scenes.len() - 1 };
            newest.min(scenes.len() - 1).max(k + 1)
        } else {
            k + 1
        };
        if timed && next < scenes.len() {
            dropped += next - k - 1;
        }
        k = next;
    }
    let mut rows: Vec<(String, StageStats)> =
        STAGES.iter().enumerate().map(|(i, s)| (s.to_string(), stats(&per_stage[i]))).collect();
    rows.push(("frame".into(), stats(&per_stage[STAGES.len()])));
    rows.push(("features_stub".into(), stats(&per_stage[STAGES.len() + 1])));
    Ok(BenchReport { rows, processed, dropped })
}

fn record(per_stage: &mut [Vec<f64>], t: &StageTimings, stub: Duration) {
    let values = [t.decode, t.attention, t.temporal, t.nms, t.wire, t.frame_path(), stub];
    for (slot, v) in per_stage.iter_mut().zip(values) {
        slot.push(ms(v));
    }
}

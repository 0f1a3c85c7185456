//! Per-frame orchestration, configuration, feature stub, benchmarking and
//! overlays.

pub mod bench;
pub mod config;
pub mod features;
pub mod overlay;
pub mod runner;

pub use bench::{bench_frames, BenchConfig, BenchReport};
pub use config::{ConfigError, PipelineConfig};
pub use features::{feature_stub, intensity_from_maps, FrameRecord};
pub use runner::{model_input_size, FrameOutput, Pipeline, StageTimings};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("frame {frame_id}: {message}")]
    Frame { frame_id: u32, message: String },
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Temporal(#[from] crate::temporal::TemporalError),
    #[error(transparent)]
    Wire(#[from] crate::wire::WireError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
}

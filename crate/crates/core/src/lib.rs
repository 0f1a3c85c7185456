//! Onboard aerial pedestrian detection and activity reporting.

pub mod annotation;
pub mod attention;
pub mod boxgen;
pub mod codec;
pub mod geometry;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod synth;
pub mod temporal;
pub mod tensor_file;
pub mod wire;

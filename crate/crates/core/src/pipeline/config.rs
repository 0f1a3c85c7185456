//! Flat `section.key = value` configuration. Blank lines and lines starting
//! with `#` are ignored; later assignments win.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::attention::AttentionConfig;
use crate::boxgen::{BoxGeneratorConfig, PlateauTie};
use crate::refine::eval::EvalConfig;
use crate::refine::nms::{DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR};
use crate::synth::SceneConfig;
use crate::temporal::model::DEFAULT_HIDDEN;
use crate::temporal::track::{DEFAULT_MAX_AGE, DEFAULT_MAX_DIST};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig {
    pub max_dist: f64,
    pub max_age: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub iou: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Downsampling factors; three channels per scale.
    pub scales: Vec<usize>,
}

impl FeatureConfig {
    pub fn depth(&self) -> usize {
        3 * self.scales.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub seed: u64,
    /// Trained model bundle; zero-initialized heads when unset.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireConfig {
    pub addr: Option<String>,
    /// Timestamp of frame 0; frame `k` is stamped `base + k * interval`.
    pub base_timestamp_ms: u64,
    pub frame_interval_ms: u64,
    pub drone_lat: i32,
    pub drone_lon: i32,
    pub drone_alt: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub boxgen: BoxGeneratorConfig,
    pub attention: AttentionConfig,
    pub track: TrackConfig,
    pub nms: NmsConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub wire: WireConfig,
    pub eval: EvalConfig,
    pub scene: SceneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            boxgen: BoxGeneratorConfig::default(),
            attention: AttentionConfig::default(),
            track: TrackConfig { max_dist: DEFAULT_MAX_DIST, max_age: DEFAULT_MAX_AGE },
            nms: NmsConfig { iou: DEFAULT_NMS_IOU, floor: DEFAULT_SCORE_FLOOR },
            features: FeatureConfig { scales: vec![1, 2, 4] },
            model: ModelConfig { hidden: DEFAULT_HIDDEN, seed: 0, path: None },
            wire: WireConfig {
                addr: None,
                base_timestamp_ms: 1_700_000_000_000,
                frame_interval_ms: 100,
                drone_lat: 0,
                drone_lon: 0,
                drone_alt: 0,
            },
            eval: EvalConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn optional(value: &str) -> Option<&str> {
    (!value.is_empty() && value != "none").then_some(value)
}

/// Every recognized key with a one-line description, for help output.
pub const KEYS: &[(&str, &str)] = &[
    ("boxgen.delta", "minimum segmented fraction of a candidate box"),
    ("boxgen.max_filter_window", "odd side of the corner peak window"),
    ("boxgen.min_patch_area", "smallest support patch kept by denoising"),
    ("boxgen.peak_floor", "minimum corner peak value"),
    ("boxgen.max_box_diag", "candidate diagonal cap in pixels, or none"),
    ("boxgen.plateau_tie", "toward_corner or raster_first"),
    ("boxgen.same_component", "require both corners in one support patch"),
    ("attention.expand_ratio", "crop window side over the longer box side"),
    ("attention.sigma_scale", "attention spread relative to box size"),
    ("attention.out_size", "crop side after resizing"),
    ("track.max_dist", "association gate on center distance, px"),
    ("track.max_age", "frames a track survives unmatched"),
    ("nms.iou", "suppression IoU threshold"),
    ("nms.floor", "minimum confidence kept"),
    ("features.scales", "comma-separated downsampling factors"),
    ("model.hidden", "recurrent state size"),
    ("model.seed", "seed for recurrent weights"),
    ("model.path", "trained model bundle, or none"),
    ("wire.addr", "report destination host:port, or none"),
    ("wire.base_timestamp_ms", "timestamp of frame 0"),
    ("wire.frame_interval_ms", "timestamp step per frame"),
    ("wire.drone_lat", "drone latitude, 1e-7 degrees"),
    ("wire.drone_lon", "drone longitude, 1e-7 degrees"),
    ("wire.drone_alt", "drone altitude, decimeters"),
    ("eval.iou", "true-positive IoU threshold"),
    ("scene.width", "synthetic grid width"),
    ("scene.height", "synthetic grid height"),
    ("scene.count_min", "fewest boxes per scene"),
    ("scene.count_max", "most boxes per scene"),
    ("scene.side_min", "shortest box side"),
    ("scene.side_max", "longest box side"),
    ("scene.min_gap", "empty pixels between boxes"),
    ("scene.max_speed", "per-axis speed bound, px/frame"),
    ("scene.reg_noise", "regression noise amplitude"),
    ("scene.seg_flip_prob", "segmentation flip probability"),
    ("scene.seed", "scene seed"),
];

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "boxgen.delta" => self.boxgen.delta = parse_value(key, v)?,
            "boxgen.max_filter_window" => self.boxgen.max_filter_window = parse_value(key, v)?,
            "boxgen.min_patch_area" => self.boxgen.min_patch_area = parse_value(key, v)?,
            "boxgen.peak_floor" => self.boxgen.peak_floor = parse_value(key, v)?,
            "boxgen.max_box_diag" => {
                self.boxgen.max_box_diag = optional(v).map(|s| parse_value(key, s)).transpose()?
            }
            "boxgen.plateau_tie" => {
                self.boxgen.plateau_tie = match v {
                    "toward_corner" => PlateauTie::TowardCorner,
                    "raster_first" => PlateauTie::RasterFirst,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: v.into(),
                            reason: "expected toward_corner or raster_first".into(),
                        })
                    }
                }
            }
            "boxgen.same_component" => self.boxgen.same_component = parse_value(key, v)?,
            "attention.expand_ratio" => self.attention.expand_ratio = parse_value(key, v)?,
            "attention.sigma_scale" => self.attention.sigma_scale = parse_value(key, v)?,
            "attention.out_size" => self.attention.out_size = parse_value(key, v)?,
            "track.max_dist" => self.track.max_dist = parse_value(key, v)?,
            "track.max_age" => self.track.max_age = parse_value(key, v)?,
            "nms.iou" => self.nms.iou = parse_value(key, v)?,
            "nms.floor" => self.nms.floor = parse_value(key, v)?,
            "features.scales" => {
                self.features.scales =
                    v.split(',').map(|s| parse_value(key, s.trim())).collect::<Result<_, _>>()?
            }
            "model.hidden" => self.model.hidden = parse_value(key, v)?,
            "model.seed" => self.model.seed = parse_value(key, v)?,
            "model.path" => self.model.path = optional(v).map(PathBuf::from),
            "wire.addr" => self.wire.addr = optional(v).map(str::to_string),
            "wire.base_timestamp_ms" => self.wire.base_timestamp_ms = parse_value(key, v)?,
            "wire.frame_interval_ms" => self.wire.frame_interval_ms = parse_value(key, v)?,
            "wire.drone_lat" => self.wire.drone_lat = parse_value(key, v)?,
            "wire.drone_lon" => self.wire.drone_lon = parse_value(key, v)?,
            "wire.drone_alt" => self.wire.drone_alt = parse_value(key, v)?,
            "eval.iou" => self.eval.iou_threshold = parse_value(key, v)?,
            "scene.width" => self.scene.width = parse_value(key, v)?,
            "scene.height" => self.scene.height = parse_value(key, v)?,
            "scene.count_min" => self.scene.count_min = parse_value(key, v)?,
            "scene.count_max" => self.scene.count_max = parse_value(key, v)?,
            "scene.side_min" => self.scene.side_min = parse_value(key, v)?,
            "scene.side_max" => self.scene.side_max = parse_value(key, v)?,
            "scene.min_gap" => self.scene.min_gap = parse_value(key, v)?,
            "scene.max_speed" => self.scene.max_speed = parse_value(key, v)?,
            "scene.reg_noise" => self.scene.reg_noise = parse_value(key, v)?,
            "scene.seg_flip_prob" => self.scene.seg_flip_prob = parse_value(key, v)?,
            "scene.seed" => self.scene.seed = parse_value(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected `section.key = value`".into(),
            })?;
            let key = key.trim();
            if !key.contains('.') {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("key `{key}` has no section") });
            }
            self.set(key, value).map_err(|e| match e {
                ConfigError::UnknownKey(k) => ConfigError::Syntax { line: i + 1, message: format!("unknown key `{k}`") },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.boxgen.validate().map_err(|e| invalid(e.to_string()))?;
        self.attention.validate().map_err(|e| invalid(e.to_string()))?;
        self.eval.validate().map_err(invalid)?;
        self.scene.validate().map_err(|e| invalid(e.to_string()))?;
        if self.features.scales.is_empty() || self.features.scales.contains(&0) {
            return Err(invalid("features.scales must list positive factors".into()));
        }
        if !(self.track.max_dist > 0.0) {
            return Err(invalid("track.max_dist must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nms.iou) || !(0.0..=1.0).contains(&self.nms.floor) {
            return Err(invalid("nms.iou and nms.floor must lie in [0, 1]".into()));
        }
        if self.model.hidden == 0 {
            return Err(invalid("model.hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let b = &self.boxgen;
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let values: Vec<(&str, String)> = vec![
            ("boxgen.delta", b.delta.to_string()),
            ("boxgen.max_filter_window", b.max_filter_window.to_string()),
            ("boxgen.min_patch_area", b.min_patch_area.to_string()),
            ("boxgen.peak_floor", b.peak_floor.to_string()),
            ("boxgen.max_box_diag", opt(b.max_box_diag.map(|d| d.to_string()))),
            (
                "boxgen.plateau_tie",
                match b.plateau_tie {
                    PlateauTie::TowardCorner => "toward_corner".into(),
                    PlateauTie::RasterFirst => "raster_first".into(),
                },
            ),
            ("boxgen.same_component", b.same_component.to_string()),
            ("attention.expand_ratio", self.attention.expand_ratio.to_string()),
            ("attention.sigma_scale", self.attention.sigma_scale.to_string()),
            ("attention.out_size", self.attention.out_size.to_string()),
            ("track.max_dist", self.track.max_dist.to_string()),
            ("track.max_age", self.track.max_age.to_string()),
            ("nms.iou", self.nms.iou.to_string()),
            ("nms.floor", self.nms.floor.to_string()),
            (
                "features.scales",
                self.features.scales.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("model.hidden", self.model.hidden.to_string()),
            ("model.seed", self.model.seed.to_string()),
            ("model.path", opt(self.model.path.as_ref().map(|p| p.display().to_string()))),
            ("wire.addr", opt(self.wire.addr.clone())),
            ("wire.base_timestamp_ms", self.wire.base_timestamp_ms.to_string()),
            ("wire.frame_interval_ms", self.wire.frame_interval_ms.to_string()),
            ("wire.drone_lat", self.wire.drone_lat.to_string()),
            ("wire.drone_lon", self.wire.drone_lon.to_string()),
            ("wire.drone_alt", self.wire.drone_alt.to_string()),
            ("eval.iou", self.eval.iou_threshold.to_string()),
            ("scene.width", self.scene.width.to_string()),
            ("scene.height", self.scene.height.to_string()),
            ("scene.count_min", self.scene.count_min.to_string()),
            ("scene.count_max", self.scene.count_max.to_string()),
            ("scene.side_min", self.scene.side_min.to_string()),
            ("scene.side_max", self.scene.side_max.to_string()),
            ("scene.min_gap", self.scene.min_gap.to_string()),
            ("scene.max_speed", self.scene.max_speed.to_string()),
            ("scene.reg_noise", self.scene.reg_noise.to_string()),
            ("scene.seg_flip_prob", self.scene.seg_flip_prob.to_string()),
            ("scene.seed", self.scene.seed.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Help text listing every key and its default.
pub fn keys_help() -> String {
    let defaults = PipelineConfig::default().to_text();
    let mut out = String::new();
    for ((key, doc), line) in KEYS.iter().zip(defaults.lines()) {
        let default = line.split_once(" = ").map_or("", |(_, v)| v);
        let _ = writeln!(out, "  {key:<26} {doc} [default: {default}]");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.features.depth(), 9);
    }

    #[test]
    fn keys_table_matches_text() {
        let text = PipelineConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, KEYS.iter().map(|k| k.0).collect::<Vec<_>>());
    }

    #[test]
    fn assignments_and_comments() {
        let cfg = PipelineConfig::parse(
            "# tuned\n\nboxgen.delta = 0.8\nnms.iou=0.4\nfeatures.scales = 1, 3\nwire.addr = 127.0.0.1:9000\n",
        )
        .unwrap();
        assert_eq!(cfg.boxgen.delta, 0.8);
        assert_eq!(cfg.nms.iou, 0.4);
        assert_eq!(cfg.features.scales, vec![1, 3]);
        assert_eq!(cfg.wire.addr.as_deref(), Some("127.0.0.1:9000"));
    }

    #[test]
    fn errors() {
        assert!(matches!(PipelineConfig::parse("boxgen.delta"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(PipelineConfig::parse("\nfoo.bar = 1"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(PipelineConfig::parse("delta = 1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(PipelineConfig::parse("nms.iou = high"), Err(ConfigError::Value { .. })));
        assert!(matches!(PipelineConfig::parse("boxgen.delta = 1.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("boxgen.max_filter_window = 4"), Err(ConfigError::Invalid(_))));
    }
}

//! Deterministic synthetic scenes, sequences, corrupted maps and crop
//! feature datasets.
//!
//! Everything is a pure function of its configuration and seed; all draws
//! come from [`SplitMix64`] streams in a fixed order.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::annotation::{self, AnnotationRecord};
use crate::codec::{encode, CodecError, DenseMaps};
use crate::geometry::BBox;
use crate::rng::SplitMix64;
use crate::tensor_file::{Tensor, TensorBundle, TensorFileError};

/// Total placement attempts before a scene is declared infeasible.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place {wanted} boxes after {MAX_PLACEMENT_ATTEMPTS} attempts (placed {placed})")]
    Infeasible { wanted: usize, placed: usize },
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorFileError),
    #[error("malformed crop dataset: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub count_min: usize,
    pub count_max: usize,
    pub side_min: i32,
    pub side_max: i32,
    /// Minimum number of empty pixels between any two boxes.
    pub min_gap: i32,
    pub seed: u64,
    /// Per-axis velocity magnitude bound, px/frame.
    pub max_speed: i32,
    pub reg_noise: f64,
    pub seg_flip_prob: f64,
    pub n_primary: usize,
    pub n_secondary: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            count_min: 1,
            count_max: 12,
            side_min: 8,
            side_max: 32,
            min_gap: 3,
            seed: 0,
            max_speed: 2,
            reg_noise: 0.0,
            seg_flip_prob: 0.0,
            n_primary: 4,
            n_secondary: 5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return err("grid must be non-empty");
        }
        if self.count_min > self.count_max {
            return err("count_min exceeds count_max");
        }
        if self.side_min < crate::geometry::MIN_BOX_SIDE || self.side_min > self.side_max {
            return err("side range must satisfy 2 <= side_min <= side_max");
        }
        if self.side_max as i64 >= self.width.min(self.height) as i64 {
            return err("side_max must be smaller than the grid");
        }
        if self.min_gap < 0 || self.max_speed < 0 {
            return err("gap and speed must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.seg_flip_prob) || !(0.0..=1.0).contains(&self.reg_noise) {
            return err("noise parameters must lie in [0, 1]");
        }
        if self.n_primary == 0 || self.n_secondary == 0 {
            return err("vocabularies must be non-empty");
        }
        Ok(())
    }

    /// Whether scenes satisfy the clean round-trip preconditions.
    pub fn roundtrip_mode(&self) -> bool {
        self.side_min >= 8 && self.min_gap >= 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub track_id: u32,
    pub primary: usize,
    pub secondary: usize,
    pub velocity: (i32, i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame_id: u32,
    pub objects: Vec<LabeledBox>,
    pub maps: DenseMaps,
}

impl Scene {
    pub fn boxes(&self) -> Vec<BBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        self.objects
            .iter()
            .map(|o| AnnotationRecord {
                frame_id: self.frame_id,
                bbox: o.bbox,
                track_id: i64::from(o.track_id),
                primary_action: o.primary as i64,
                secondary_action: o.secondary as i64,
                confidence: None,
            })
            .collect()
    }
}

fn clear_of(candidate: &BBox, others: impl IntoIterator<Item = BBox>, gap: i32) -> bool {
    others.into_iter().all(|o| candidate.separation(&o) >= gap)
}

fn place_objects(cfg: &SceneConfig, rng: &mut SplitMix64) -> Result<Vec<LabeledBox>, SynthError> {
    let wanted = rng.range_usize(cfg.count_min, cfg.count_max);
    let mut objects: Vec<LabeledBox> = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while objects.len() < wanted {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(SynthError::Infeasible { wanted, placed: objects.len() });
        }
        attempts += 1;
        let w = rng.range_i64(cfg.side_min.into(), cfg.side_max.into()) as i32;
        let h = rng.range_i64(cfg.side_min.into(), cfg.side_max.into()) as i32;
        let x0 = rng.range_i64(0, (cfg.width as i64 - 1) - i64::from(w)) as i32;
        let y0 = rng.range_i64(0, (cfg.height as i64 - 1) - i64::from(h)) as i32;
        let bbox = BBox::new(x0, y0, x0 + w, y0 + h).expect("sides >= side_min >= 2");
        if !clear_of(&bbox, objects.iter().map(|o| o.bbox), cfg.min_gap) {
            continue;
        }
        let primary = rng.below(cfg.n_primary as u64) as usize;
        let secondary = rng.below(cfg.n_secondary as u64) as usize;
        let vx = rng.range_i64(-i64::from(cfg.max_speed), cfg.max_speed.into()) as i32;
        let vy = rng.range_i64(-i64::from(cfg.max_speed), cfg.max_speed.into()) as i32;
        objects.push(LabeledBox {
            bbox,
            track_id: objects.len() as u32,
            primary,
            secondary,
            velocity: (vx, vy),
        });
    }
    Ok(objects)
}

/// Random non-overlapping labeled boxes and their clean encoding.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = SplitMix64::derive(cfg.seed, 0);
    let objects = place_objects(cfg, &mut rng)?;
    let boxes: Vec<BBox> = objects.iter().map(|o| o.bbox).collect();
    let maps = encode(&boxes, cfg.width, cfg.height)?;
    Ok(Scene { frame_id: 0, objects, maps })
}

fn step_axis(lo: i32, hi: i32, v: i32, limit: i32) -> (i32, i32) {
    if v == 0 {
        return (0, 0);
    }
    if lo + v >= 0 && hi + v <= limit {
        return (v, v);
    }
    let back = -v;
    if lo + back >= 0 && hi + back <= limit {
        (back, back)
    } else {
        (0, back)
    }
}

/// Advances every object by its velocity, reflecting at frame edges and
/// bouncing off neighbours so the gap invariant holds in every frame.
fn advance(objects: &mut [LabeledBox], cfg: &SceneConfig) {
    let (wl, hl) = (cfg.width as i32 - 1, cfg.height as i32 - 1);
    for k in 0..objects.len() {
        let o = objects[k];
        let (dx, vx) = step_axis(o.bbox.x0(), o.bbox.x1(), o.velocity.0, wl);
        let (dy, vy) = step_axis(o.bbox.y0(), o.bbox.y1(), o.velocity.1, hl);
        let others = || objects.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, p)| p.bbox);
        let moved = o.bbox.translated(dx, dy);
        if clear_of(&moved, others(), cfg.min_gap) {
            objects[k].bbox = moved;
            objects[k].velocity = (vx, vy);
            continue;
        }
        // bounce: reverse both components
        let (bx, by) = (-vx, -vy);
        let bounced = o.bbox.translated(bx, by);
        let in_grid = bounced.x0() >= 0 && bounced.y0() >= 0 && bounced.x1() <= wl && bounced.y1() <= hl;
        if in_grid && clear_of(&bounced, others(), cfg.min_gap) {
            objects[k].bbox = bounced;
        }
        objects[k].velocity = (bx, by);
    }
}

/// `frames` consecutive scenes with persistent track ids and labels.
pub fn generate_sequence(cfg: &SceneConfig, frames: usize) -> Result<Vec<Scene>, SynthError> {
    cfg.validate()?;
    let mut rng = SplitMix64::derive(cfg.seed, 0);
    let mut objects = place_objects(cfg, &mut rng)?;
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        if t > 0 {
            advance(&mut objects, cfg);
        }
        let boxes: Vec<BBox> = objects.iter().map(|o| o.bbox).collect();
        let mut maps = encode(&boxes, cfg.width, cfg.height)?;
        if cfg.reg_noise > 0.0 || cfg.seg_flip_prob > 0.0 {
            maps = corrupt_maps(&maps, cfg.reg_noise, cfg.seg_flip_prob, cfg.seed ^ ((t as u64 + 1) << 32));
        }
        out.push(Scene { frame_id: t as u32, objects: objects.clone(), maps });
    }
    Ok(out)
}

/// Additive uniform noise on the regression channels (clamped to `[0,1]`)
/// and independent segmentation bit flips.
pub fn corrupt_maps(maps: &DenseMaps, amplitude: f64, flip_prob: f64, seed: u64) -> DenseMaps {
    let mut rng = SplitMix64::derive(seed, 1);
    let mut seg = maps.seg().clone();
    let mut reg = maps.reg().clone();
    if amplitude > 0.0 {
        for v in reg.iter_mut() {
            let noisy = f64::from(*v) + rng.uniform(-amplitude, amplitude);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }
    if flip_prob > 0.0 {
        for s in seg.iter_mut() {
            if rng.bernoulli(flip_prob) {
                *s = 1.0 - *s;
            }
        }
    }
    DenseMaps::from_parts_unchecked(seg, reg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropDatasetConfig {
    pub n_primary: usize,
    pub n_secondary: usize,
    /// Length of each flattened crop feature vector.
    pub feature_dim: usize,
    /// Frames per sample sequence.
    pub seq_len: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Background (non-pedestrian) samples per split, as a multiple of one class.
    pub negative_classes: usize,
    /// Half-width of the uniform per-element noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for CropDatasetConfig {
    fn default() -> Self {
        Self {
            n_primary: 4,
            n_secondary: 5,
            feature_dim: 10 * 16 * 16,
            seq_len: 3,
            train_per_class: 16,
            test_per_class: 8,
            negative_classes: 2,
            noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropSample {
    /// `seq_len` feature vectors of length `feature_dim`.
    pub sequence: Vec<Vec<f64>>,
    pub primary: usize,
    pub secondary: usize,
    pub pedestrian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropDataset {
    pub config: CropDatasetConfig,
    pub train: Vec<CropSample>,
    pub test: Vec<CropSample>,
    /// Class mean per `(primary, secondary)` pair, row-major by primary.
    pub class_means: Vec<Vec<f64>>,
    pub background_mean: Vec<f64>,
}

impl CropDataset {
    pub fn class_mean(&self, primary: usize, secondary: usize) -> &[f64] {
        &self.class_means[primary * self.config.n_secondary + secondary]
    }

    /// Tensors `config`, `{train,test}.x` `(N, seq_len, D)`,
    /// `{train,test}.labels` `(N, 3)` holding primary, secondary and the
    /// pedestrian flag, `class_means` and `background_mean`.
    pub fn to_bundle(&self) -> Result<TensorBundle, SynthError> {
        let c = &self.config;
        let mut b = TensorBundle::new();
        let config = vec![
            c.n_primary as f64,
            c.n_secondary as f64,
            c.feature_dim as f64,
            c.seq_len as f64,
            c.train_per_class as f64,
            c.test_per_class as f64,
            c.negative_classes as f64,
            c.noise,
            (c.seed >> 32) as f64,
            (c.seed & 0xffff_ffff) as f64,
        ];
        b.insert("config", Tensor::f64(vec![config.len()], config)?);
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            let x: Vec<f64> = split.iter().flat_map(|s| s.sequence.iter().flatten().copied()).collect();
            b.insert(format!("{name}.x"), Tensor::f64(vec![split.len(), c.seq_len, c.feature_dim], x)?);
            let labels: Vec<f64> = split
                .iter()
                .flat_map(|s| [s.primary as f64, s.secondary as f64, f64::from(u8::from(s.pedestrian))])
                .collect();
            b.insert(format!("{name}.labels"), Tensor::f64(vec![split.len(), 3], labels)?);
        }
        let means: Vec<f64> = self.class_means.iter().flatten().copied().collect();
        b.insert("class_means", Tensor::f64(vec![self.class_means.len(), c.feature_dim], means)?);
        b.insert("background_mean", Tensor::f64(vec![c.feature_dim], self.background_mean.clone())?);
        Ok(b)
    }

    pub fn from_bundle(mut b: TensorBundle) -> Result<Self, SynthError> {
        let bad = |m: &str| SynthError::Format(m.to_string());
        let cv = b.take("config")?.into_f64()?;
        if cv.len() != 10 {
            return Err(bad("config must hold 10 values"));
        }
        let config = CropDatasetConfig {
            n_primary: cv[0] as usize,
            n_secondary: cv[1] as usize,
            feature_dim: cv[2] as usize,
            seq_len: cv[3] as usize,
            train_per_class: cv[4] as usize,
            test_per_class: cv[5] as usize,
            negative_classes: cv[6] as usize,
            noise: cv[7],
            seed: ((cv[8] as u64) << 32) | cv[9] as u64,
        };
        let (seq, dim) = (config.seq_len, config.feature_dim);
        let mut split = |name: &str| -> Result<Vec<CropSample>, SynthError> {
            let x = b.take(&format!("{name}.x"))?;
            let labels = b.take(&format!("{name}.labels"))?;
            let n = x.dims().first().copied().unwrap_or(0);
            if x.dims() != [n, seq, dim] || labels.dims() != [n, 3] {
                return Err(bad(&format!("{name} tensors have inconsistent shapes")));
            }
            let x = x.into_f64()?;
            let labels = labels.into_f64()?;
            Ok((0..n)
                .map(|i| CropSample {
                    sequence: (0..seq).map(|t| x[(i * seq + t) * dim..][..dim].to_vec()).collect(),
                    primary: labels[3 * i] as usize,
                    secondary: labels[3 * i + 1] as usize,
                    pedestrian: labels[3 * i + 2] != 0.0,
                })
                .collect())
        };
        let train = split("train")?;
        let test = split("test")?;
        let means = b.take("class_means")?;
        if means.dims() != [config.n_primary * config.n_secondary, dim] {
            return Err(bad("class_means has the wrong shape"));
        }
        let class_means = means.into_f64()?.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let background_mean = b.take("background_mean")?.into_f64()?;
        if background_mean.len() != dim {
            return Err(bad("background_mean has the wrong length"));
        }
        let labels_ok = train
            .iter()
            .chain(&test)
            .all(|s| s.primary < config.n_primary && s.secondary < config.n_secondary);
        if !labels_ok {
            return Err(bad("label outside the vocabulary"));
        }
        Ok(Self { config, train, test, class_means, background_mean })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        Ok(self.to_bundle()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Self::from_bundle(TensorBundle::load(path)?)
    }
}

fn sign_pattern(rng: &mut SplitMix64, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| if rng.next_u64() & 1 == 1 { scale } else { -scale }).collect()
}

/// Labeled crop feature sequences with class-specific mean patterns.
///
/// Each `(primary, secondary)` class has mean `P[primary] + S[secondary]`,
/// where `P` are random `+-1` patterns and `S` random `+-0.5` patterns;
/// background samples use an independent `+-1` pattern. Every element gets
/// independent uniform noise in `[-noise, noise]`.
pub fn crop_dataset(cfg: &CropDatasetConfig) -> CropDataset {
    let mut pat = SplitMix64::derive(cfg.seed, 2);
    let primary: Vec<Vec<f64>> = (0..cfg.n_primary).map(|_| sign_pattern(&mut pat, cfg.feature_dim, 1.0)).collect();
    let secondary: Vec<Vec<f64>> =
        (0..cfg.n_secondary).map(|_| sign_pattern(&mut pat, cfg.feature_dim, 0.5)).collect();
    let background_mean = sign_pattern(&mut pat, cfg.feature_dim, 1.0);
    let mut class_means = Vec::with_capacity(cfg.n_primary * cfg.n_secondary);
    for p in &primary {
        for s in &secondary {
            class_means.push(p.iter().zip(s).map(|(a, b)| a + b).collect::<Vec<f64>>());
        }
    }

    let mut noise = SplitMix64::derive(cfg.seed, 3);
    let mut draw = |mean: &[f64]| -> Vec<Vec<f64>> {
        (0..cfg.seq_len)
            .map(|_| mean.iter().map(|m| m + noise.uniform(-cfg.noise, cfg.noise)).collect())
            .collect()
    };
    let mut split = |per_class: usize| {
        let mut out = Vec::new();
        for p in 0..cfg.n_primary {
            for s in 0..cfg.n_secondary {
                for _ in 0..per_class {
                    let mean = &class_means[p * cfg.n_secondary + s];
                    out.push(CropSample { sequence: draw(mean), primary: p, secondary: s, pedestrian: true });
                }
            }
        }
        for _ in 0..per_class * cfg.negative_classes {
            out.push(CropSample { sequence: draw(&background_mean), primary: 0, secondary: 0, pedestrian: false });
        }
        out
    };
    let train = split(cfg.train_per_class);
    let test = split(cfg.test_per_class);
    CropDataset { config: cfg.clone(), train, test, class_means, background_mean }
}

/// Writes `annotations.txt`, one `frame_NNNNNN.aero` per scene and a
/// `manifest.txt` into `dir`.
pub fn write_scenes(dir: &Path, scenes: &[Scene], cfg: &SceneConfig) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    let records: Vec<AnnotationRecord> = scenes.iter().flat_map(Scene::annotations).collect();
    std::fs::write(dir.join("annotations.txt"), annotation::format(&records))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# synthetic scene manifest");
    let _ = writeln!(manifest, "seed {}", cfg.seed);
    let _ = writeln!(manifest, "width {}", cfg.width);
    let _ = writeln!(manifest, "height {}", cfg.height);
    let _ = writeln!(manifest, "reg_noise {}", cfg.reg_noise);
    let _ = writeln!(manifest, "seg_flip_prob {}", cfg.seg_flip_prob);
    let _ = writeln!(manifest, "annotations annotations.txt");
    for s in scenes {
        let name = frame_file_name(s.frame_id);
        s.maps.save(dir.join(&name))?;
        let _ = writeln!(manifest, "frame {} {}", s.frame_id, name);
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn frame_file_name(frame_id: u32) -> String {
    format!("frame_{frame_id:06}.aero")
}

/// Parses a frame id out of names like `frame_000042.aero`.
pub fn frame_id_from_name(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("frame_")?.parse().ok()
}

/// Frame entries `(frame_id, file name)` listed in a manifest.
pub fn read_manifest(text: &str) -> Vec<(u32, String)> {
    text.lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            if it.next()? != "frame" {
                return None;
            }
            let id = it.next()?.parse().ok()?;
            Some((id, it.next()?.to_string()))
        })
        .collect()
}

//! Deterministic multiscale stand-in for a learned dense feature extractor.
//!
//! For every scale factor `s` the frame is block-averaged by `s`, and three
//! channels are produced at the reduced resolution: the level itself, its
//! 3x3 local mean and its 3x3 local variance (neighborhoods truncated at the
//! border). Each channel is upsampled back by nearest neighbor.

use ndarray::{Array2, Array3};

use super::config::FeatureConfig;
use super::PipelineError;
use crate::codec::DenseMaps;

/// One input frame: a `(W, H)` intensity grid in `[0, 1]` and, optionally,
/// dense maps produced upstream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub intensity: Array2<f32>,
    pub maps: Option<DenseMaps>,
}

impl FrameRecord {
    pub fn new(frame_id: u32, intensity: Array2<f32>, maps: Option<DenseMaps>) -> Result<Self, PipelineError> {
        let f = Self { frame_id, intensity, maps };
        f.validate()?;
        Ok(f)
    }

    /// Frame whose intensity is rendered from its own maps.
    pub fn from_maps(frame_id: u32, maps: DenseMaps) -> Self {
        Self { frame_id, intensity: intensity_from_maps(&maps), maps: Some(maps) }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let ctx = |m: String| PipelineError::Frame { frame_id: self.frame_id, message: m };
        if self.intensity.is_empty() {
            return Err(ctx("empty intensity grid".into()));
        }
        if self.intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ctx("intensity outside [0, 1]".into()));
        }
        if let Some(m) = &self.maps {
            if (m.width(), m.height()) != self.intensity.dim() {
                return Err(ctx(format!(
                    "maps are {}x{} but intensity is {}x{}",
                    m.width(),
                    m.height(),
                    self.intensity.dim().0,
                    self.intensity.dim().1
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic grayscale image: dark background, bright boxes shaded along
/// the top-left regression channel.
pub fn intensity_from_maps(maps: &DenseMaps) -> Array2<f32> {
    let seg = maps.seg();
    let reg = maps.reg();
    Array2::from_shape_fn(seg.dim(), |(x, y)| {
        let s = seg[[x, y]].clamp(0.0, 1.0);
        (0.15 + 0.7 * s + 0.15 * s * reg[[0, x, y]].clamp(0.0, 1.0)).clamp(0.0, 1.0)
    })
}

fn block_average(img: &Array2<f32>, s: usize) -> Array2<f64> {
    let (w, h) = img.dim();
    let (lw, lh) = (w.div_ceil(s), h.div_ceil(s));
    let mut sum = Array2::<f64>::zeros((lw, lh));
    let mut count = Array2::<f64>::zeros((lw, lh));
    for ((x, y), &v) in img.indexed_iter() {
        sum[[x / s, y / s]] += f64::from(v);
        count[[x / s, y / s]] += 1.0;
    }
    sum / count
}

fn local_stats(level: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (w, h) = level.dim();
    let mut mean = Array2::zeros((w, h));
    let mut var = Array2::zeros((w, h));
    for x in 0..w {
        let xs = x.saturating_sub(1)..(x + 2).min(w);
        for y in 0..h {
            let ys = y.saturating_sub(1)..(y + 2).min(h);
            let n = (xs.len() * ys.len()) as f64;
            let mut s = 0.0;
            for i in xs.clone() {
                for j in ys.clone() {
                    s += level[[i, j]];
                }
            }
            let m = s / n;
            let mut q = 0.0;
            for i in xs.clone() {
                for j in ys.clone() {
                    q += (level[[i, j]] - m).powi(2);
                }
            }
            mean[[x, y]] = m;
            var[[x, y]] = q / n;
        }
    }
    (mean, var)
}

/// `(D, W, H)` features with `D = 3 * scales`, channel order per scale:
/// intensity, mean, variance.
pub fn feature_stub(intensity: &Array2<f32>, cfg: &FeatureConfig) -> Array3<f32> {
    let (w, h) = intensity.dim();
    let mut out = Array3::<f32>::zeros((cfg.depth(), w, h));
    for (k, &s) in cfg.scales.iter().enumerate() {
        let level = block_average(intensity, s);
        let (mean, var) = local_stats(&level);
        for (c, src) in [&level, &mean, &var].into_iter().enumerate() {
            let mut plane = out.index_axis_mut(ndarray::Axis(0), 3 * k + c);
            if s == 1 && c == 0 {
                plane.assign(intensity);
                continue;
            }
            for ((x, y), slot) in plane.indexed_iter_mut() {
                *slot = src[[x / s, y / s]] as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;
    use crate::geometry::BBox;
    use crate::rng::SplitMix64;

    // Per-output-pixel recomputation straight from the definition.
    fn reference(img: &Array2<f32>, scales: &[usize]) -> Vec<Vec<Vec<f64>>> {
        let (w, h) = img.dim();
        let level_at = |s: usize, bx: usize, by: usize| -> f64 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for x in bx * s..((bx + 1) * s).min(w) {
                for y in by * s..((by + 1) * s).min(h) {
                    sum += f64::from(img[[x, y]]);
                    n += 1.0;
                }
            }
            sum / n
        };
        let mut channels = Vec::new();
        for &s in scales {
            let (lw, lh) = (w.div_ceil(s) as i64, h.div_ceil(s) as i64);
            let mut lvl = vec![vec![0.0; h]; w];
            let mut mean = vec![vec![0.0; h]; w];
            let mut var = vec![vec![0.0; h]; w];
            for x in 0..w {
                for y in 0..h {
                    let (bx, by) = ((x / s) as i64, (y / s) as i64);
                    let mut vals = Vec::new();
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            let (i, j) = (bx + dx, by + dy);
                            if i >= 0 && j >= 0 && i < lw && j < lh {
                                vals.push(level_at(s, i as usize, j as usize));
                            }
                        }
                    }
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    lvl[x][y] = level_at(s, bx as usize, by as usize);
                    mean[x][y] = m;
                    var[x][y] = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
                }
            }
            channels.extend([lvl, mean, var]);
        }
        channels
    }

    #[test]
    fn constant_frame() {
        let img = Array2::from_elem((13, 9), 0.375f32);
        let f = feature_stub(&img, &FeatureConfig { scales: vec![1, 2, 4] });
        assert_eq!(f.dim(), (9, 13, 9));
        for c in 0..9 {
            let expect = if c % 3 == 2 { 0.0 } else { 0.375 };
            assert!(f.index_axis(ndarray::Axis(0), c).iter().all(|&v| v == expect), "channel {c}");
        }
    }

    #[test]
    fn identity_level() {
        let mut rng = SplitMix64::new(5);
        let img = Array2::from_shape_fn((20, 11), |_| rng.next_f64() as f32);
        let f = feature_stub(&img, &FeatureConfig { scales: vec![1, 2, 4] });
        assert_eq!(f.index_axis(ndarray::Axis(0), 0), img.view());
    }

    #[test]
    fn matches_reference() {
        let mut rng = SplitMix64::new(6);
        let scales = vec![1, 2, 4, 3];
        let img = Array2::from_shape_fn((23, 17), |_| rng.next_f64() as f32);
        let f = feature_stub(&img, &FeatureConfig { scales: scales.clone() });
        let r = reference(&img, &scales);
        for (c, plane) in r.iter().enumerate() {
            for x in 0..23 {
                for y in 0..17 {
                    assert!((f64::from(f[[c, x, y]]) - plane[x][y]).abs() < 1e-6, "c={c} x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn frame_validation() {
        let maps = encode(&[BBox::new(2, 2, 10, 12).unwrap()], 20, 20).unwrap();
        let f = FrameRecord::from_maps(3, maps.clone());
        assert!(f.validate().is_ok());
        assert!(f.intensity.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(FrameRecord::new(0, Array2::from_elem((20, 20), 1.5), None).is_err());
        assert!(FrameRecord::new(0, Array2::zeros((19, 20)), Some(maps)).is_err());
    }
}

//! Expanded-window Gaussian attention and fixed-size feature crops.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::geometry::{BBox, PixelCoord};

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("expand_ratio must be >= 1, got {0}")]
    ExpandRatio(f64),
    #[error("sigma_scale must be > 0, got {0}")]
    SigmaScale(f64),
    #[error("out_size must be >= 4, got {0}")]
    OutSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub expand_ratio: f64,
    pub sigma_scale: f64,
    pub out_size: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { expand_ratio: 1.5, sigma_scale: 0.5, out_size: 16 }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if !(self.expand_ratio >= 1.0) {
            return Err(AttentionError::ExpandRatio(self.expand_ratio));
        }
        if !(self.sigma_scale > 0.0) {
            return Err(AttentionError::SigmaScale(self.sigma_scale));
        }
        if self.out_size < 4 {
            return Err(AttentionError::OutSize(self.out_size));
        }
        Ok(())
    }
}

/// Square `size x size` region whose top-left pixel is `origin`; may extend
/// past the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub origin: PixelCoord,
    pub size: usize,
}

impl Window {
    pub fn pixel(&self, u: usize, v: usize) -> PixelCoord {
        PixelCoord::new(self.origin.x + u as i32, self.origin.y + v as i32)
    }
}

/// `M = ceil(ratio * max(w, h))`, centered on the box center with the
/// origin at `floor(c - M/2 + 0.5)` per axis.
pub fn expanded_window(b: &BBox, cfg: &AttentionConfig) -> Window {
    let side = f64::from(b.width().max(b.height()));
    let m = (cfg.expand_ratio * side).ceil().max(1.0) as usize;
    let (cx, cy) = b.center();
    let half = m as f64 / 2.0;
    let origin = PixelCoord::new((cx - half + 0.5).floor() as i32, (cy - half + 0.5).floor() as i32);
    Window { origin, size: m }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// Indexed `[u, v]` (window column, window row).
    pub values: Array2<f64>,
    pub window: Window,
    pub source: BBox,
}

/// Unnormalized Gaussian weight of pixel `p` relative to box `b`.
pub fn gaussian_weight(b: &BBox, p: PixelCoord, sigma_scale: f64) -> f64 {
    let (cx, cy) = b.center();
    let sx = sigma_scale * f64::from(b.width());
    let sy = sigma_scale * f64::from(b.height());
    let dx = f64::from(p.x) - cx;
    let dy = f64::from(p.y) - cy;
    let q = dx * dx / (sx * sx) + dy * dy / (sy * sy);
    (-0.5 * q).exp().max(f64::MIN_POSITIVE)
}

/// 1 on pixels of `b`, the Gaussian weight elsewhere in the window.
pub fn attention_map(b: &BBox, cfg: &AttentionConfig) -> AttentionMap {
    let window = expanded_window(b, cfg);
    let values = Array2::from_shape_fn((window.size, window.size), |(u, v)| {
        let p = window.pixel(u, v);
        if b.contains(p) {
            1.0
        } else {
            gaussian_weight(b, p, cfg.sigma_scale)
        }
    });
    AttentionMap { values, window, source: *b }
}

impl AttentionMap {
    /// Binary PGM (P5) rendering scaled to 0..=255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = self.values.dim();
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for v in 0..h {
            for u in 0..w {
                out.push((self.values[[u, v]] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_pgm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropFeature {
    /// `(D + 1, out, out)`; the last channel is attention.
    pub tensor: Array3<f64>,
    pub source_box: BBox,
    pub frame_index: u32,
}

impl CropFeature {
    pub fn depth(&self) -> usize {
        self.tensor.dim().0 - 1
    }

    /// Channel-major flattening used as the recurrent input.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensor.iter().copied().collect()
    }
}

/// Half-pixel-center source coordinate and blend weight for resizing `m`
/// samples to `n`.
fn sample_taps(m: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let scale = m as f64 / n as f64;
    (0..n)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (m - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resize_into(src: &Array2<f64>, n: usize, mut put: impl FnMut(usize, usize, f64)) {
    let m = src.dim().0;
    let taps = sample_taps(m, n);
    for (v, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (u, &(x0, x1, fx)) in taps.iter().enumerate() {
            let top = src[[x0, y0]] * (1.0 - fx) + src[[x1, y0]] * fx;
            let bottom = src[[x0, y1]] * (1.0 - fx) + src[[x1, y1]] * fx;
            put(u, v, top * (1.0 - fy) + bottom * fy);
        }
    }
}

/// Bilinear square resize with half-pixel centers; edge samples clamp to
/// the window.
pub fn resize_square(src: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, n));
    resize_into(src, n, |u, v, x| out[[u, v]] = x);
    out
}

/// Extracts the expanded window of every feature channel (zero outside the
/// frame), resizes it and its attention map to `out_size`, and appends
/// attention as the last channel.
pub fn crop_and_resize(features: &Array3<f32>, b: &BBox, frame_index: u32, cfg: &AttentionConfig) -> CropFeature {
    let (depth, fw, fh) = features.dim();
    let att = attention_map(b, cfg);
    let win = att.window;
    let n = cfg.out_size;
    let mut tensor = Array3::zeros((depth + 1, n, n));
    let mut patch = Array2::<f64>::zeros((win.size, win.size));
    for c in 0..depth {
        for ((u, v), slot) in patch.indexed_iter_mut() {
            let p = win.pixel(u, v);
            let inside = p.x >= 0 && p.y >= 0 && (p.x as usize) < fw && (p.y as usize) < fh;
            *slot = if inside { f64::from(features[[c, p.x as usize, p.y as usize]]) } else { 0.0 };
        }
        resize_into(&patch, n, |u, v, x| tensor[[c, u, v]] = x);
    }
    resize_into(&att.values, n, |u, v, x| tensor[[depth, u, v]] = x);
    CropFeature { tensor, source_box: *b, frame_index }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn window_sizes() {
        let cfg = AttentionConfig::default();
        assert_eq!(expanded_window(&bb(0, 0, 10, 10), &cfg).size, 15);
        let unit = AttentionConfig { expand_ratio: 1.0, ..cfg };
        let w = expanded_window(&bb(0, 0, 10, 6), &unit);
        assert_eq!(w.size, 10);
        assert_eq!(w.origin, PixelCoord::new(0, -2));
        assert_eq!(expanded_window(&bb(5, 5, 12, 8), &cfg).size, 11);
    }

    #[test]
    fn gaussian_example_and_symmetry() {
        // width 4, sigma_scale 0.5 -> sigma 2 -> Sigma = diag(4, 4)
        let b = bb(10, 10, 14, 14);
        let v = gaussian_weight(&b, PixelCoord::new(14, 12), 0.5);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
        let left = gaussian_weight(&b, PixelCoord::new(4, 12), 0.5);
        let right = gaussian_weight(&b, PixelCoord::new(20, 12), 0.5);
        assert_eq!(left, right);
    }

    #[test]
    fn map_is_one_inside_and_below_one_outside() {
        let b = bb(20, 30, 31, 38);
        let a = attention_map(&b, &AttentionConfig::default());
        for ((u, v), &x) in a.values.indexed_iter() {
            let p = a.window.pixel(u, v);
            if b.contains(p) {
                assert_eq!(x, 1.0);
            } else {
                assert!(x > 0.0 && x < 1.0);
            }
        }
    }

    #[test]
    fn constant_features_stay_constant() {
        let f = Array3::<f32>::ones((3, 60, 40));
        let b = bb(20, 10, 30, 22);
        let crop = crop_and_resize(&f, &b, 7, &AttentionConfig::default());
        assert_eq!(crop.tensor.dim(), (4, 16, 16));
        assert_eq!(crop.depth(), 3);
        for c in 0..3 {
            assert!(crop.tensor.index_axis(ndarray::Axis(0), c).iter().all(|&x| (x - 1.0).abs() < 1e-12));
        }
        let att = attention_map(&b, &AttentionConfig::default());
        let expected = resize_square(&att.values, 16);
        assert_eq!(crop.tensor.index_axis(ndarray::Axis(0), 3), expected);
    }

    #[test]
    fn identity_resize() {
        let f = Array3::from_shape_fn((2, 50, 50), |(c, x, y)| (c * 1000 + x * 50 + y) as f32);
        let b = bb(20, 20, 30, 30);
        let cfg = AttentionConfig { expand_ratio: 1.0, out_size: 10, ..Default::default() };
        let win = expanded_window(&b, &cfg);
        let crop = crop_and_resize(&f, &b, 0, &cfg);
        for c in 0..2 {
            for u in 0..10 {
                for v in 0..10 {
                    let p = win.pixel(u, v);
                    assert_eq!(crop.tensor[[c, u, v]], f64::from(f[[c, p.x as usize, p.y as usize]]));
                }
            }
        }
    }

    #[test]
    fn outside_frame_is_zero_filled() {
        let f = Array3::from_shape_fn((1, 30, 30), |(_, x, y)| 1.0 + (x + y) as f32);
        // window extends 2 px past the left edge
        let b = bb(0, 10, 8, 18);
        let cfg = AttentionConfig { expand_ratio: 1.5, out_size: 12, ..Default::default() };
        let win = expanded_window(&b, &cfg);
        assert_eq!(win.origin.x, -2);
        let mut padded = Array2::<f64>::zeros((win.size, win.size));
        for u in 0..win.size {
            for v in 0..win.size {
                let p = win.pixel(u, v);
                if p.x >= 0 && p.y >= 0 && p.x < 30 && p.y < 30 {
                    padded[[u, v]] = f64::from(f[[0, p.x as usize, p.y as usize]]);
                }
            }
        }
        let crop = crop_and_resize(&f, &b, 0, &cfg);
        let reference = resize_square(&padded, 12);
        assert_eq!(crop.tensor.index_axis(ndarray::Axis(0), 0), reference);
        assert!(crop.tensor[[0, 0, 5]] < crop.tensor[[0, 4, 5]]);
    }

    #[test]
    fn pgm_header() {
        let a = attention_map(&bb(0, 0, 4, 4), &AttentionConfig::default());
        let bytes = a.to_pgm();
        assert!(bytes.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(bytes.len(), 11 + 36);
    }

    proptest! {
        #[test]
        fn radial_monotonicity(x0 in 0i32..50, y0 in 0i32..50, w in 2i32..30, h in 2i32..30) {
            let b = bb(x0, y0, x0 + w, y0 + h);
            let a = attention_map(&b, &AttentionConfig::default());
            let (cx, cy) = b.center();
            let (n, _) = a.values.dim();
            for v in 0..n {
                for u in 1..n {
                    let p = a.window.pixel(u, v);
                    let q = a.window.pixel(u - 1, v);
                    // moving right, away from the center
                    if f64::from(q.x) >= cx {
                        prop_assert!(a.values[[u, v]] <= a.values[[u - 1, v]]);
                    }
                    if f64::from(p.x) <= cx {
                        prop_assert!(a.values[[u - 1, v]] <= a.values[[u, v]]);
                    }
                }
            }
            for u in 0..n {
                for v in 1..n {
                    let q = a.window.pixel(u, v - 1);
                    if f64::from(q.y) >= cy {
                        prop_assert!(a.values[[u, v]] <= a.values[[u, v - 1]]);
                    }
                }
            }
        }
    }
}

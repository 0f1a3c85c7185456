//! Box recovery from segmentation/regression maps.
//!
//! The decoder masks the regression map with the segmentation map, drops
//! small connected patches, takes channel-wise local maxima as corner
//! candidates (channel 0 for top-left corners, channel 1 for bottom-right),
//! pairs every top-left with every bottom-right candidate, and keeps the
//! pairs whose enclosed pixels are at least a `delta` fraction segmented.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};
use thiserror::Error;

use crate::codec::DenseMaps;
use crate::geometry::{BBox, PixelCoord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxGenError {
    #[error("delta must lie in (0, 1], got {0}")]
    Delta(f64),
    #[error("max filter window must be odd and at least 3, got {0}")]
    Window(usize),
    #[error("minimum patch area must be at least 1")]
    PatchArea,
    #[error("peak floor must lie in [0, 1), got {0}")]
    PeakFloor(f32),
    #[error("maximum box diagonal must be positive, got {0}")]
    MaxDiag(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeneratorConfig {
    /// Minimum segmented fraction of a candidate box.
    pub delta: f64,
    pub max_filter_window: usize,
    pub min_patch_area: usize,
    pub peak_floor: f32,
    /// Cap on the candidate diagonal in pixels; `None` means half the grid
    /// diagonal.
    pub max_box_diag: Option<f64>,
    pub plateau_tie: PlateauTie,
    /// Also require both corners of a candidate to lie in the same
    /// 8-connected component of the denoised support.
    pub same_component: bool,
}

/// Which member of an equal-valued plateau inside one window survives as
/// the peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlateauTie {
    /// The raster-earliest pixel, in both channels.
    RasterFirst,
    /// The pixel nearest the encoded corner: raster-earliest for the
    /// top-left channel, raster-latest for the bottom-right channel.
    #[default]
    TowardCorner,
}

impl Default for BoxGeneratorConfig {
    fn default() -> Self {
        Self {
            delta: 0.9,
            max_filter_window: 15,
            min_patch_area: 9,
            peak_floor: 0.5,
            max_box_diag: None,
            plateau_tie: PlateauTie::default(),
            same_component: true,
        }
    }
}

impl BoxGeneratorConfig {
    pub fn validate(&self) -> Result<(), BoxGenError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(BoxGenError::Delta(self.delta));
        }
        if self.max_filter_window < 3 || self.max_filter_window.is_multiple_of(2) {
            return Err(BoxGenError::Window(self.max_filter_window));
        }
        if self.min_patch_area < 1 {
            return Err(BoxGenError::PatchArea);
        }
        if !(0.0..1.0).contains(&self.peak_floor) {
            return Err(BoxGenError::PeakFloor(self.peak_floor));
        }
        if let Some(d) = self.max_box_diag {
            if !(d > 0.0) {
                return Err(BoxGenError::MaxDiag(d));
            }
        }
        Ok(())
    }

    pub fn effective_max_diag(&self, width: usize, height: usize) -> f64 {
        self.max_box_diag
            .unwrap_or_else(|| ((width * width + height * height) as f64).sqrt() / 2.0)
    }
}

/// Corner candidates: `top_left` from regression channel 0 and
/// `bottom_right` from channel 1, each in raster order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CornerCandidates {
    pub top_left: Vec<PixelCoord>,
    pub bottom_right: Vec<PixelCoord>,
}

/// Regression map multiplied elementwise by the segmentation map.
pub fn mask_maps(maps: &DenseMaps) -> Array3<f32> {
    let mut masked = maps.reg().clone();
    let seg = maps.seg();
    for c in 0..2 {
        let mut ch = masked.index_axis_mut(ndarray::Axis(0), c);
        ch.zip_mut_with(seg, |r, &s| *r *= s);
    }
    masked
}

/// Labels 8-connected components of `support`; returns labels (0 = none)
/// and per-label pixel counts (index 0 unused).
pub fn label_components(support: &Array2<bool>) -> (Array2<u32>, Vec<usize>) {
    let (w, h) = support.dim();
    let mut labels = Array2::<u32>::zeros((w, h));
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !support[[x, y]] || labels[[x, y]] != 0 {
                continue;
            }
            let label = sizes.len() as u32;
            let mut size = 0usize;
            labels[[x, y]] = label;
            queue.push_back((x, y));
            while let Some((cx, cy)) = queue.pop_front() {
                size += 1;
                let xs = cx.saturating_sub(1)..=(cx + 1).min(w - 1);
                for nx in xs {
                    for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                        if support[[nx, ny]] && labels[[nx, ny]] == 0 {
                            labels[[nx, ny]] = label;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

fn support_of(masked: &Array3<f32>) -> Array2<bool> {
    let (_, w, h) = masked.dim();
    Array2::from_shape_fn((w, h), |(x, y)| masked[[0, x, y]] > 0.0 || masked[[1, x, y]] > 0.0)
}

/// Zeroes both channels on every 8-connected patch of the support smaller
/// than `min_patch_area` pixels.
pub fn remove_noise(masked: &Array3<f32>, min_patch_area: usize) -> Array3<f32> {
    denoise_labeled(masked, min_patch_area).0
}

/// Denoised grid plus the component labels of its support (removed
/// patches relabeled 0).
fn denoise_labeled(masked: &Array3<f32>, min_patch_area: usize) -> (Array3<f32>, Array2<u32>) {
    let support = support_of(masked);
    let (mut labels, sizes) = label_components(&support);
    let mut out = masked.clone();
    for ((x, y), l) in labels.indexed_iter_mut() {
        if *l != 0 && sizes[*l as usize] < min_patch_area {
            out[[0, x, y]] = 0.0;
            out[[1, x, y]] = 0.0;
            *l = 0;
        }
    }
    (out, labels)
}

fn channel_peaks(masked: &Array3<f32>, channel: usize, cfg: &BoxGeneratorConfig) -> Vec<PixelCoord> {
    let (_, w, h) = masked.dim();
    let r = cfg.max_filter_window / 2;
    let latest_wins = channel == 1 && cfg.plateau_tie == PlateauTie::TowardCorner;
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = masked[[channel, x, y]];
            if v <= cfg.peak_floor {
                continue;
            }
            let mut is_peak = true;
            'window: for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    let q = masked[[channel, nx, ny]];
                    let beats_on_tie = if latest_wins { (ny, nx) > (y, x) } else { (ny, nx) < (y, x) };
                    if q > v || (beats_on_tie && q == v) {
                        is_peak = false;
                        break 'window;
                    }
                }
            }
            if is_peak {
                peaks.push(PixelCoord::new(x as i32, y as i32));
            }
        }
    }
    peaks
}

/// Channel-wise local maxima under the max filter window.
///
/// A pixel is kept when it attains the window maximum, exceeds the peak
/// floor, and no pixel in its window that is preferred by the plateau rule
/// has the same value.
pub fn find_peaks(masked: &Array3<f32>, cfg: &BoxGeneratorConfig) -> CornerCandidates {
    CornerCandidates {
        top_left: channel_peaks(masked, 0, cfg),
        bottom_right: channel_peaks(masked, 1, cfg),
    }
}

/// Summed-area table over the segmentation mask, padded by one row/column.
pub struct SegIntegral {
    sums: Array2<u32>,
}

impl SegIntegral {
    pub fn new(seg: &Array2<f32>) -> Self {
        let (w, h) = seg.dim();
        let mut sums = Array2::<u32>::zeros((w + 1, h + 1));
        for x in 0..w {
            for y in 0..h {
                let v = u32::from(seg[[x, y]] > 0.5);
                sums[[x + 1, y + 1]] = v + sums[[x, y + 1]] + sums[[x + 1, y]] - sums[[x, y]];
            }
        }
        Self { sums }
    }

    /// Segmented pixels inside `b` (inclusive bounds); `b` must fit the grid.
    pub fn count(&self, b: &BBox) -> u64 {
        let (x0, y0, x1, y1) = (b.x0() as usize, b.y0() as usize, b.x1() as usize + 1, b.y1() as usize + 1);
        u64::from(self.sums[[x1, y1]]) + u64::from(self.sums[[x0, y0]])
            - u64::from(self.sums[[x0, y1]])
            - u64::from(self.sums[[x1, y0]])
    }
}

/// Whether `segmented / enclosed >= delta`.
pub fn passes_delta(segmented: u64, enclosed: u64, delta: f64) -> bool {
    segmented as f64 >= delta * enclosed as f64
}

/// Pairs corner candidates into boxes and applies the segmented-fraction
/// filter. Output is deduplicated and sorted by `(y0, x0, y1, x1)`.
pub fn generate_boxes(candidates: &CornerCandidates, seg: &Array2<f32>, cfg: &BoxGeneratorConfig) -> Vec<BBox> {
    pair_and_filter(candidates, seg, None, cfg)
}

/// [`generate_boxes`] restricted to corner pairs sharing a component label.
pub fn generate_boxes_linked(
    candidates: &CornerCandidates,
    seg: &Array2<f32>,
    labels: &Array2<u32>,
    cfg: &BoxGeneratorConfig,
) -> Vec<BBox> {
    pair_and_filter(candidates, seg, Some(labels), cfg)
}

fn pair_and_filter(
    candidates: &CornerCandidates,
    seg: &Array2<f32>,
    labels: Option<&Array2<u32>>,
    cfg: &BoxGeneratorConfig,
) -> Vec<BBox> {
    let (w, h) = seg.dim();
    let max_diag = cfg.effective_max_diag(w, h);
    let integral = SegIntegral::new(seg);
    let label_at = |p: &PixelCoord| labels.map(|l| l[[p.x as usize, p.y as usize]]);
    let mut out = Vec::new();
    for a in &candidates.top_left {
        for b in &candidates.bottom_right {
            if b.x <= a.x || b.y <= a.y {
                continue;
            }
            if label_at(a) != label_at(b) {
                continue;
            }
            let (dx, dy) = (f64::from(b.x - a.x), f64::from(b.y - a.y));
            if (dx * dx + dy * dy).sqrt() > max_diag {
                continue;
            }
            let Ok(bbox) = BBox::from_corners(*a, *b) else {
                continue;
            };
            if !bbox.fits_grid(w, h) {
                continue;
            }
            if passes_delta(integral.count(&bbox), bbox.pixel_count(), cfg.delta) {
                out.push(bbox);
            }
        }
    }
    out.sort_by_key(BBox::canonical_key);
    out.dedup();
    out
}

/// Full decode: mask, denoise, find corner peaks, pair and filter.
pub fn box_generator(maps: &DenseMaps, cfg: &BoxGeneratorConfig) -> Result<Vec<BBox>, BoxGenError> {
    cfg.validate()?;
    let masked = mask_maps(maps);
    let (clean, labels) = denoise_labeled(&masked, cfg.min_patch_area);
    let candidates = find_peaks(&clean, cfg);
    if cfg.same_component {
        Ok(generate_boxes_linked(&candidates, maps.seg(), &labels, cfg))
    } else {
        Ok(generate_boxes(&candidates, maps.seg(), cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode;

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn brute_count(seg: &Array2<f32>, b: &BBox) -> u64 {
        let mut n = 0;
        for x in b.x0()..=b.x1() {
            for y in b.y0()..=b.y1() {
                if seg[[x as usize, y as usize]] == 1.0 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn config_validation() {
        assert!(BoxGeneratorConfig::default().validate().is_ok());
        let bad = |f: fn(&mut BoxGeneratorConfig)| {
            let mut c = BoxGeneratorConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.delta = 0.0));
        assert!(bad(|c| c.delta = 1.5));
        assert!(bad(|c| c.max_filter_window = 4));
        assert!(bad(|c| c.max_filter_window = 1));
        assert!(bad(|c| c.min_patch_area = 0));
        assert!(bad(|c| c.peak_floor = 1.0));
        assert!(bad(|c| c.max_box_diag = Some(0.0)));
    }

    #[test]
    fn mask_examples() {
        let mut maps = encode(&[bb(2, 2, 12, 12)], 20, 20).unwrap();
        let masked = mask_maps(&maps);
        assert_eq!(&masked, maps.reg());
        maps.seg_mut().fill(0.0);
        assert!(mask_maps(&maps).iter().all(|&v| v == 0.0));
        let mut maps = encode(&[bb(2, 2, 12, 12)], 20, 20).unwrap();
        maps.reg_mut().fill(0.3);
        let masked = mask_maps(&maps);
        for ((c, x, y), &v) in masked.indexed_iter() {
            let inside = (2..=12).contains(&x) && (2..=12).contains(&y);
            assert_eq!(v, if inside { 0.3 } else { 0.0 }, "{c} {x} {y}");
        }
        maps.seg_mut().fill(1.0);
        assert_eq!(&mask_maps(&maps), maps.reg());
    }

    #[test]
    fn noise_removal_examples() {
        let mut g = Array3::<f32>::zeros((2, 40, 40));
        g[[0, 1, 1]] = 0.7;
        let out = remove_noise(&g, 9);
        assert!(out.iter().all(|&v| v == 0.0));

        let maps = encode(&[bb(5, 5, 24, 24)], 40, 40).unwrap();
        let masked = mask_maps(&maps);
        assert_eq!(remove_noise(&masked, 9), masked);

        // 2x2 speck (area 4) and 4x4 speck (area 16)
        let mut g = Array3::<f32>::zeros((2, 40, 40));
        for x in 1..3 {
            for y in 1..3 {
                g[[1, x, y]] = 0.2;
            }
        }
        for x in 20..24 {
            for y in 20..24 {
                g[[0, x, y]] = 0.4;
            }
        }
        let out = remove_noise(&g, 9);
        let support: Vec<(usize, usize)> = (0..40)
            .flat_map(|x| (0..40).map(move |y| (x, y)))
            .filter(|&(x, y)| out[[0, x, y]] > 0.0 || out[[1, x, y]] > 0.0)
            .collect();
        assert_eq!(support.len(), 16);
        assert!(support.iter().all(|&(x, y)| (20..24).contains(&x) && (20..24).contains(&y)));
    }

    #[test]
    fn diagonal_neighbours_join_components() {
        let mut s = Array2::from_elem((5, 5), false);
        s[[0, 0]] = true;
        s[[1, 1]] = true;
        s[[2, 2]] = true;
        s[[4, 0]] = true;
        let (labels, sizes) = label_components(&s);
        assert_eq!(sizes, vec![0, 3, 1]);
        assert_eq!(labels[[2, 2]], labels[[0, 0]]);
        assert_ne!(labels[[4, 0]], labels[[0, 0]]);
    }

    #[test]
    fn peaks_of_clean_encodings() {
        let cfg = BoxGeneratorConfig::default();
        let b = bb(10, 12, 30, 25);
        let maps = encode(&[b], 64, 48).unwrap();
        let c = find_peaks(&mask_maps(&maps), &cfg);
        assert_eq!(c.top_left, vec![b.top_left()]);
        assert_eq!(c.bottom_right, vec![b.bottom_right()]);

        assert_eq!(find_peaks(&Array3::zeros((2, 10, 10)), &cfg), CornerCandidates::default());

        let a = bb(3, 3, 14, 20);
        let b = bb(30, 10, 50, 40);
        let maps = encode(&[a, b], 64, 48).unwrap();
        let c = find_peaks(&mask_maps(&maps), &cfg);
        assert_eq!(c.top_left, vec![a.top_left(), b.top_left()]);
        assert_eq!(c.bottom_right, vec![a.bottom_right(), b.bottom_right()]);
    }

    #[test]
    fn plateau_keeps_raster_first() {
        let cfg = BoxGeneratorConfig::default();
        let mut g = Array3::<f32>::zeros((2, 10, 10));
        g[[0, 4, 4]] = 0.8;
        g[[0, 5, 4]] = 0.8;
        g[[0, 4, 5]] = 0.8;
        let c = find_peaks(&g, &cfg);
        assert_eq!(c.top_left, vec![PixelCoord::new(4, 4)]);
        // below the floor nothing is reported
        g.fill(0.4);
        assert!(find_peaks(&g, &cfg).top_left.is_empty());
    }

    #[test]
    fn bottom_right_plateau_keeps_raster_last() {
        let mut g = Array3::<f32>::zeros((2, 10, 10));
        for (x, y) in [(4, 4), (5, 4), (3, 5)] {
            g[[1, x, y]] = 1.0;
        }
        let toward = BoxGeneratorConfig::default();
        assert_eq!(find_peaks(&g, &toward).bottom_right, vec![PixelCoord::new(3, 5)]);
        let first = BoxGeneratorConfig { plateau_tie: PlateauTie::RasterFirst, ..Default::default() };
        assert_eq!(find_peaks(&g, &first).bottom_right, vec![PixelCoord::new(4, 4)]);
    }

    #[test]
    fn stacked_boxes_need_component_check() {
        // the 3-row gap is under 10% of the union, so delta alone accepts it
        let a = bb(10, 10, 20, 24);
        let b = bb(10, 28, 20, 42);
        let maps = encode(&[a, b], 80, 80).unwrap();
        let cands = CornerCandidates {
            top_left: vec![a.top_left(), b.top_left()],
            bottom_right: vec![a.bottom_right(), b.bottom_right()],
        };
        let union = bb(10, 10, 20, 42);
        let frac = brute_count(maps.seg(), &union) as f64 / union.pixel_count() as f64;
        assert!(frac >= 0.9);
        let cfg = BoxGeneratorConfig::default();
        assert_eq!(generate_boxes(&cands, maps.seg(), &cfg), vec![a, union, b]);
        assert_eq!(box_generator(&maps, &cfg).unwrap(), vec![a, b]);
        let loose = BoxGeneratorConfig { same_component: false, ..Default::default() };
        assert_eq!(box_generator(&maps, &loose).unwrap(), vec![a, union, b]);
    }

    #[test]
    fn generate_examples() {
        let cfg = BoxGeneratorConfig::default();
        let b = bb(4, 4, 20, 16);
        let maps = encode(&[b], 40, 30).unwrap();
        let cands = CornerCandidates { top_left: vec![b.top_left()], bottom_right: vec![b.bottom_right()] };
        assert_eq!(generate_boxes(&cands, maps.seg(), &cfg), vec![b]);

        // p2 up-left of p1
        let cands = CornerCandidates { top_left: vec![b.bottom_right()], bottom_right: vec![b.top_left()] };
        assert!(generate_boxes(&cands, maps.seg(), &cfg).is_empty());
    }

    #[test]
    fn cross_combinations_fail_delta() {
        let cfg = BoxGeneratorConfig::default();
        let a = bb(2, 2, 12, 12);
        let b = bb(20, 20, 34, 30);
        let maps = encode(&[a, b], 40, 40).unwrap();
        let cands = CornerCandidates {
            top_left: vec![a.top_left(), b.top_left()],
            bottom_right: vec![a.bottom_right(), b.bottom_right()],
        };
        // brute-force enumeration of the 4 raw combinations
        let mut kept = Vec::new();
        let mut raw = 0;
        for p in &cands.top_left {
            for q in &cands.bottom_right {
                if q.x > p.x && q.y > p.y {
                    raw += 1;
                    let cand = BBox::from_corners(*p, *q).unwrap();
                    let frac = brute_count(maps.seg(), &cand) as f64 / cand.pixel_count() as f64;
                    if frac >= 0.9 {
                        kept.push(cand);
                    }
                }
            }
        }
        assert_eq!(raw, 3); // b.top_left with a.bottom_right is up-left
        assert_eq!(kept, vec![a, b]);
        assert_eq!(generate_boxes(&cands, maps.seg(), &cfg), vec![a, b]);
    }

    #[test]
    fn integral_matches_brute_force() {
        let maps = encode(&[bb(2, 2, 12, 12), bb(15, 3, 25, 19)], 30, 22).unwrap();
        let integral = SegIntegral::new(maps.seg());
        for (x0, y0, x1, y1) in [(0, 0, 29, 21), (5, 5, 20, 10), (10, 0, 16, 21), (2, 2, 12, 12)] {
            let b = bb(x0, y0, x1, y1);
            assert_eq!(integral.count(&b), brute_count(maps.seg(), &b));
        }
    }

    #[test]
    fn full_decoder() {
        let cfg = BoxGeneratorConfig::default();
        assert!(box_generator(&DenseMaps::zeros(32, 32), &cfg).unwrap().is_empty());
        let boxes = vec![bb(40, 30, 60, 52), bb(3, 5, 13, 17), bb(100, 4, 140, 30)];
        let maps = encode(&boxes, 160, 90).unwrap();
        let mut expected = boxes.clone();
        expected.sort_by_key(BBox::canonical_key);
        assert_eq!(box_generator(&maps, &cfg).unwrap(), expected);
    }
}

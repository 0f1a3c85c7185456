//! Box outlines drawn over a grayscale frame, written as binary PPM.

use ndarray::Array2;

use crate::geometry::BBox;

pub const DETECTION_COLOR: [u8; 3] = [0, 230, 0];
pub const TRUTH_COLOR: [u8; 3] = [230, 0, 0];

/// `P6` image of a `(W, H)` intensity grid with one-pixel outlines.
/// Outlines are clipped to the frame.
pub fn render_ppm(intensity: &Array2<f32>, boxes: &[(BBox, [u8; 3])]) -> Vec<u8> {
    let (w, h) = intensity.dim();
    let mut rgb: Vec<[u8; 3]> = vec![[0; 3]; w * h];
    for ((x, y), &v) in intensity.indexed_iter() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb[y * w + x] = [g; 3];
    }
    let mut put = |x: i32, y: i32, c: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            rgb[y as usize * w + x as usize] = c;
        }
    };
    for (b, color) in boxes {
        for x in b.x0()..b.x1() {
            put(x, b.y0(), *color);
            put(x, b.y1() - 1, *color);
        }
        for y in b.y0()..b.y1() {
            put(b.x0(), y, *color);
            put(b.x1() - 1, y, *color);
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb.into_iter().flatten());
    out
}

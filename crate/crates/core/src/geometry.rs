//! Box arithmetic shared by the detection, attention, tracking and
//! evaluation stages.
//!
//! Boxes carry integer pixel bounds at map resolution. Membership tests use
//! inclusive bounds (`x0 <= x <= x1`), while areas use the continuous
//! convention `(x1 - x0) * (y1 - y0)` so that IoU values line up with common
//! detection tooling.

use std::fmt;

use thiserror::Error;

/// Smallest admissible box side, in pixels.
pub const MIN_BOX_SIDE: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("degenerate box ({x0},{y0},{x1},{y1}): sides must be at least {MIN_BOX_SIDE} px")]
    Degenerate { x0: i32, y0: i32, x1: i32, y1: i32 },
}

/// A pixel location `(i_x, i_y)` on the map grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PixelCoord {
    pub x: i32,
    pub y: i32,
}

impl PixelCoord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    /// Row-major ordering key `(y, x)` used for tie-breaking.
    pub fn raster_key(self) -> (i32, i32) {
        (self.y, self.x)
    }
}

/// Axis-aligned box with inclusive integer bounds.
///
/// Construction rejects boxes whose width or height is below
/// [`MIN_BOX_SIDE`], so every `BBox` in circulation has a well-defined
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    y0: i32,
    x0: i32,
    y1: i32,
    x1: i32,
}

impl BBox {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Result<Self, GeometryError> {
        if x1 - x0 < MIN_BOX_SIDE || y1 - y0 < MIN_BOX_SIDE {
            return Err(GeometryError::Degenerate { x0, y0, x1, y1 });
        }
        Ok(Self { y0, x0, y1, x1 })
    }

    /// Builds a box from its top-left and bottom-right corners.
    pub fn from_corners(top_left: PixelCoord, bottom_right: PixelCoord) -> Result<Self, GeometryError> {
        Self::new(top_left.x, top_left.y, bottom_right.x, bottom_right.y)
    }

    pub fn x0(&self) -> i32 {
        self.x0
    }
    pub fn y0(&self) -> i32 {
        self.y0
    }
    pub fn x1(&self) -> i32 {
        self.x1
    }
    pub fn y1(&self) -> i32 {
        self.y1
    }

    pub fn width(&self) -> i32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i32 {
        self.y1 - self.y0
    }

    /// Continuous-convention area, `width * height`.
    pub fn area(&self) -> f64 {
        f64::from(self.width()) * f64::from(self.height())
    }

    /// Number of pixels enclosed under inclusive bounds.
    pub fn pixel_count(&self) -> u64 {
        (self.width() as u64 + 1) * (self.height() as u64 + 1)
    }

    pub fn top_left(&self) -> PixelCoord {
        PixelCoord::new(self.x0, self.y0)
    }

    pub fn bottom_right(&self) -> PixelCoord {
        PixelCoord::new(self.x1, self.y1)
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        self.x0 <= p.x && p.x <= self.x1 && self.y0 <= p.y && p.y <= self.y1
    }

    /// Whether the inclusive pixel extent fits inside a `width x height` grid.
    pub fn fits_grid(&self, width: usize, height: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && (self.x1 as i64) < width as i64 && (self.y1 as i64) < height as i64
    }

    /// Center point `((x0 + x1) / 2, (y0 + y1) / 2)`.
    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x0 + self.x1) / 2.0,
            f64::from(self.y0 + self.y1) / 2.0,
        )
    }

    pub fn translated(&self, dx: i32, dy: i32) -> Self {
        Self {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Key for the canonical `(y0, x0, y1, x1)` output order.
    pub fn canonical_key(&self) -> (i32, i32, i32, i32) {
        (self.y0, self.x0, self.y1, self.x1)
    }

    /// Number of empty pixel rows or columns separating two boxes along the
    /// axis where they are furthest apart; negative when they overlap.
    pub fn separation(&self, other: &BBox) -> i32 {
        let gap_x = (other.x0 - self.x1).max(self.x0 - other.x1) - 1;
        let gap_y = (other.y0 - self.y1).max(self.y0 - other.y1) - 1;
        gap_x.max(gap_y)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Intersection over union with continuous-convention areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0);
    let inter = f64::from(ix) * f64::from(iy);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Angle and length of a box's main diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalParams {
    /// Radians in `(0, pi/2)`.
    pub theta: f64,
    /// Diagonal length in pixels.
    pub alpha: f64,
}

pub fn diagonal_params(b: &BBox) -> DiagonalParams {
    let w = f64::from(b.width());
    let h = f64::from(b.height());
    DiagonalParams {
        theta: (h / w).atan(),
        alpha: (h * h + w * w).sqrt(),
    }
}

pub fn center(b: &BBox) -> (f64, f64) {
    b.center()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: i32, y0: i32, x1: i32, y1: i32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BBox::new(0, 0, 1, 10).is_err());
        assert!(BBox::new(0, 0, 10, 0).is_err());
        assert!(BBox::new(5, 5, 3, 9).is_err());
        assert!(BBox::new(0, 0, 2, 2).is_ok());
    }

    #[test]
    fn iou_examples() {
        let a = bb(0, 0, 10, 10);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20, 20, 30, 30)), 0.0);
        let b = bb(1, 1, 11, 11);
        assert!((iou(&a, &b) - 81.0 / 119.0).abs() < 1e-15);
        // touching edges share no area
        assert_eq!(iou(&a, &bb(10, 0, 20, 10)), 0.0);
    }

    #[test]
    fn diagonal_examples() {
        let d = diagonal_params(&bb(0, 0, 10, 10));
        assert!((d.theta - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((d.alpha - 200f64.sqrt()).abs() < 1e-12);
        let d = diagonal_params(&bb(0, 0, 10, 5));
        assert!((d.theta - 0.5f64.atan()).abs() < 1e-15);
        assert!((d.alpha - 125f64.sqrt()).abs() < 1e-12);
        assert!((d.theta - 0.463_647_609).abs() < 1e-9);
    }

    #[test]
    fn center_examples() {
        assert_eq!(center(&bb(0, 0, 10, 10)), (5.0, 5.0));
        assert_eq!(center(&bb(2, 4, 6, 8)), (4.0, 6.0));
        assert_eq!(center(&bb(0, 0, 3, 5)), (1.5, 2.5));
    }

    #[test]
    fn separation_counts_empty_pixels() {
        let a = bb(0, 0, 10, 10);
        assert_eq!(a.separation(&bb(14, 0, 20, 10)), 3);
        assert_eq!(a.separation(&bb(0, 12, 10, 20)), 1);
        assert!(a.separation(&bb(5, 5, 20, 20)) < 0);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0i32..200, 0i32..200, 2i32..80, 2i32..80).prop_map(|(x, y, w, h)| bb(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn alpha_squared_matches_sides(a in arb_box()) {
            let d = diagonal_params(&a);
            let expected = f64::from(a.width()).powi(2) + f64::from(a.height()).powi(2);
            prop_assert!(((d.alpha * d.alpha) - expected).abs() / expected < 1e-12);
            prop_assert!(d.theta > 0.0 && d.theta < std::f64::consts::FRAC_PI_2);
        }
    }
}

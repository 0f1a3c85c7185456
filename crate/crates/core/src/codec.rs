//! Dense segmentation/regression encoding of ground-truth boxes.
//!
//! The segmentation map marks every pixel inside a box. The two regression
//! channels hold, for each in-box pixel `i`, the projections of the vectors
//! `(x1, y1) - i` and `i - (x0, y0)` onto the box diagonal direction
//! `(cos theta, sin theta)`, divided by the diagonal length `alpha`:
//!
//! ```text
//! r0 = ((x1 - ix) cos theta + (y1 - iy) sin theta) / alpha
//! r1 = ((ix - x0) cos theta + (iy - y0) sin theta) / alpha
//! ```
//!
//! so `r0` peaks at the top-left corner, `r1` at the bottom-right one, and
//! `r0 + r1 = 1` everywhere inside the box.
//!
//! Grids are indexed `[x, y]` with shape `(W, H)`; the regression tensor has
//! shape `(2, W, H)`.

use ndarray::{Array2, Array3, Axis};
use thiserror::Error;

use crate::geometry::{diagonal_params, BBox, PixelCoord};
use crate::tensor_file::{Tensor, TensorFileError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("box {bbox} does not fit the {width}x{height} grid")]
    BoxOutOfGrid { bbox: BBox, width: usize, height: usize },
    #[error("pixel ({x},{y}) is outside the {width}x{height} grid")]
    PixelOutOfGrid { x: i32, y: i32, width: usize, height: usize },
    #[error("grid dimensions must be non-zero, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("segmentation and regression shapes disagree")]
    ShapeMismatch,
    #[error("segmentation value {value} at ({x},{y}) is not 0 or 1")]
    BadSegValue { x: usize, y: usize, value: f32 },
    #[error("regression value {value} at channel {channel} ({x},{y}) is outside [0,1]")]
    BadRegValue { channel: usize, x: usize, y: usize, value: f32 },
    #[error("expected a rank-3 tensor of shape [3, W, H], got dims {0:?}")]
    BadTensorShape(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorFileError),
}

/// Paired segmentation map and two-channel regression map over the frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMaps {
    seg: Array2<f32>,
    reg: Array3<f32>,
}

impl DenseMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            seg: Array2::zeros((width, height)),
            reg: Array3::zeros((2, width, height)),
        }
    }

    /// Wraps existing arrays, checking shapes and value ranges.
    pub fn from_parts(seg: Array2<f32>, reg: Array3<f32>) -> Result<Self, CodecError> {
        let (w, h) = seg.dim();
        if w == 0 || h == 0 {
            return Err(CodecError::EmptyGrid { width: w, height: h });
        }
        if reg.dim() != (2, w, h) {
            return Err(CodecError::ShapeMismatch);
        }
        for ((x, y), &v) in seg.indexed_iter() {
            if v != 0.0 && v != 1.0 {
                return Err(CodecError::BadSegValue { x, y, value: v });
            }
        }
        for ((c, x, y), &v) in reg.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(CodecError::BadRegValue { channel: c, x, y, value: v });
            }
        }
        Ok(Self { seg, reg })
    }

    pub(crate) fn from_parts_unchecked(seg: Array2<f32>, reg: Array3<f32>) -> Self {
        debug_assert_eq!(reg.dim(), (2, seg.dim().0, seg.dim().1));
        Self { seg, reg }
    }

    pub fn width(&self) -> usize {
        self.seg.dim().0
    }

    pub fn height(&self) -> usize {
        self.seg.dim().1
    }

    pub fn seg(&self) -> &Array2<f32> {
        &self.seg
    }

    pub fn reg(&self) -> &Array3<f32> {
        &self.reg
    }

    pub fn seg_mut(&mut self) -> &mut Array2<f32> {
        &mut self.seg
    }

    pub fn reg_mut(&mut self) -> &mut Array3<f32> {
        &mut self.reg
    }

    pub fn contains(&self, p: PixelCoord) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width() && (p.y as usize) < self.height()
    }

    /// Rank-3 `[3, W, H]` view: channel 0 = segmentation, 1-2 = regression.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width(), self.height());
        let mut data = Vec::with_capacity(3 * w * h);
        data.extend(self.seg.iter().copied());
        data.extend(self.reg.iter().copied());
        Tensor::f32(vec![3, w, h], data).expect("shape matches payload")
    }

    pub fn from_tensor(t: Tensor) -> Result<Self, CodecError> {
        let dims = t.dims().to_vec();
        if dims.len() != 3 || dims[0] != 3 {
            return Err(CodecError::BadTensorShape(dims));
        }
        let (w, h) = (dims[1], dims[2]);
        let data = t.into_f32()?;
        let all = Array3::from_shape_vec((3, w, h), data).map_err(|_| CodecError::ShapeMismatch)?;
        let seg = all.index_axis(Axis(0), 0).to_owned();
        let reg = all.slice(ndarray::s![1..3, .., ..]).to_owned();
        Self::from_parts(seg, reg)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CodecError> {
        Ok(self.to_tensor().save(path)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CodecError> {
        Self::from_tensor(Tensor::load(path)?)
    }
}

/// Per-pixel decoded values `(s, r0, r1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelValue {
    pub seg: u8,
    pub r0: f32,
    pub r1: f32,
}

/// Regression values of pixel `p` against box `b`, in double precision.
pub fn regression_values(b: &BBox, p: PixelCoord) -> (f64, f64) {
    let d = diagonal_params(b);
    let (sin, cos) = d.theta.sin_cos();
    let r0 = (f64::from(b.x1() - p.x) * cos + f64::from(b.y1() - p.y) * sin) / d.alpha;
    let r1 = (f64::from(p.x - b.x0()) * cos + f64::from(p.y - b.y0()) * sin) / d.alpha;
    (r0, r1)
}

/// Rasterizes boxes into segmentation and regression maps.
///
/// Pixels covered by several boxes are assigned to the box whose center is
/// nearest; ties go to the smaller box, then to the earlier one in `boxes`.
pub fn encode(boxes: &[BBox], width: usize, height: usize) -> Result<DenseMaps, CodecError> {
    if width == 0 || height == 0 {
        return Err(CodecError::EmptyGrid { width, height });
    }
    if let Some(b) = boxes.iter().find(|b| !b.fits_grid(width, height)) {
        return Err(CodecError::BoxOutOfGrid { bbox: *b, width, height });
    }

    // Assignment pass.
    let mut owner: Array2<i32> = Array2::from_elem((width, height), -1);
    let key = |idx: usize, x: i32, y: i32| {
        let b = &boxes[idx];
        let (cx, cy) = b.center();
        let dx = f64::from(x) - cx;
        let dy = f64::from(y) - cy;
        (dx * dx + dy * dy, b.area(), idx)
    };
    for (idx, b) in boxes.iter().enumerate() {
        for x in b.x0()..=b.x1() {
            for y in b.y0()..=b.y1() {
                let slot = &mut owner[[x as usize, y as usize]];
                if *slot < 0 {
                    *slot = idx as i32;
                    continue;
                }
                let current = key(*slot as usize, x, y);
                let candidate = key(idx, x, y);
                if candidate.partial_cmp(&current) == Some(std::cmp::Ordering::Less) {
                    *slot = idx as i32;
                }
            }
        }
    }

    // Fill pass.
    let mut maps = DenseMaps::zeros(width, height);
    for (idx, b) in boxes.iter().enumerate() {
        let d = diagonal_params(b);
        let (sin, cos) = d.theta.sin_cos();
        for x in b.x0()..=b.x1() {
            for y in b.y0()..=b.y1() {
                let (ux, uy) = (x as usize, y as usize);
                if owner[[ux, uy]] != idx as i32 {
                    continue;
                }
                let r0 = (f64::from(b.x1() - x) * cos + f64::from(b.y1() - y) * sin) / d.alpha;
                let r1 = (f64::from(x - b.x0()) * cos + f64::from(y - b.y0()) * sin) / d.alpha;
                maps.seg[[ux, uy]] = 1.0;
                maps.reg[[0, ux, uy]] = r0.clamp(0.0, 1.0) as f32;
                maps.reg[[1, ux, uy]] = r1.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(maps)
}

pub fn decode_pixel(maps: &DenseMaps, p: PixelCoord) -> Result<PixelValue, CodecError> {
    if !maps.contains(p) {
        return Err(CodecError::PixelOutOfGrid {
            x: p.x,
            y: p.y,
            width: maps.width(),
            height: maps.height(),
        });
    }
    let (x, y) = (p.x as usize, p.y as usize);
    Ok(PixelValue {
        seg: maps.seg[[x, y]] as u8,
        r0: maps.reg[[0, x, y]],
        r1: maps.reg[[1, x, y]],
    })
}

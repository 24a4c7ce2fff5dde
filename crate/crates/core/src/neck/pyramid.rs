use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Backbone strides of C2..C5 relative to the input image.
pub const BACKBONE_STRIDES: [usize; 4] = [4, 8, 16, 32];

/// Backbone outputs C2..C5.
#[derive(Debug, Clone, PartialEq)]
pub struct BackbonePyramid<T = f64> {
    pub levels: [Tensor<T>; 4],
}

impl<T: Scalar> BackbonePyramid<T> {
    pub fn new(c2: Tensor<T>, c3: Tensor<T>, c4: Tensor<T>, c5: Tensor<T>) -> Self {
        BackbonePyramid { levels: [c2, c3, c4, c5] }
    }

    pub fn c5(&self) -> &Tensor<T> {
        &self.levels[3]
    }

    /// Shapes of C2..C5 for an `height x width` image and base width `c`.
    pub fn expected_shapes(batch: usize, base_channel: usize, height: usize, width: usize) -> Result<[Shape; 4]> {
        InputGeometry { batch, height, width }.validate()?;
        Ok(std::array::from_fn(|k| {
            let s = BACKBONE_STRIDES[k];
            Shape::new(batch, base_channel << k, height / s, width / s)
        }))
    }

    /// Channel widths `{c, 2c, 4c, 8c}` and halving spatial extents.
    pub fn validate(&self, base_channel: usize) -> Result<()> {
        let s2 = self.levels[0].shape();
        if s2.h == 0 || s2.w == 0 || s2.n == 0 {
            return Err(Error::shape(format!("C2 has an empty extent: {s2}")));
        }
        for (k, t) in self.levels.iter().enumerate() {
            let s = t.shape();
            let want_c = base_channel << k;
            if s.c != want_c {
                return Err(Error::config(format!(
                    "C{} has {} channels, expected {want_c} for base channel {base_channel}",
                    k + 2,
                    s.c
                )));
            }
            let (h, w) = (s2.h >> k, s2.w >> k);
            if s.n != s2.n || s.h != h || s.w != w || !s2.h.is_multiple_of(1 << k) || !s2.w.is_multiple_of(1 << k) {
                return Err(Error::shape(format!(
                    "C{} has shape {s}, expected ({}, {want_c}, {h}, {w}) from C2 {s2}",
                    k + 2,
                    s2.n
                )));
            }
        }
        Ok(())
    }
}

/// Neck outputs R2..R5.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidOutputs<T = f64> {
    pub levels: [Tensor<T>; 4],
}

impl<T: Scalar> PyramidOutputs<T> {
    pub fn shapes(&self) -> [Shape; 4] {
        std::array::from_fn(|k| self.levels[k].shape())
    }
}

/// Notional input image extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl InputGeometry {
    pub const fn new(batch: usize, height: usize, width: usize) -> Self {
        InputGeometry { batch, height, width }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(32) || !self.width.is_multiple_of(32) {
            return Err(Error::config(format!(
                "input geometry {}x{} must be a positive multiple of 32 in each dimension",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Spatial extent at `stride`.
    pub fn extent(&self, stride: usize) -> (usize, usize) {
        (self.height / stride, self.width / stride)
    }
}

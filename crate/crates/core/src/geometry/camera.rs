use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Perspective pinhole camera. Pixel `(row, col)` covers
/// `[col, col + 1) × [row, row + 1)` in image coordinates; rows grow downward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub focal_length: f64,
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
}

/// Points closer than this to the camera plane are not projected.
pub(crate) const NEAR_PLANE: f64 = 1e-6;

impl Camera {
    pub fn new(focal_length: f64, cx: f64, cy: f64, height: usize, width: usize) -> Result<Self> {
        let cam = Camera {
            focal_length,
            cx,
            cy,
            height,
            width,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the principal point at the image centre.
    pub fn centered(focal_length: f64, height: usize, width: usize) -> Result<Self> {
        Camera::new(focal_length, width as f64 / 2.0, height as f64 / 2.0, height, width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_length > 0.0) || !self.focal_length.is_finite() {
            return Err(Error::invalid(format!(
                "focal length must be positive, got {}",
                self.focal_length
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("camera image size must be nonzero"));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) lies outside the {}x{} image",
                self.cx, self.cy, self.height, self.width
            )));
        }
        Ok(())
    }

    /// The same camera seen at `1/stride` resolution, i.e. in feature-cell
    /// units. Output size is `ceil(size / stride)`.
    pub fn downscaled(&self, stride: usize) -> Camera {
        let s = stride as f64;
        Camera {
            focal_length: self.focal_length / s,
            cx: self.cx / s,
            cy: self.cy / s,
            height: self.height.div_ceil(stride),
            width: self.width.div_ceil(stride),
        }
    }

    /// Projects a camera-frame point to continuous image coordinates
    /// `(u, v)` and its depth along the optical axis.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let depth = -p.z;
        if depth <= NEAR_PLANE {
            return None;
        }
        let u = self.cx + self.focal_length * p.x / depth;
        let v = self.cy - self.focal_length * p.y / depth;
        Some((u, v, depth))
    }

    /// Jacobian of `(u, v)` with respect to the camera-frame point.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> [[f64; 3]; 2] {
        let depth = -p.z;
        let f = self.focal_length;
        let inv = 1.0 / depth;
        [
            [f * inv, 0.0, f * p.x * inv * inv],
            [0.0, -f * inv, -f * p.y * inv * inv],
        ]
    }

    /// Pixel containing continuous image coordinates, if inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        (row < self.height && col < self.width).then_some((row, col))
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }
}

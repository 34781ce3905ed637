//! Unit-norm feature maps and the extractors that produce them.

mod adam;
mod cnn;
mod oracle;

pub use adam::Adam;
pub use cnn::{ExtractorConfig, ExtractorParams, ForwardCache};
pub use oracle::oracle_extract;

use crate::image::Image;
use crate::{Error, Result};

/// `height × width` grid of `channels`-dimensional feature vectors, stored
/// cell-major (`data[(row * width + col) * channels + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Image pixels per feature cell along each axis.
    pub stride: usize,
    pub data: Vec<f64>,
    pub foreground_mask: Option<Vec<bool>>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, stride: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "feature data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if stride == 0 || channels == 0 {
            return Err(Error::invalid("stride and channel count must be nonzero"));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            stride,
            data,
            foreground_mask: None,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, idx: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[idx * c..(idx + 1) * c]
    }

    pub fn cell_at(&self, row: usize, col: usize) -> &[f64] {
        self.cell(row * self.width + col)
    }

    /// Largest deviation of any cell norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.data
            .chunks_exact(self.channels)
            .map(|c| (norm(c) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn normalize_cells(&mut self) {
        for c in self.data.chunks_exact_mut(self.channels) {
            normalize(c);
        }
    }
}

/// Produces a feature map from an image.
pub trait FeatureExtractor: Sync {
    fn extract(&self, image: &Image) -> Result<FeatureMap>;
    fn stride(&self) -> usize;
    fn channels(&self) -> usize;
}

impl FeatureExtractor for ExtractorParams {
    fn extract(&self, image: &Image) -> Result<FeatureMap> {
        ExtractorParams::extract(self, image)
    }

    fn stride(&self) -> usize {
        self.config().stride()
    }

    fn channels(&self) -> usize {
        self.config().feature_channels
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Normalizes in place; vectors with norm below 1e-12 are left unchanged.
pub(crate) fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

//! RGB float images and their on-disk `.img` encoding.
//!
//! `.img` layout: 8-byte magic `MPIMG001`, then `height`, `width`,
//! `channels` as little-endian u32, then `height × width × channels`
//! little-endian f32 values in row-major, channel-last order.

use std::path::Path;

use crate::{Error, Result};

pub const IMG_MAGIC: &[u8; 8] = b"MPIMG001";

/// `height × width × 3` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma (Rec. 601 weights), row-major.
    pub fn grayscale(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(IMG_MAGIC);
        for d in [self.height as u32, self.width as u32, 3u32] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != IMG_MAGIC {
            return Err(Error::Decode("not an .img file".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        if c != 3 {
            return Err(Error::Decode(format!("expected 3 channels, found {c}")));
        }
        let expected = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(12))
            .ok_or_else(|| Error::Decode("image dims overflow".into()))?;
        if bytes.len() - 20 != expected {
            return Err(Error::Decode(format!(
                "payload is {} bytes, expected {expected}",
                bytes.len() - 20
            )));
        }
        let data = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Image {
            height: h,
            width: w,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::decode(&bytes)
    }
}

//! Canny edge detection and the style-transfer extension point.

use crate::image::Image;
use crate::{seed, Error, Result};

/// Binary edge image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        EdgeMap {
            height,
            width,
            edges: vec![false; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.edges[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src[y * w + clamp_idx(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp_idx(y as i64 + j as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edges of `image`: grayscale, Gaussian blur (σ = 1), Sobel
/// gradients, non-maximum suppression along the quantized gradient
/// direction, then double-threshold hysteresis with 8-connectivity.
/// Thresholds apply to the Sobel magnitude of the blurred grayscale image.
pub fn canny_edges(image: &Image, low_threshold: f64, high_threshold: f64) -> Result<EdgeMap> {
    if !(0.0 <= low_threshold && low_threshold < high_threshold) {
        return Err(Error::invalid(format!(
            "canny thresholds must satisfy 0 <= low < high, got {low_threshold} and {high_threshold}"
        )));
    }
    let (h, w) = (image.height, image.width);
    let g = blur(&image.grayscale(), h, w, 1.0);
    let at = |y: i64, x: i64| g[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut mag = vec![0.0; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let m = |y: i64, x: i64| {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // Ties along the gradient resolve toward the lower/left neighbour so a
    // symmetric ridge stays one pixel wide.
    let mut thin = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let (dy, dx) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let v = mag[i];
            if v > m(y - dy, x - dx) && v >= m(y + dy, x + dx) {
                thin[i] = v;
            }
        }
    }
    let mut edges = vec![false; h * w];
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= high_threshold).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] >= low_threshold && thin[j] > 0.0 {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        height: h,
        width: w,
        edges,
    })
}

/// Turns an edge map and a text prompt into an image. Stands in for a
/// generative image model conditioned on edges.
pub trait StyleTransfer: Sync {
    fn stylize(&self, edges: &EdgeMap, prompt: &str) -> Image;
}

/// Default stylizer: edge pixels take a hue hashed from the prompt, all
/// other pixels a fixed neutral color.
#[derive(Clone, Copy, Debug, Default)]
pub struct EdgeColorizer;

pub const COLORIZER_BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];

pub fn prompt_hue(prompt: &str) -> f64 {
    (seed::splitmix64(seed::hash_str(prompt)) >> 11) as f64 / (1u64 << 53) as f64
}

impl StyleTransfer for EdgeColorizer {
    fn stylize(&self, edges: &EdgeMap, prompt: &str) -> Image {
        let rgb = hsv_to_rgb(prompt_hue(prompt), 0.85, 0.95);
        let mut img = Image::filled(edges.height, edges.width, COLORIZER_BACKGROUND);
        for y in 0..edges.height {
            for x in 0..edges.width {
                if edges.get(y, x) {
                    img.set_pixel(y, x, rgb);
                }
            }
        }
        img
    }
}

pub fn style_transfer_stub(edges: &EdgeMap, prompt: &str) -> Image {
    EdgeColorizer.stylize(edges, prompt)
}

/// `h` in [0, 1).
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

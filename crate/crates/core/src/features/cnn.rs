//! Small convolutional extractor with a hand-written reverse pass.
//!
//! Stage `s < last`: same-padded convolution, ReLU, 2×2 average pooling
//! (ceil mode). Last stage: same-padded convolution only. Every output cell is
//! then L2-normalized. The stride is `2^(stages - 1)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::checkpoint::{Container, DType, Tensor};
use crate::image::Image;
use crate::{seed, Error, Result};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    /// Output channels of every stage but the last.
    pub hidden_channels: Vec<usize>,
    /// Odd kernel size per stage.
    pub kernel_sizes: Vec<usize>,
    /// Channel count `c` of the output feature map.
    pub feature_channels: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            hidden_channels: vec![12, 24],
            kernel_sizes: vec![5, 3, 3],
            feature_channels: 32,
        }
    }
}

impl ExtractorConfig {
    pub fn stride(&self) -> usize {
        1 << self.kernel_sizes.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() || self.kernel_sizes.len() > 6 {
            return Err(Error::invalid("extractor needs between 1 and 6 stages"));
        }
        if self.hidden_channels.len() + 1 != self.kernel_sizes.len() {
            return Err(Error::invalid(format!(
                "{} hidden channel counts for {} stages (need stages - 1)",
                self.hidden_channels.len(),
                self.kernel_sizes.len()
            )));
        }
        if self.kernel_sizes.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid("kernel sizes must be odd"));
        }
        if self.feature_channels == 0 || self.hidden_channels.contains(&0) {
            return Err(Error::invalid("channel counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvShape {
    in_c: usize,
    out_c: usize,
    k: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvShape {
    fn weight_len(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }
}

/// Extractor weights, stored as one flat vector so optimizers and gradient
/// checks can treat them uniformly.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    config: ExtractorConfig,
    layers: Vec<ConvShape>,
    values: Vec<f64>,
}

/// Intermediate activations kept by [`ExtractorParams::forward`] for the
/// reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    dims: Vec<(usize, usize)>,
    conv_inputs: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
    features: Vec<f64>,
    norms: Vec<f64>,
}

fn layer_shapes(config: &ExtractorConfig) -> (Vec<ConvShape>, usize) {
    let mut layers = Vec::new();
    let mut off = 0;
    let mut in_c = 3;
    for (s, &k) in config.kernel_sizes.iter().enumerate() {
        let out_c = config
            .hidden_channels
            .get(s)
            .copied()
            .unwrap_or(config.feature_channels);
        let mut shape = ConvShape {
            in_c,
            out_c,
            k,
            w_off: off,
            b_off: 0,
        };
        off += shape.weight_len();
        shape.b_off = off;
        off += out_c;
        layers.push(shape);
        in_c = out_c;
    }
    (layers, off)
}

impl ExtractorParams {
    /// He-initialized weights, zero biases.
    pub fn init(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layers, len) = layer_shapes(&config);
        let mut values = vec![0.0; len];
        let mut rng = seed::rng(seed);
        for l in &layers {
            let std = (2.0 / (l.in_c * l.k * l.k) as f64).sqrt();
            for w in &mut values[l.w_off..l.w_off + l.weight_len()] {
                let z: f64 = rng.sample(StandardNormal);
                *w = std * z;
            }
        }
        Ok(ExtractorParams {
            config,
            layers,
            values,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn stride(&self) -> usize {
        self.config.stride()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rounds every weight to the nearest f32, so the in-memory model equals
    /// what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }

    pub fn extract(&self, image: &Image) -> Result<FeatureMap> {
        Ok(self.forward(image)?.0)
    }

    pub fn forward(&self, image: &Image) -> Result<(FeatureMap, ForwardCache)> {
        if image.height == 0 || image.width == 0 || image.data.len() != image.height * image.width * 3 {
            return Err(Error::invalid(format!(
                "image of {}x{} with {} values is not a valid RGB image",
                image.height,
                image.width,
                image.data.len()
            )));
        }
        let (mut h, mut w) = (image.height, image.width);
        let plane = h * w;
        let mut x = vec![0.0; 3 * plane];
        for (p, px) in image.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                x[c * plane + p] = f64::from(px[c]) - 0.5;
            }
        }

        let mut dims = Vec::new();
        let mut conv_inputs = Vec::new();
        let mut activations = Vec::new();
        let last = self.layers.len() - 1;
        for (s, l) in self.layers.iter().enumerate() {
            dims.push((h, w));
            let mut y = conv_forward(&x, l, &self.values, h, w);
            conv_inputs.push(std::mem::take(&mut x));
            if s == last {
                x = y;
            } else {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                let (pooled, ph, pw) = avgpool_forward(&y, l.out_c, h, w);
                activations.push(y);
                x = pooled;
                h = ph;
                w = pw;
            }
        }
        dims.push((h, w));

        let c = self.config.feature_channels;
        let cells = h * w;
        let mut data = vec![0.0; cells * c];
        let mut norms = vec![0.0; cells];
        for cell in 0..cells {
            let mut n2 = 0.0;
            for k in 0..c {
                n2 += x[k * cells + cell] * x[k * cells + cell];
            }
            let n = n2.sqrt().max(NORM_FLOOR);
            norms[cell] = n;
            for k in 0..c {
                data[cell * c + k] = x[k * cells + cell] / n;
            }
        }
        let map = FeatureMap {
            height: h,
            width: w,
            channels: c,
            stride: self.stride(),
            data: data.clone(),
            foreground_mask: None,
        };
        Ok((
            map,
            ForwardCache {
                dims,
                conv_inputs,
                activations,
                features: data,
                norms,
            },
        ))
    }

    /// Reverse pass: gradient of a scalar loss with respect to all weights,
    /// given its gradient `upstream` with respect to the normalized output
    /// (cell-major, same layout as [`FeatureMap::data`]).
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != cache.features.len() {
            return Err(Error::invalid(format!(
                "upstream gradient has {} values, feature map has {}",
                upstream.len(),
                cache.features.len()
            )));
        }
        let c = self.config.feature_channels;
        let (fh, fw) = *cache.dims.last().unwrap();
        let cells = fh * fw;
        // Through the normalization: g_y = (g_f - f <f, g_f>) / |y|.
        let mut g = vec![0.0; c * cells];
        for cell in 0..cells {
            let f = &cache.features[cell * c..(cell + 1) * c];
            let gf = &upstream[cell * c..(cell + 1) * c];
            let radial = super::dot(f, gf);
            for k in 0..c {
                g[k * cells + cell] = (gf[k] - f[k] * radial) / cache.norms[cell];
            }
        }

        let mut grad = vec![0.0; self.values.len()];
        for s in (0..self.layers.len()).rev() {
            let l = &self.layers[s];
            let (h, w) = cache.dims[s];
            if s != self.layers.len() - 1 {
                let act = &cache.activations[s];
                let (ph, pw) = cache.dims[s + 1];
                let mut gy = avgpool_backward(&g, l.out_c, h, w, ph, pw);
                for (gv, a) in gy.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g = gy;
            }
            g = conv_backward(&cache.conv_inputs[s], &g, l, &self.values, &mut grad, h, w, s > 0);
        }
        Ok(grad)
    }

    /// Gradient of `Σ upstream · extract(image)` with respect to the weights.
    pub fn extract_gradients(&self, image: &Image, upstream: &[f64]) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(image)?;
        self.backward(&cache, upstream)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("extractor");
        c.metadata.insert(
            "config".into(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        for (s, l) in self.layers.iter().enumerate() {
            c.tensors.push(Tensor::new(
                &format!("conv{s}.weight"),
                DType::F32,
                vec![l.out_c, l.in_c, l.k, l.k],
                self.values[l.w_off..l.w_off + l.weight_len()].to_vec(),
            ));
            c.tensors.push(Tensor::new(
                &format!("conv{s}.bias"),
                DType::F32,
                vec![l.out_c],
                self.values[l.b_off..l.b_off + l.out_c].to_vec(),
            ));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("extractor")?;
        let config: ExtractorConfig = serde_json::from_str(c.meta("config")?)
            .map_err(|e| Error::Decode(format!("bad extractor config: {e}")))?;
        config.validate().map_err(|e| Error::Decode(e.to_string()))?;
        let (layers, len) = layer_shapes(&config);
        let mut values = vec![0.0; len];
        for (s, l) in layers.iter().enumerate() {
            let wt = c.tensor(&format!("conv{s}.weight"))?;
            let bt = c.tensor(&format!("conv{s}.bias"))?;
            if wt.dims != [l.out_c, l.in_c, l.k, l.k] || bt.dims != [l.out_c] {
                return Err(Error::Decode(format!("layer {s} has unexpected shape")));
            }
            values[l.w_off..l.w_off + l.weight_len()].copy_from_slice(&wt.data);
            values[l.b_off..l.b_off + l.out_c].copy_from_slice(&bt.data);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decode("non-finite extractor weight".into()));
        }
        Ok(ExtractorParams {
            config,
            layers,
            values,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Row ranges for a kernel tap offset `d` over an axis of length `n`:
/// destination indices `lo..hi` read source index `i + d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

fn conv_forward(x: &[f64], l: &ConvShape, params: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let p = (l.k / 2) as isize;
    let mut out = vec![0.0; l.out_c * plane];
    for o in 0..l.out_c {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(params[l.b_off + o]);
        for c in 0..l.in_c {
            let x_c = &x[c * plane..(c + 1) * plane];
            for dy in 0..l.k {
                let di = dy as isize - p;
                let (i_lo, i_hi) = tap_range(di, h);
                for dx in 0..l.k {
                    let dj = dx as isize - p;
                    let (j_lo, j_hi) = tap_range(dj, w);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let wv = params[l.w_off + ((o * l.in_c + c) * l.k + dy) * l.k + dx];
                    for i in i_lo..i_hi {
                        let src = (i as isize + di) as usize * w;
                        let s = &x_c[(src as isize + j_lo as isize + dj) as usize..][..j_hi - j_lo];
                        let d = &mut out_o[i * w + j_lo..i * w + j_hi];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients into `grad` and returns the
/// gradient with respect to the layer input (empty if not needed).
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    g_out: &[f64],
    l: &ConvShape,
    params: &[f64],
    grad: &mut [f64],
    h: usize,
    w: usize,
    need_input_grad: bool,
) -> Vec<f64> {
    let plane = h * w;
    let p = (l.k / 2) as isize;
    let mut g_in = if need_input_grad {
        vec![0.0; l.in_c * plane]
    } else {
        Vec::new()
    };
    for o in 0..l.out_c {
        let g_o = &g_out[o * plane..(o + 1) * plane];
        grad[l.b_off + o] += g_o.iter().sum::<f64>();
        for c in 0..l.in_c {
            let x_c = &x[c * plane..(c + 1) * plane];
            for dy in 0..l.k {
                let di = dy as isize - p;
                let (i_lo, i_hi) = tap_range(di, h);
                for dx in 0..l.k {
                    let dj = dx as isize - p;
                    let (j_lo, j_hi) = tap_range(dj, w);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let widx = l.w_off + ((o * l.in_c + c) * l.k + dy) * l.k + dx;
                    let wv = params[widx];
                    let mut acc = 0.0;
                    for i in i_lo..i_hi {
                        let src = ((i as isize + di) as usize * w) as isize + j_lo as isize + dj;
                        let s = &x_c[src as usize..][..j_hi - j_lo];
                        let go = &g_o[i * w + j_lo..i * w + j_hi];
                        acc += go.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        if need_input_grad {
                            let gi = &mut g_in[c * plane + src as usize..][..j_hi - j_lo];
                            for (gv, gov) in gi.iter_mut().zip(go) {
                                *gv += wv * gov;
                            }
                        }
                    }
                    grad[widx] += acc;
                }
            }
        }
    }
    g_in
}

fn avgpool_forward(x: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        for i in 0..ph {
            for j in 0..pw {
                let mut sum = 0.0;
                let mut n = 0.0;
                for yy in 2 * i..(2 * i + 2).min(h) {
                    for xx in 2 * j..(2 * j + 2).min(w) {
                        sum += x[c * h * w + yy * w + xx];
                        n += 1.0;
                    }
                }
                out[c * ph * pw + i * pw + j] = sum / n;
            }
        }
    }
    (out, ph, pw)
}

fn avgpool_backward(g: &[f64], channels: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        for i in 0..ph {
            for j in 0..pw {
                let ys = 2 * i..(2 * i + 2).min(h);
                let xs = 2 * j..(2 * j + 2).min(w);
                let n = (ys.len() * xs.len()) as f64;
                let gv = g[c * ph * pw + i * pw + j] / n;
                for yy in ys {
                    for xx in xs.clone() {
                        out[c * h * w + yy * w + xx] += gv;
                    }
                }
            }
        }
    }
    out
}

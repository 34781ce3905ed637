//! Procedural synthetic scenes: textured box-composite objects rendered
//! over backgrounds at sampled poses, a synthetic-to-shifted domain
//! transform, and Canny edge guidance.

mod canny;
mod io;
mod scene;

pub use canny::{canny_edges, COLORIZER_BACKGROUND, hsv_to_rgb, prompt_hue, style_transfer_stub, EdgeColorizer, EdgeMap, StyleTransfer};
pub use io::{read_manifest, sample_id, write_dataset, Dataset, ManifestEntry, MANIFEST_FILE};
pub use scene::{known_categories, render_background, render_object, value_noise3, Category, ObjectRender, Part, Texture};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Camera, Pose};
use crate::image::Image;
use crate::{seed, Error, Result};

/// Background ids at or above this value form the held-out pool used by
/// the shifted domain.
pub const HELD_OUT_BACKGROUND_BASE: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Synthetic,
    Shifted,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Synthetic => "synthetic",
            DomainTag::Shifted => "shifted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundPolicy {
    /// Background drawn uniformly from the whole pool, independent of
    /// category.
    Randomized,
    /// Each category draws from its own contiguous slice of the pool.
    CategoryCorrelated,
    /// Each category draws from the next category's slice; used to test
    /// models trained with correlated backgrounds.
    CategorySwapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub samples_per_category: usize,
    /// Radians; sampled uniformly.
    pub azimuth_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub inplane_range: [f64; 2],
    pub distance_range: [f64; 2],
    pub texture_pool_size: u64,
    pub background_pool_size: u64,
    pub background_policy: BackgroundPolicy,
    pub master_seed: u64,
    pub image_size: usize,
    pub focal_length: f64,
    /// Blend weight of the stylized edge map over object pixels.
    pub edge_overlay: f64,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            samples_per_category: 1000,
            azimuth_range: [0.0, std::f64::consts::TAU],
            elevation_range: [(-10f64).to_radians(), 60f64.to_radians()],
            inplane_range: [(-5f64).to_radians(), 5f64.to_radians()],
            distance_range: [3.5, 5.0],
            texture_pool_size: 100,
            background_pool_size: 100,
            background_policy: BackgroundPolicy::Randomized,
            master_seed: 2024,
            image_size: 64,
            focal_length: 80.0,
            edge_overlay: 0.3,
            canny_low: 0.1,
            canny_high: 0.3,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::invalid(format!("{name} [{}, {}] must be ordered within [{lo}, {hi}]", r[0], r[1])));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, PI, TAU};
        check_range("azimuth_range", self.azimuth_range, 0.0, TAU)?;
        check_range("elevation_range", self.elevation_range, -FRAC_PI_2, FRAC_PI_2)?;
        check_range("inplane_range", self.inplane_range, -PI, PI)?;
        check_range("distance_range", self.distance_range, 1e-3, f64::MAX)?;
        if self.texture_pool_size == 0 || self.background_pool_size == 0 {
            return Err(Error::invalid("texture and background pools must be nonempty"));
        }
        if self.image_size == 0 {
            return Err(Error::invalid("image_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.edge_overlay) {
            return Err(Error::invalid("edge_overlay must lie in [0, 1]"));
        }
        if !(0.0 <= self.canny_low && self.canny_low < self.canny_high) {
            return Err(Error::invalid("canny thresholds must satisfy 0 <= low < high"));
        }
        self.camera().map(|_| ())
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::centered(self.focal_length, self.image_size, self.image_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Image,
    pub pose: Pose,
    pub camera: Camera,
    pub category: String,
    pub index: usize,
    pub texture_id: u64,
    pub background_id: u64,
    pub domain_tag: DomainTag,
    pub seed: u64,
}

/// Rounds to 6 decimals, nudged back inside `[lo, hi]` if rounding left it.
fn quantize(x: f64, lo: f64, hi: f64) -> f64 {
    let q = (x * 1e6).round() / 1e6;
    if q < lo {
        ((q + 1e-6) * 1e6).round() / 1e6
    } else if q > hi {
        ((q - 1e-6) * 1e6).round() / 1e6
    } else {
        q
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn background_for(policy: BackgroundPolicy, pool: u64, category_index: usize, category_count: usize, rng: &mut impl Rng) -> u64 {
    let slice = |k: usize| {
        let n = category_count as u64;
        let lo = pool * k as u64 / n;
        let hi = (pool * (k as u64 + 1) / n).max(lo + 1);
        (lo, hi)
    };
    match policy {
        BackgroundPolicy::Randomized => rng.gen_range(0..pool),
        BackgroundPolicy::CategoryCorrelated => {
            let (lo, hi) = slice(category_index);
            rng.gen_range(lo..hi)
        }
        BackgroundPolicy::CategorySwapped => {
            let (lo, hi) = slice((category_index + 1) % category_count);
            rng.gen_range(lo..hi)
        }
    }
}

/// Renders sample `index` of `categories[category_index]`. Everything
/// random is drawn from a seed derived from `(master_seed, category, index)`.
pub fn generate_sample(config: &GeneratorConfig, categories: &[String], category_index: usize, index: usize) -> Result<SceneSample> {
    let name = categories
        .get(category_index)
        .ok_or_else(|| Error::invalid(format!("category index {category_index} out of range")))?;
    let category = Category::named(name)?;
    let camera = config.camera()?;
    let sample_seed = seed::derive(config.master_seed, name, index as u64);
    let mut rng = seed::rng(sample_seed);

    let [alo, ahi] = config.azimuth_range;
    let [elo, ehi] = config.elevation_range;
    let [tlo, thi] = config.inplane_range;
    let [dlo, dhi] = config.distance_range;
    let mut azimuth = quantize(uniform(&mut rng, config.azimuth_range), alo, ahi);
    if azimuth >= std::f64::consts::TAU {
        azimuth = 0.0;
    }
    let pose = Pose {
        azimuth,
        elevation: quantize(uniform(&mut rng, config.elevation_range), elo, ehi),
        theta: quantize(uniform(&mut rng, config.inplane_range), tlo, thi),
        distance: quantize(uniform(&mut rng, config.distance_range), dlo, dhi),
    };
    pose.validate()?;

    let texture_id = rng.gen_range(0..config.texture_pool_size);
    let palette = [0, 1].map(|_| hsv_to_rgb(rng.gen::<f64>(), rng.gen_range(0.3..0.9), rng.gen_range(0.45..1.0)));
    let texture = Texture {
        id: seed::derive(texture_id, "texture", 0),
        palette,
    };
    let background_id = background_for(
        config.background_policy,
        config.background_pool_size,
        category_index,
        categories.len(),
        &mut rng,
    );

    let object = render_object(&category, &texture, &pose, &camera);
    let mut image = render_background(background_id, camera.height, camera.width);
    if config.edge_overlay > 0.0 {
        let edges = canny_edges(&object.image, config.canny_low, config.canny_high)?;
        let prompt = format!("a {name} painted in random colors, texture {texture_id}");
        let styled = style_transfer_stub(&edges, &prompt);
        let a = config.edge_overlay as f32;
        let mut overlaid = object.image.clone();
        for (i, &m) in object.mask.iter().enumerate() {
            if m && edges.edges[i] {
                for k in 0..3 {
                    let j = i * 3 + k;
                    overlaid.data[j] = (1.0 - a) * overlaid.data[j] + a * styled.data[j];
                }
            }
        }
        composite(&mut image, &overlaid, &object.mask);
    } else {
        composite(&mut image, &object.image, &object.mask);
    }

    Ok(SceneSample {
        image,
        pose,
        camera,
        category: name.clone(),
        index,
        texture_id,
        background_id,
        domain_tag: DomainTag::Synthetic,
        seed: sample_seed,
    })
}

fn composite(dst: &mut Image, src: &Image, mask: &[bool]) {
    for (i, &m) in mask.iter().enumerate() {
        if m {
            dst.data[i * 3..i * 3 + 3].copy_from_slice(&src.data[i * 3..i * 3 + 3]);
        }
    }
}

/// Foreground mask of a sample recomputed from its annotations.
pub fn object_mask(category: &str, pose: &Pose, camera: &Camera) -> Result<Vec<bool>> {
    let c = Category::named(category)?;
    let (v, f, _) = c.triangles();
    Ok(crate::geometry::rasterize_triangles(&v, &f, pose, camera).foreground_mask)
}

/// All samples, category-major, in index order. Output does not depend on
/// the number of worker threads.
pub fn generate_dataset(config: &GeneratorConfig, categories: &[String]) -> Result<Vec<SceneSample>> {
    config.validate()?;
    if categories.is_empty() {
        return Err(Error::invalid("at least one category is required"));
    }
    for name in categories {
        Category::named(name)?;
    }
    let jobs: Vec<(usize, usize)> = (0..categories.len())
        .flat_map(|c| (0..config.samples_per_category).map(move |i| (c, i)))
        .collect();
    jobs.par_iter()
        .map(|&(c, i)| generate_sample(config, categories, c, i))
        .collect()
}

/// Strength of each component of the synthetic-to-shifted transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    /// Blend toward a random color remapping of object pixels.
    pub recolor: f64,
    /// Maximum absolute brightness offset.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
    /// Blend toward a held-out background.
    pub background_swap: f64,
    pub background_pool_size: u64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Box-blur radius applied before the noise, in pixels.
    pub blur_radius: usize,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            recolor: 0.8,
            brightness: 0.15,
            contrast: 0.35,
            background_swap: 1.0,
            background_pool_size: 100,
            noise_sigma: 0.08,
            blur_radius: 1,
            seed: 77,
        }
    }
}

impl ShiftConfig {
    pub fn zero() -> Self {
        ShiftConfig {
            recolor: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            background_swap: 0.0,
            background_pool_size: 1,
            noise_sigma: 0.0,
            blur_radius: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [self.recolor, self.background_swap];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("recolor and background_swap must lie in [0, 1]"));
        }
        if [self.brightness, self.contrast, self.noise_sigma]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::invalid("shift strengths must be nonnegative"));
        }
        if self.contrast >= 1.0 {
            return Err(Error::invalid("contrast jitter must be below 1"));
        }
        if self.background_pool_size == 0 {
            return Err(Error::invalid("held-out background pool must be nonempty"));
        }
        Ok(())
    }
}

fn box_blur(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let r = radius as i64;
    let mut out = img.clone();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = [0.0f32; 3];
            let mut n = 0.0f32;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                        let p = img.pixel(yy as usize, xx as usize);
                        for k in 0..3 {
                            acc[k] += p[k];
                        }
                        n += 1.0;
                    }
                }
            }
            out.set_pixel(y as usize, x as usize, acc.map(|v| v / n));
        }
    }
    out
}

/// Shifted-domain copy of a synthetic sample: object recolor, background
/// swap from the held-out pool, blur, brightness/contrast jitter and
/// additive noise. Annotations are unchanged. With [`ShiftConfig::zero`]
/// the image is returned unchanged.
pub fn domain_shift(sample: &SceneSample, config: &ShiftConfig) -> Result<SceneSample> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(config.seed ^ sample.seed, "shift", sample.index as u64));
    let mask = object_mask(&sample.category, &sample.pose, &sample.camera)?;
    let mut img = sample.image.clone();

    let mix: [[f32; 3]; 3] = {
        let mut m = [[0.0f32; 3]; 3];
        let perm = match rng.gen_range(0..5) {
            0 => [1, 2, 0],
            1 => [2, 0, 1],
            2 => [1, 0, 2],
            3 => [0, 2, 1],
            _ => [2, 1, 0],
        };
        for (row, &p) in perm.iter().enumerate() {
            m[row][p] = 1.0;
        }
        m
    };
    let held_out = HELD_OUT_BACKGROUND_BASE + rng.gen_range(0..config.background_pool_size);
    let brightness = config.brightness * rng.gen_range(-1.0..=1.0);
    let contrast = 1.0 + config.contrast * rng.gen_range(-1.0..=1.0);

    if config.recolor > 0.0 {
        let s = config.recolor as f32;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                let p = img.pixel(i / img.width, i % img.width);
                let q = [0, 1, 2].map(|r| mix[r][0] * p[0] + mix[r][1] * p[1] + mix[r][2] * p[2]);
                img.set_pixel(i / img.width, i % img.width, [0, 1, 2].map(|k| (1.0 - s) * p[k] + s * q[k]));
            }
        }
    }
    let mut background_id = sample.background_id;
    if config.background_swap > 0.0 {
        let bg = render_background(held_out, img.height, img.width);
        let s = config.background_swap as f32;
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                for k in 0..3 {
                    let j = i * 3 + k;
                    img.data[j] = (1.0 - s) * img.data[j] + s * bg.data[j];
                }
            }
        }
        background_id = held_out;
    }
    img = box_blur(&img, config.blur_radius);
    if brightness != 0.0 || contrast != 1.0 || config.noise_sigma > 0.0 {
        for v in img.data.iter_mut() {
            let z: f64 = if config.noise_sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            let x = (f64::from(*v) - 0.5) * contrast + 0.5 + brightness + config.noise_sigma * z;
            *v = x.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(SceneSample {
        image: img,
        background_id,
        domain_tag: DomainTag::Shifted,
        ..sample.clone()
    })
}

/// [`generate_dataset`] followed by [`domain_shift`] on every sample.
pub fn generate_shifted(config: &GeneratorConfig, shift: &ShiftConfig, categories: &[String]) -> Result<Vec<SceneSample>> {
    let base = generate_dataset(config, categories)?;
    base.par_iter().map(|s| domain_shift(s, shift)).collect()
}

//! Box-composite objects, procedural textures and backgrounds.

use nalgebra::Vector3;

use super::canny::hsv_to_rgb;
use crate::geometry::{rasterize_triangles, Camera, CuboidMesh, Pose};
use crate::image::Image;
use crate::seed::splitmix64;
use crate::{Error, Result};

/// An axis-aligned box of a composite object, in object coordinates
/// (x forward, y up, z to the side).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Part {
    pub center: [f64; 3],
    pub dimensions: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Category {
    pub name: &'static str,
    pub parts: Vec<Part>,
}

const CATEGORY_NAMES: [&str; 3] = ["car", "truck", "bus"];

pub fn known_categories() -> &'static [&'static str] {
    &CATEGORY_NAMES
}

fn part(center: [f64; 3], dimensions: [f64; 3]) -> Part {
    Part { center, dimensions }
}

impl Category {
    pub fn named(name: &str) -> Result<Category> {
        let parts = match name {
            "car" => vec![
                part([0.0, -0.2, 0.0], [2.0, 0.5, 1.0]),
                part([-0.15, 0.25, 0.0], [1.0, 0.4, 0.9]),
            ],
            "truck" => vec![
                part([-0.3, 0.0, 0.0], [1.4, 1.0, 1.0]),
                part([0.7, -0.15, 0.0], [0.6, 0.7, 0.95]),
            ],
            "bus" => vec![
                part([0.0, 0.05, 0.0], [2.2, 0.8, 0.8]),
                part([0.0, -0.4, 0.0], [1.9, 0.1, 0.7]),
            ],
            _ => {
                return Err(Error::invalid(format!(
                    "unknown category `{name}` (known: {})",
                    CATEGORY_NAMES.join(", ")
                )))
            }
        };
        let name = CATEGORY_NAMES.iter().find(|n| **n == name).expect("matched above");
        Ok(Category { name, parts })
    }

    /// Extent of the axis-aligned bounding box, used as the neural mesh
    /// cuboid of the category.
    pub fn bounding_dimensions(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let lo = self
                .parts
                .iter()
                .map(|p| p.center[k] - p.dimensions[k] / 2.0)
                .fold(f64::INFINITY, f64::min);
            let hi = self
                .parts
                .iter()
                .map(|p| p.center[k] + p.dimensions[k] / 2.0)
                .fold(f64::NEG_INFINITY, f64::max);
            *o = hi - lo;
        }
        out
    }

    /// Triangle soup of all parts with outward face normals.
    pub fn triangles(&self) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>, Vec<Vector3<f64>>) {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut normals = Vec::new();
        for p in &self.parts {
            let mesh = CuboidMesh::build(p.dimensions, 2).expect("part dimensions are positive");
            let offset = vertices.len();
            let c = Vector3::from(p.center);
            vertices.extend(mesh.vertices().iter().map(|v| v + c));
            for (fi, f) in mesh.faces().iter().enumerate() {
                faces.push([f[0] + offset, f[1] + offset, f[2] + offset]);
                normals.push(mesh.face_side(fi).normal());
            }
        }
        (vertices, faces, normals)
    }
}

/// Object rendering: per-pixel color and coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRender {
    pub image: Image,
    pub mask: Vec<bool>,
}

/// Light direction in the object frame; every box side gets its own shade.
const LIGHT: [f64; 3] = [0.35, 0.8, 0.48];

fn hash3(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((x as u64) ^ splitmix64((y as u64) ^ splitmix64(z as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinear value noise in [0, 1].
pub fn value_noise3(seed: u64, p: [f64; 3]) -> f64 {
    let b = [p[0].floor(), p[1].floor(), p[2].floor()];
    let t = [smooth(p[0] - b[0]), smooth(p[1] - b[1]), smooth(p[2] - b[2])];
    let (x, y, z) = (b[0] as i64, b[1] as i64, b[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                acc += w * hash3(seed, x + dx, y + dy, z + dz);
            }
        }
    }
    acc
}

/// Texture: value noise of a per-texture frequency, mapped onto a
/// two-color palette.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texture {
    pub id: u64,
    pub palette: [[f32; 3]; 2],
}

impl Texture {
    fn frequency(&self) -> f64 {
        1.5 + (splitmix64(self.id ^ 0x7e57) % 5) as f64
    }

    pub fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let f = self.frequency();
        let n = value_noise3(self.id, [p.x * f, p.y * f, p.z * f]);
        let t = smooth(n);
        let [a, b] = self.palette;
        [0, 1, 2].map(|k| f64::from(a[k]) * (1.0 - t) + f64::from(b[k]) * t)
    }
}

pub fn render_object(category: &Category, texture: &Texture, pose: &Pose, camera: &Camera) -> ObjectRender {
    let (vertices, faces, normals) = category.triangles();
    let render = rasterize_triangles(&vertices, &faces, pose, camera);
    let light = Vector3::from(LIGHT).normalize();
    let mut image = Image::filled(camera.height, camera.width, [0.0; 3]);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let i = row * camera.width + col;
            let Some(fi) = render.pixel_face[i] else {
                continue;
            };
            let f = faces[fi as usize];
            let b = render.pixel_barycentric[i];
            let p = vertices[f[0]] * b[0] + vertices[f[1]] * b[1] + vertices[f[2]] * b[2];
            let shade = 0.55 + 0.45 * normals[fi as usize].dot(&light);
            let c = texture.color(&p);
            image.set_pixel(row, col, c.map(|v| (v * shade).clamp(0.0, 1.0) as f32));
        }
    }
    ObjectRender {
        image,
        mask: render.foreground_mask,
    }
}

/// Procedural background keyed only by `id`: a smooth color gradient with
/// value-noise clutter and, for some ids, oriented stripes.
pub fn render_background(id: u64, height: usize, width: usize) -> Image {
    let h = |k: u64| (splitmix64(id.wrapping_mul(0x9E37_79B9) ^ k) >> 11) as f64 / (1u64 << 53) as f64;
    let c0 = hsv_to_rgb(h(1), 0.2 + 0.6 * h(2), 0.25 + 0.7 * h(3));
    let c1 = hsv_to_rgb(h(4), 0.2 + 0.6 * h(5), 0.25 + 0.7 * h(6));
    let c2 = hsv_to_rgb(h(7), 0.3 + 0.6 * h(8), 0.2 + 0.8 * h(9));
    let angle = h(10) * std::f64::consts::TAU;
    let (sa, ca) = angle.sin_cos();
    let freq = 2.0 + 6.0 * h(11);
    let stripes = h(12) < 0.4;
    let stripe_freq = 0.2 + 0.6 * h(13);
    let stripe_angle = h(14) * std::f64::consts::PI;
    let (ss, cs) = stripe_angle.sin_cos();
    let noise_seed = splitmix64(id ^ 0xbac6);
    let mut img = Image::filled(height, width, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let g = (0.5 + (u - 0.5) * ca + (v - 0.5) * sa).clamp(0.0, 1.0);
            let n = value_noise3(noise_seed, [u * freq, v * freq, 0.5]);
            let mut c = [0, 1, 2].map(|k| f64::from(c0[k]) * (1.0 - g) + f64::from(c1[k]) * g);
            let m = smooth(n);
            for k in 0..3 {
                c[k] = c[k] * (1.0 - 0.6 * m) + f64::from(c2[k]) * 0.6 * m;
            }
            if stripes {
                let s = ((x as f64 * cs + y as f64 * ss) * stripe_freq).sin();
                let k = if s > 0.0 { 1.15 } else { 0.85 };
                c.iter_mut().for_each(|v| *v *= k);
            }
            img.set_pixel(y, x, c.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    img
}

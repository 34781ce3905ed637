use nalgebra::Vector3;

use super::camera::Camera;
use super::mesh::CuboidMesh;
use super::pose::Pose;

/// Output of [`rasterize`]. Pixel buffers are row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub height: usize,
    pub width: usize,
    pub foreground_mask: Vec<bool>,
    /// Depth along the optical axis; `+inf` on background pixels.
    pub depth: Vec<f64>,
    /// Governing vertex of each foreground pixel.
    pub pixel_vertex: Vec<Option<u32>>,
    /// Front-most triangle of each foreground pixel.
    pub pixel_face: Vec<Option<u32>>,
    /// Perspective-correct barycentric weights of the pixel centre inside
    /// its front-most triangle.
    pub pixel_barycentric: Vec<[f64; 3]>,
    /// `(row, col)` of each vertex that passes the depth test.
    pub vertex_pixel: Vec<Option<(usize, usize)>>,
    /// Continuous projection `(u, v, depth)` of every vertex in front of the
    /// camera.
    pub projected: Vec<Option<(f64, f64, f64)>>,
    /// Visibility tolerance used for this render.
    pub depth_tolerance: f64,
}

impl RenderResult {
    fn empty(height: usize, width: usize, vertex_count: usize, depth_tolerance: f64) -> Self {
        let n = height * width;
        RenderResult {
            height,
            width,
            foreground_mask: vec![false; n],
            depth: vec![f64::INFINITY; n],
            pixel_vertex: vec![None; n],
            pixel_face: vec![None; n],
            pixel_barycentric: vec![[0.0; 3]; n],
            vertex_pixel: vec![None; vertex_count],
            projected: vec![None; vertex_count],
            depth_tolerance,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.foreground_mask.iter().any(|&m| m)
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground_mask.iter().filter(|&&m| m).count()
    }

    /// Depth of the front-most surface at continuous image position
    /// `(u, v)`: the plane of the triangle that won the z-test for the pixel
    /// containing `(u, v)`, evaluated at `(u, v)` itself.
    pub fn surface_depth_at(&self, faces: &[[usize; 3]], u: f64, v: f64) -> Option<f64> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (row, col) = (v.floor() as usize, u.floor() as usize);
        if row >= self.height || col >= self.width {
            return None;
        }
        let face = self.pixel_face[row * self.width + col]? as usize;
        let tri = faces[face];
        let p = [
            self.projected[tri[0]]?,
            self.projected[tri[1]]?,
            self.projected[tri[2]]?,
        ];
        let w = screen_barycentric(&p, u, v)?;
        let inv: f64 = (0..3).map(|k| w[k] / p[k].2).sum();
        Some(1.0 / inv)
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Screen-space barycentrics of `(u, v)`, unrestricted to the triangle.
fn screen_barycentric(p: &[(f64, f64, f64); 3], u: f64, v: f64) -> Option<[f64; 3]> {
    let (a, b, c) = ((p[0].0, p[0].1), (p[1].0, p[1].1), (p[2].0, p[2].1));
    let area = edge(a, b, c);
    if area.abs() < 1e-12 {
        return None;
    }
    Some([
        edge(b, c, (u, v)) / area,
        edge(c, a, (u, v)) / area,
        edge(a, b, (u, v)) / area,
    ])
}

/// Rasterizes a cuboid mesh. See [`rasterize_triangles`].
pub fn rasterize(mesh: &CuboidMesh, pose: &Pose, camera: &Camera) -> RenderResult {
    rasterize_triangles(mesh.vertices(), mesh.faces(), pose, camera)
}

/// Z-buffered rasterization of a triangle mesh given in object coordinates.
///
/// Pixel centres `(col + 0.5, row + 0.5)` are tested against each triangle;
/// the nearest surface wins. The governing vertex of a foreground pixel is the
/// vertex of its front-most triangle closest to the hit point in 3D. A vertex
/// is visible when its depth is within `1e-4 · distance` of the front-most
/// surface at its own projected position. Triangles with a vertex behind the
/// near plane and zero-area projections are skipped.
pub fn rasterize_triangles(
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
    pose: &Pose,
    camera: &Camera,
) -> RenderResult {
    let (h, w) = (camera.height, camera.width);
    let tolerance = 1e-4 * pose.distance;
    let mut out = RenderResult::empty(h, w, vertices.len(), tolerance);
    let rotation = pose.rotation();

    for (r, v) in vertices.iter().enumerate() {
        out.projected[r] = camera.project(&pose.world_to_camera(&rotation, v));
    }

    for (fi, tri) in faces.iter().enumerate() {
        let (Some(p0), Some(p1), Some(p2)) = (
            out.projected[tri[0]],
            out.projected[tri[1]],
            out.projected[tri[2]],
        ) else {
            continue;
        };
        let area = edge((p0.0, p0.1), (p1.0, p1.1), (p2.0, p2.1));
        if area.abs() < 1e-12 {
            continue;
        }
        let min_u = p0.0.min(p1.0).min(p2.0);
        let max_u = p0.0.max(p1.0).max(p2.0);
        let min_v = p0.1.min(p1.1).min(p2.1);
        let max_v = p0.1.max(p1.1).max(p2.1);
        let col_lo = (min_u - 0.5).ceil().max(0.0);
        let col_hi = (max_u - 0.5).floor().min(w as f64 - 1.0);
        let row_lo = (min_v - 0.5).ceil().max(0.0);
        let row_hi = (max_v - 0.5).floor().min(h as f64 - 1.0);
        if col_lo > col_hi || row_lo > row_hi {
            continue;
        }
        let inv_depth = [1.0 / p0.2, 1.0 / p1.2, 1.0 / p2.2];
        for row in row_lo as usize..=row_hi as usize {
            let y = row as f64 + 0.5;
            for col in col_lo as usize..=col_hi as usize {
                let x = col as f64 + 0.5;
                let b = [
                    edge((p1.0, p1.1), (p2.0, p2.1), (x, y)) / area,
                    edge((p2.0, p2.1), (p0.0, p0.1), (x, y)) / area,
                    edge((p0.0, p0.1), (p1.0, p1.1), (x, y)) / area,
                ];
                if b[0] < 0.0 || b[1] < 0.0 || b[2] < 0.0 {
                    continue;
                }
                let inv: f64 = b[0] * inv_depth[0] + b[1] * inv_depth[1] + b[2] * inv_depth[2];
                let depth = 1.0 / inv;
                let idx = row * w + col;
                if depth < out.depth[idx] {
                    out.depth[idx] = depth;
                    out.foreground_mask[idx] = true;
                    out.pixel_face[idx] = Some(fi as u32);
                    out.pixel_barycentric[idx] = [
                        b[0] * inv_depth[0] * depth,
                        b[1] * inv_depth[1] * depth,
                        b[2] * inv_depth[2] * depth,
                    ];
                }
            }
        }
    }

    for idx in 0..h * w {
        let Some(face) = out.pixel_face[idx] else {
            continue;
        };
        let tri = faces[face as usize];
        let bary = out.pixel_barycentric[idx];
        let hit: Vector3<f64> = (0..3).map(|k| vertices[tri[k]] * bary[k]).sum();
        let mut best = tri[0];
        let mut best_d = f64::INFINITY;
        for &r in &tri {
            let d = (vertices[r] - hit).norm_squared();
            if d < best_d || (d == best_d && r < best) {
                best = r;
                best_d = d;
            }
        }
        out.pixel_vertex[idx] = Some(best as u32);
    }

    for r in 0..vertices.len() {
        let Some((u, v, depth)) = out.projected[r] else {
            continue;
        };
        let Some((row, col)) = camera.pixel_of(u, v) else {
            continue;
        };
        if !out.foreground_mask[row * w + col] {
            continue;
        }
        if let Some(surface) = out.surface_depth_at(faces, u, v) {
            if depth <= surface + tolerance {
                out.vertex_pixel[r] = Some((row, col));
            }
        }
    }
    out
}

//! Training and inference objectives with their gradients.
//!
//! All feature gradients are taken in the ambient space; the extractor's
//! backward pass projects them through its normalization step.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::features::{dot, sq_dist, FeatureMap};
use crate::geometry::{rasterize, rotation_derivatives, Camera, Pose, RenderResult};
use crate::neuralmesh::{Correspondence, NeuralMesh};
use crate::{Error, Result};

/// A scalar objective with its named components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
}

impl LossValue {
    pub fn single(name: &str, value: f64) -> Self {
        LossValue {
            total: value,
            terms: BTreeMap::from([(name.to_owned(), value)]),
        }
    }

    /// Value of a named term, 0 when absent.
    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }
}

pub const CONTRASTIVE: &str = "contrastive";
pub const RECONSTRUCTION: &str = "reconstruction";
pub const DOMAIN: &str = "domain";

fn check_cells(fm: &FeatureMap, cells: &[usize], seen: &mut [u8], tag: u8) -> Result<()> {
    for &c in cells {
        if c >= fm.cell_count() {
            return Err(Error::invalid(format!("cell {c} outside {}x{} map", fm.height, fm.width)));
        }
        if seen[c] != 0 {
            return Err(Error::invalid(format!("cell {c} listed twice or in both sets")));
        }
        seen[c] = tag;
    }
    Ok(())
}

/// Spatial contrastive loss
/// `-Σ_{i∈FG} (Σ_{j∈FG∖i} ‖f_i − f_j‖² + Σ_{j∈BG} ‖f_i − f_j‖²)`
/// and its gradient with respect to every cell (zero for unused cells).
///
/// Evaluated in closed form through the per-set sums, so the cost is linear
/// in the number of cells.
pub fn contrastive_loss(fm: &FeatureMap, fg: &[usize], bg: &[usize]) -> Result<(LossValue, Vec<f64>)> {
    if fg.is_empty() {
        return Err(Error::invalid("contrastive loss needs at least one foreground cell"));
    }
    let mut seen = vec![0u8; fm.cell_count()];
    check_cells(fm, fg, &mut seen, 1)?;
    check_cells(fm, bg, &mut seen, 2)?;
    let c = fm.channels;
    let sums = |cells: &[usize]| {
        let mut s = vec![0.0; c];
        let mut q = 0.0;
        for &i in cells {
            let f = fm.cell(i);
            s.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            q += dot(f, f);
        }
        (s, q)
    };
    let (s_fg, q_fg) = sums(fg);
    let (s_bg, q_bg) = sums(bg);
    let (n, m) = (fg.len() as f64, bg.len() as f64);
    let within = 2.0 * n * q_fg - 2.0 * dot(&s_fg, &s_fg);
    let across = m * q_fg + n * q_bg - 2.0 * dot(&s_fg, &s_bg);
    let value = -(within + across);

    let mut grad = vec![0.0; fm.data.len()];
    for &i in fg {
        let f = fm.cell(i);
        for k in 0..c {
            grad[i * c + k] = -((4.0 * n + 2.0 * m) * f[k] - 4.0 * s_fg[k] - 2.0 * s_bg[k]);
        }
    }
    for &j in bg {
        let f = fm.cell(j);
        for k in 0..c {
            grad[j * c + k] = -(2.0 * n * f[k] - 2.0 * s_fg[k]);
        }
    }
    Ok((LossValue::single(CONTRASTIVE, value), grad))
}

/// Gradients of the reconstruction loss for fixed correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionGradients {
    pub loss: LossValue,
    /// With respect to the feature map, same layout as `FeatureMap::data`.
    pub cells: Vec<f64>,
    /// With respect to the vertex features, `R × channels`.
    pub vertices: Vec<f64>,
    pub background: Vec<f64>,
}

fn check_map(fm: &FeatureMap, mesh: &NeuralMesh, corr: &Correspondence) -> Result<()> {
    if fm.channels != mesh.channels {
        return Err(Error::invalid(format!(
            "feature map has {} channels, mesh has {}",
            fm.channels, mesh.channels
        )));
    }
    if fm.height != corr.height || fm.width != corr.width {
        return Err(Error::invalid(format!(
            "feature map is {}x{}, correspondence is {}x{}",
            fm.height, fm.width, corr.height, corr.width
        )));
    }
    Ok(())
}

/// `½ Σ_{i∈FG} ‖f_i − C_{r(i)}‖² + ½ Σ_{i∈BG} ‖f_i − b‖²` for the given
/// correspondence.
pub fn reconstruction_loss_with(fm: &FeatureMap, mesh: &NeuralMesh, corr: &Correspondence) -> Result<LossValue> {
    check_map(fm, mesh, corr)?;
    let mut fg = 0.0;
    for &(cell, r) in &corr.foreground {
        fg += sq_dist(fm.cell(cell), mesh.vertex_feature(r));
    }
    let mut bg = 0.0;
    for &cell in &corr.background {
        bg += sq_dist(fm.cell(cell), &mesh.background_feature);
    }
    let (fg, bg) = (0.5 * fg, 0.5 * bg);
    Ok(LossValue {
        total: fg + bg,
        terms: BTreeMap::from([("foreground".to_owned(), fg), ("background".to_owned(), bg)]),
    })
}

/// Reconstruction loss with correspondences taken from rendering `mesh` at
/// `pose`. An empty render leaves only the background term.
pub fn reconstruction_loss(fm: &FeatureMap, mesh: &NeuralMesh, pose: &Pose, camera: &Camera) -> Result<LossValue> {
    let corr = crate::neuralmesh::project_correspondences(&mesh.geometry, pose, camera, fm.stride);
    reconstruction_loss_with(fm, mesh, &corr)
}

pub fn reconstruction_gradients(
    fm: &FeatureMap,
    mesh: &NeuralMesh,
    corr: &Correspondence,
) -> Result<ReconstructionGradients> {
    let loss = reconstruction_loss_with(fm, mesh, corr)?;
    let c = fm.channels;
    let mut cells = vec![0.0; fm.data.len()];
    let mut vertices = vec![0.0; mesh.vertex_features.len()];
    let mut background = vec![0.0; c];
    for &(cell, r) in &corr.foreground {
        let (f, v) = (fm.cell(cell), mesh.vertex_feature(r));
        for k in 0..c {
            let d = f[k] - v[k];
            cells[cell * c + k] = d;
            vertices[r * c + k] -= d;
        }
    }
    for &cell in &corr.background {
        let f = fm.cell(cell);
        for k in 0..c {
            let d = f[k] - mesh.background_feature[k];
            cells[cell * c + k] = d;
            background[k] -= d;
        }
    }
    Ok(ReconstructionGradients {
        loss,
        cells,
        vertices,
        background,
    })
}

/// Bilinear sample of one cell-center-indexed feature map at continuous
/// lattice position `(x, y)` (cell centers at integers), clamped to the edge.
fn sample_bilinear(fm: &FeatureMap, x: f64, y: f64, out: &mut [f64]) {
    let xmax = (fm.width - 1) as f64;
    let ymax = (fm.height - 1) as f64;
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let x0 = x.floor().min((fm.width as f64 - 2.0).max(0.0));
    let y0 = y.floor().min((fm.height as f64 - 2.0).max(0.0));
    let (tx, ty) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(fm.width - 1);
    let y1 = (y0 + 1).min(fm.height - 1);
    let (a, b, c, d) = (
        fm.cell_at(y0, x0),
        fm.cell_at(y0, x1),
        fm.cell_at(y1, x0),
        fm.cell_at(y1, x1),
    );
    for k in 0..out.len() {
        out[k] = (1.0 - ty) * ((1.0 - tx) * a[k] + tx * b[k]) + ty * ((1.0 - tx) * c[k] + tx * d[k]);
    }
}

/// Image-plane derivative of the projection of world point `p` with respect
/// to `(azimuth, elevation, theta, distance)`.
fn projection_pose_jacobian(pose: &Pose, camera: &Camera, derivs: &[nalgebra::Matrix3<f64>; 3], p: &Vector3<f64>) -> [[f64; 4]; 2] {
    let r = pose.rotation();
    let pc = pose.world_to_camera(&r, p);
    let jp = camera.projection_jacobian(&pc);
    let mut dirs = [Vector3::zeros(); 4];
    for (k, d) in derivs.iter().enumerate() {
        dirs[k] = d * p;
    }
    dirs[3] = Vector3::new(0.0, 0.0, -1.0);
    let mut out = [[0.0; 4]; 2];
    for row in 0..2 {
        for (k, dir) in dirs.iter().enumerate() {
            out[row][k] = jp[row][0] * dir.x + jp[row][1] * dir.y + jp[row][2] * dir.z;
        }
    }
    out
}

/// Reconstruction loss at `pose` together with its frozen-correspondence
/// pose gradient over `(azimuth, elevation, theta, distance)`.
///
/// The partition into foreground/background cells and each foreground
/// cell's vertex are fixed at `pose`. Cell `i` then reads the feature map by
/// bilinear interpolation at `c_i + u_r(m) − u_r(pose)`, where `u_r` is the
/// projection of its vertex; at `m = pose` this is exactly `f_i`. Feature
/// slopes at cell centres are central differences, the mean of the two
/// one-sided slopes of the interpolant.
pub fn reconstruction_loss_and_pose_gradient(
    fm: &FeatureMap,
    mesh: &NeuralMesh,
    pose: &Pose,
    camera: &Camera,
) -> Result<(LossValue, [f64; 4])> {
    let cam = camera.downscaled(fm.stride);
    let render = rasterize(&mesh.geometry, pose, &cam);
    let corr = correspondence_of(&render);
    let loss = reconstruction_loss_with(fm, mesh, &corr)?;
    let derivs = rotation_derivatives(pose);
    let c = fm.channels;
    let mut jac_cache: Vec<Option<[[f64; 4]; 2]>> = vec![None; mesh.vertex_count()];
    let mut grad = [0.0; 4];
    let (w, h) = (fm.width, fm.height);
    for &(cell, r) in &corr.foreground {
        if render.projected[r].is_none() {
            continue;
        }
        let jac = *jac_cache[r].get_or_insert_with(|| {
            projection_pose_jacobian(pose, &cam, &derivs, &mesh.geometry.vertices()[r])
        });
        let (row, col) = (cell / w, cell % w);
        let (l, rr) = (col.saturating_sub(1), (col + 1).min(w - 1));
        let (up, dn) = (row.saturating_sub(1), (row + 1).min(h - 1));
        let f = fm.cell(cell);
        let v = mesh.vertex_feature(r);
        let (fl, fr, fu, fd) = (fm.cell_at(row, l), fm.cell_at(row, rr), fm.cell_at(up, col), fm.cell_at(dn, col));
        let mut gu = 0.0;
        let mut gv = 0.0;
        for k in 0..c {
            let resid = f[k] - v[k];
            gu += resid * 0.5 * (fr[k] - fl[k]);
            gv += resid * 0.5 * (fd[k] - fu[k]);
        }
        for k in 0..4 {
            grad[k] += gu * jac[0][k] + gv * jac[1][k];
        }
    }
    Ok((loss, grad))
}

pub fn reconstruction_loss_pose_gradient(fm: &FeatureMap, mesh: &NeuralMesh, pose: &Pose, camera: &Camera) -> Result<[f64; 4]> {
    reconstruction_loss_and_pose_gradient(fm, mesh, pose, camera).map(|(_, g)| g)
}

/// The smooth surrogate whose gradient at `anchor` is returned by
/// [`reconstruction_loss_and_pose_gradient`]: correspondences frozen at
/// `anchor`, evaluated at `pose`. Equals the reconstruction loss when
/// `pose == anchor`.
pub fn frozen_reconstruction_loss(
    fm: &FeatureMap,
    mesh: &NeuralMesh,
    anchor: &Pose,
    pose: &Pose,
    camera: &Camera,
) -> Result<f64> {
    let cam = camera.downscaled(fm.stride);
    let render = rasterize(&mesh.geometry, anchor, &cam);
    let corr = correspondence_of(&render);
    check_map(fm, mesh, &corr)?;
    let rot = pose.rotation();
    let mut buf = vec![0.0; fm.channels];
    let mut fg = 0.0;
    for &(cell, r) in &corr.foreground {
        let Some((u0, v0, _)) = render.projected[r] else {
            fg += sq_dist(fm.cell(cell), mesh.vertex_feature(r));
            continue;
        };
        let p = pose.world_to_camera(&rot, &mesh.geometry.vertices()[r]);
        let Some((u1, v1, _)) = cam.project(&p) else {
            return Err(Error::invalid("vertex moved behind the camera"));
        };
        let (row, col) = (cell / fm.width, cell % fm.width);
        sample_bilinear(fm, col as f64 + u1 - u0, row as f64 + v1 - v0, &mut buf);
        fg += sq_dist(&buf, mesh.vertex_feature(r));
    }
    let bg: f64 = corr
        .background
        .iter()
        .map(|&cell| sq_dist(fm.cell(cell), &mesh.background_feature))
        .sum();
    Ok(0.5 * (fg + bg))
}

fn correspondence_of(render: &RenderResult) -> Correspondence {
    let mut corr = Correspondence {
        height: render.height,
        width: render.width,
        ..Default::default()
    };
    for (cell, v) in render.pixel_vertex.iter().enumerate() {
        match v {
            Some(r) => corr.foreground.push((cell, *r as usize)),
            None => corr.background.push(cell),
        }
    }
    corr
}

/// Gradients of the domain-contrastive loss.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainGradients {
    pub loss: LossValue,
    /// `R × channels`.
    pub vertices: Vec<f64>,
    /// One gradient per feature map, same layout as its data.
    pub cells: Vec<Vec<f64>>,
}

/// `Σ_n Σ_r ‖f_{n,r} − C_r‖²` over the vertex/cell pairs of each map's
/// pseudo-labelled correspondence.
pub fn domain_contrastive_loss(
    mesh: &NeuralMesh,
    maps: &[FeatureMap],
    correspondences: &[Correspondence],
) -> Result<DomainGradients> {
    if maps.len() != correspondences.len() {
        return Err(Error::invalid(format!(
            "{} feature maps but {} correspondences",
            maps.len(),
            correspondences.len()
        )));
    }
    let c = mesh.channels;
    let mut total = 0.0;
    let mut vertices = vec![0.0; mesh.vertex_features.len()];
    let mut cells = Vec::with_capacity(maps.len());
    for (fm, corr) in maps.iter().zip(correspondences) {
        check_map(fm, mesh, corr)?;
        let mut g = vec![0.0; fm.data.len()];
        for &(r, cell) in &corr.pairs {
            let (f, v) = (fm.cell(cell), mesh.vertex_feature(r));
            for k in 0..c {
                let d = f[k] - v[k];
                total += d * d;
                g[cell * c + k] += 2.0 * d;
                vertices[r * c + k] -= 2.0 * d;
            }
        }
        cells.push(g);
    }
    Ok(DomainGradients {
        loss: LossValue::single(DOMAIN, total),
        vertices,
        cells,
    })
}

/// `L_con + L_rec + α·L_domain`, keeping each component in the breakdown.
pub fn joint_loss(contrastive: f64, reconstruction: f64, domain: f64, alpha: f64) -> Result<LossValue> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a nonnegative number, got {alpha}")));
    }
    let weighted = alpha * domain;
    Ok(LossValue {
        total: contrastive + reconstruction + weighted,
        terms: BTreeMap::from([
            (CONTRASTIVE.to_owned(), contrastive),
            (RECONSTRUCTION.to_owned(), reconstruction),
            (DOMAIN.to_owned(), domain),
            ("weighted_domain".to_owned(), weighted),
            ("alpha".to_owned(), alpha),
        ]),
    })
}

use rand::Rng;
use rand_distr::StandardNormal;

use super::{normalize, FeatureMap};
use crate::geometry::{rasterize, Camera, Pose};
use crate::neuralmesh::NeuralMesh;
use crate::seed;

/// Verification extractor: renders the mesh's own vertex features at `pose`
/// on the feature lattice, fills uncovered cells with `background`, adds
/// isotropic Gaussian noise of scale `noise_sigma` and renormalizes.
///
/// With zero noise every foreground cell equals its governing vertex's
/// feature exactly, so the true pose is a global minimizer of the
/// reconstruction loss.
pub fn oracle_extract(
    mesh: &NeuralMesh,
    pose: &Pose,
    camera: &Camera,
    stride: usize,
    noise_sigma: f64,
    background: &[f64],
    noise_seed: u64,
) -> FeatureMap {
    let cam = camera.downscaled(stride);
    let render = rasterize(&mesh.geometry, pose, &cam);
    let c = mesh.channels;
    let mut data = Vec::with_capacity(cam.pixel_count() * c);
    for v in &render.pixel_vertex {
        match v {
            Some(r) => data.extend_from_slice(mesh.vertex_feature(*r as usize)),
            None => data.extend_from_slice(background),
        }
    }
    let mut map = FeatureMap {
        height: cam.height,
        width: cam.width,
        channels: c,
        stride,
        data,
        foreground_mask: Some(render.foreground_mask),
    };
    if noise_sigma > 0.0 {
        let mut rng = seed::rng(noise_seed);
        for v in &mut map.data {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_sigma * z;
        }
        for cell in map.data.chunks_exact_mut(c) {
            normalize(cell);
        }
    }
    map
}

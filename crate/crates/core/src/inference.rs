//! Render-and-compare pose estimation: multi-start gradient descent on the
//! reconstruction loss with a backtracking line search.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{dot, FeatureMap};
use crate::geometry::{rasterize, Camera, CuboidMesh, Pose};
use crate::losses::{reconstruction_loss, reconstruction_loss_and_pose_gradient};
use crate::neuralmesh::{project_correspondences, NeuralMesh};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Starting `(azimuth, elevation, theta)` in radians. The starting
    /// distance comes from the foreground area.
    pub init_grid: Vec<[f64; 3]>,
    /// Length of the first trial step along the normalized gradient.
    pub step_size: f64,
    pub max_iterations: usize,
    /// A run stops once the accepted (or smallest tried) step is shorter.
    pub convergence_tolerance: f64,
    /// Distances are clamped to this range during descent.
    pub distance_search_range: [f64; 2],
    /// Sufficient-decrease constant of the line search.
    pub armijo: f64,
}

/// 12 azimuths × elevations {0°, 30°} × theta 0.
pub fn default_init_grid() -> Vec<[f64; 3]> {
    let mut grid = Vec::with_capacity(24);
    for e in [0.0, PI / 6.0] {
        for k in 0..12 {
            grid.push([k as f64 * PI / 6.0, e, 0.0]);
        }
    }
    grid
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            init_grid: default_init_grid(),
            step_size: 0.2,
            max_iterations: 60,
            convergence_tolerance: 2e-3,
            distance_search_range: [2.5, 8.0],
            armijo: 1e-4,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_grid.is_empty() {
            return Err(Error::invalid("inference needs at least one starting pose"));
        }
        if self.init_grid.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("starting poses must be finite"));
        }
        if !(self.step_size > 0.0) || !(self.convergence_tolerance > 0.0) {
            return Err(Error::invalid("step size and convergence tolerance must be positive"));
        }
        let [lo, hi] = self.distance_search_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!("bad distance search range [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&self.armijo) {
            return Err(Error::invalid("armijo constant must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub final_loss: f64,
    /// Mean of `(1 + ⟨f_i, C_r(i)⟩) / 2` over foreground cells at `pose`.
    pub confidence: f64,
    pub iterations_used: usize,
    /// Index into the start grid of the winning run.
    pub init_index: usize,
}

/// One descent run.
#[derive(Clone, Debug, PartialEq)]
pub struct DescentTrace {
    pub start: Pose,
    pub pose: Pose,
    /// Loss after every accepted step, starting with the loss at `start`.
    pub losses: Vec<f64>,
    pub iterations: usize,
}

impl DescentTrace {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace has at least the start loss")
    }
}

fn check_inputs(fm: &FeatureMap, mesh: &NeuralMesh, camera: &Camera) -> Result<()> {
    if mesh.is_degenerate(1e-6) {
        return Err(Error::DegenerateMesh(format!(
            "all {} vertex features of `{}` coincide; train the mesh before inference",
            mesh.vertex_count(),
            mesh.category
        )));
    }
    let cam = camera.downscaled(fm.stride);
    if (cam.height, cam.width) != (fm.height, fm.width) {
        return Err(Error::invalid(format!(
            "feature map is {}x{} but camera at stride {} gives {}x{}",
            fm.height, fm.width, fm.stride, cam.height, cam.width
        )));
    }
    if fm.channels != mesh.channels {
        return Err(Error::invalid("feature channels differ from mesh channels"));
    }
    Ok(())
}

fn clamp_pose(v: [f64; 4], range: [f64; 2]) -> Result<Pose> {
    Pose::new(v[0], v[1], v[2], v[3].clamp(range[0], range[1]))
}

/// Gradient descent from `start` with a halving backtracking line search on
/// the reconstruction loss. Accepted steps strictly decrease the loss.
pub fn descend(fm: &FeatureMap, mesh: &NeuralMesh, camera: &Camera, start: &Pose, config: &InferenceConfig) -> Result<DescentTrace> {
    let mut pose = clamp_pose(start.to_array(), config.distance_search_range)?;
    let start = pose;
    let (mut loss, mut grad) = reconstruction_loss_and_pose_gradient(fm, mesh, &pose, camera)?;
    let mut losses = vec![loss.total];
    let mut step = config.step_size;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gnorm > 1e-12) {
            break;
        }
        let base = pose.to_array();
        let mut accepted = None;
        while step >= config.convergence_tolerance {
            let mut trial = base;
            for k in 0..4 {
                trial[k] -= step * grad[k] / gnorm;
            }
            let candidate = clamp_pose(trial, config.distance_search_range)?;
            let l = reconstruction_loss(fm, mesh, &candidate, camera)?.total;
            if l < loss.total - config.armijo * step * gnorm {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            break;
        };
        pose = next;
        (loss, grad) = reconstruction_loss_and_pose_gradient(fm, mesh, &pose, camera)?;
        losses.push(loss.total);
        if step < config.convergence_tolerance {
            break;
        }
        step = (step * 2.0).min(config.step_size);
    }
    Ok(DescentTrace {
        start,
        pose,
        losses,
        iterations,
    })
}

/// Mean cosine agreement `(1 + ⟨f_i, C_r(i)⟩) / 2` over the foreground cells
/// rendered at `pose`; 0 when nothing is rendered.
pub fn confidence(fm: &FeatureMap, mesh: &NeuralMesh, pose: &Pose, camera: &Camera) -> f64 {
    let corr = project_correspondences(&mesh.geometry, pose, camera, fm.stride);
    if corr.foreground.is_empty() {
        return 0.0;
    }
    let sum: f64 = corr
        .foreground
        .iter()
        .map(|&(cell, r)| (1.0 + dot(fm.cell(cell), mesh.vertex_feature(r))) / 2.0)
        .sum();
    (sum / corr.foreground.len() as f64).clamp(0.0, 1.0)
}

/// Number of cells whose feature is closer to some vertex feature than to
/// the background feature.
pub fn estimated_foreground_cells(fm: &FeatureMap, mesh: &NeuralMesh) -> usize {
    (0..fm.cell_count())
        .filter(|&i| {
            let f = fm.cell(i);
            let bg = dot(f, &mesh.background_feature);
            (0..mesh.vertex_count()).any(|r| dot(f, mesh.vertex_feature(r)) > bg)
        })
        .count()
}

/// Mean rendered foreground area (in feature cells) as a function of
/// distance, averaged over a ring of viewpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    distances: Vec<f64>,
    areas: Vec<f64>,
}

impl DistanceTable {
    pub fn build(geometry: &CuboidMesh, camera: &Camera, stride: usize, range: [f64; 2], samples: usize) -> Self {
        let samples = samples.max(2);
        let cam = camera.downscaled(stride);
        let distances: Vec<f64> = (0..samples)
            .map(|k| range[0] + (range[1] - range[0]) * k as f64 / (samples - 1) as f64)
            .collect();
        let areas = distances
            .iter()
            .map(|&d| {
                let mut total = 0.0;
                let mut n = 0.0;
                for e in [0.0, PI / 6.0] {
                    for k in 0..8 {
                        let pose = Pose::new(k as f64 * PI / 4.0 + PI / 8.0, e, 0.0, d).expect("valid table pose");
                        total += rasterize(geometry, &pose, &cam).foreground_count() as f64;
                        n += 1.0;
                    }
                }
                total / n
            })
            .collect();
        DistanceTable { distances, areas }
    }

    /// Distance whose mean area is closest to `area`, linearly interpolated
    /// between table entries. Areas shrink with distance.
    pub fn distance_for_area(&self, area: f64) -> f64 {
        let (d, a) = (&self.distances, &self.areas);
        if area >= a[0] {
            return d[0];
        }
        for k in 1..d.len() {
            if area >= a[k] {
                let t = if a[k - 1] > a[k] { (a[k - 1] - area) / (a[k - 1] - a[k]) } else { 0.0 };
                return d[k - 1] + t * (d[k] - d[k - 1]);
            }
        }
        d[d.len() - 1]
    }
}

/// Reusable estimator for one mesh and camera.
pub struct PoseEstimator<'a> {
    mesh: &'a NeuralMesh,
    camera: Camera,
    config: InferenceConfig,
    table: DistanceTable,
    stride: usize,
}

impl<'a> PoseEstimator<'a> {
    pub fn new(mesh: &'a NeuralMesh, camera: &Camera, stride: usize, config: &InferenceConfig) -> Result<Self> {
        config.validate()?;
        camera.validate()?;
        let table = DistanceTable::build(&mesh.geometry, camera, stride, config.distance_search_range, 24);
        Ok(PoseEstimator {
            mesh,
            camera: camera.clone(),
            config: config.clone(),
            table,
            stride,
        })
    }

    pub fn starts(&self, fm: &FeatureMap) -> Vec<Pose> {
        let area = estimated_foreground_cells(fm, self.mesh) as f64;
        let d = self.table.distance_for_area(area);
        self.config
            .init_grid
            .iter()
            .map(|s| Pose::new(s[0], s[1], s[2], d).expect("validated start"))
            .collect()
    }

    pub fn estimate(&self, fm: &FeatureMap) -> Result<PoseEstimate> {
        if fm.stride != self.stride {
            return Err(Error::invalid(format!(
                "feature map stride {} differs from estimator stride {}",
                fm.stride, self.stride
            )));
        }
        check_inputs(fm, self.mesh, &self.camera)?;
        let mut best: Option<(usize, DescentTrace)> = None;
        for (k, start) in self.starts(fm).iter().enumerate() {
            let trace = descend(fm, self.mesh, &self.camera, start, &self.config)?;
            if best.as_ref().map_or(true, |(_, b)| trace.final_loss() < b.final_loss()) {
                best = Some((k, trace));
            }
        }
        let (init_index, trace) = best.expect("at least one start");
        Ok(PoseEstimate {
            pose: trace.pose,
            final_loss: trace.final_loss(),
            confidence: confidence(fm, self.mesh, &trace.pose, &self.camera),
            iterations_used: trace.iterations,
            init_index,
        })
    }
}

/// Estimates the pose behind one feature map.
pub fn infer_pose(fm: &FeatureMap, mesh: &NeuralMesh, camera: &Camera, config: &InferenceConfig) -> Result<PoseEstimate> {
    PoseEstimator::new(mesh, camera, fm.stride, config)?.estimate(fm)
}

/// [`infer_pose`] over many maps on a pool of `threads` workers. Results are
/// in input order and independent of the thread count; a failing sample
/// yields an error in its slot without affecting the others.
pub fn batch_infer(
    maps: &[FeatureMap],
    mesh: &NeuralMesh,
    camera: &Camera,
    config: &InferenceConfig,
    threads: usize,
) -> Result<Vec<Result<PoseEstimate>>> {
    if maps.is_empty() {
        return Ok(Vec::new());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    let stride = maps[0].stride;
    let estimator = PoseEstimator::new(mesh, camera, stride, config)?;
    Ok(pool.install(|| maps.par_iter().map(|fm| estimator.estimate(fm)).collect()))
}

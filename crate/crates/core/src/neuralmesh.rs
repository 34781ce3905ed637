//! Neural mesh: a cuboid whose vertices carry unit-norm feature vectors,
//! plus a single background feature.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{Container, DType, Tensor};
use crate::features::{normalize, FeatureMap};
use crate::geometry::{rasterize, Camera, CuboidMesh, Pose};
use crate::{seed, Error, Result};

/// Feature-lattice correspondence of a mesh rendered at one pose.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Correspondence {
    pub height: usize,
    pub width: usize,
    /// `(vertex, cell)` for visible vertices: the cell is the one nearest the
    /// vertex's projection among the cells it governs. Each vertex at most once.
    pub pairs: Vec<(usize, usize)>,
    /// `(cell, governing vertex)` for every cell covered by the object.
    pub foreground: Vec<(usize, usize)>,
    /// Cells not covered by the object.
    pub background: Vec<usize>,
}

impl Correspondence {
    pub fn is_empty(&self) -> bool {
        self.foreground.is_empty()
    }

    pub fn foreground_cells(&self) -> Vec<usize> {
        self.foreground.iter().map(|&(c, _)| c).collect()
    }
}

/// Rasterizes `geometry` at feature-lattice resolution (`camera` downscaled by
/// `stride`) and collects vertex/cell correspondences.
pub fn project_correspondences(geometry: &CuboidMesh, pose: &Pose, camera: &Camera, stride: usize) -> Correspondence {
    let cam = camera.downscaled(stride);
    let render = rasterize(geometry, pose, &cam);
    let mut corr = Correspondence {
        height: cam.height,
        width: cam.width,
        ..Default::default()
    };
    for (cell, v) in render.pixel_vertex.iter().enumerate() {
        match v {
            Some(r) => corr.foreground.push((cell, *r as usize)),
            None => corr.background.push(cell),
        }
    }
    // Each visible vertex is paired with the nearest cell it governs, so a
    // pair's cell feature is always the one the vertex renders to.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; render.vertex_pixel.len()];
    for &(cell, r) in &corr.foreground {
        if render.vertex_pixel[r].is_none() {
            continue;
        }
        let Some((u, v, _)) = render.projected[r] else {
            continue;
        };
        let (row, col) = (cell / cam.width, cell % cam.width);
        let d = (col as f64 + 0.5 - u).powi(2) + (row as f64 + 0.5 - v).powi(2);
        if best[r].map_or(true, |(bd, _)| d < bd) {
            best[r] = Some((d, cell));
        }
    }
    corr.pairs = best
        .iter()
        .enumerate()
        .filter_map(|(r, b)| b.map(|(_, cell)| (r, cell)))
        .collect();
    corr
}

/// One moving-average step before and after renormalization.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingAverageStep {
    pub blended: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// `(1 - momentum) · current + momentum · target`, then normalized.
pub fn moving_average_step(current: &[f64], target: &[f64], momentum: f64) -> MovingAverageStep {
    if momentum == 0.0 {
        return MovingAverageStep {
            blended: current.to_vec(),
            normalized: current.to_vec(),
        };
    }
    let blended: Vec<f64> = current
        .iter()
        .zip(target)
        .map(|(c, t)| (1.0 - momentum) * c + momentum * t)
        .collect();
    let mut normalized = blended.clone();
    normalize(&mut normalized);
    MovingAverageStep {
        blended,
        normalized,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralMesh {
    pub geometry: CuboidMesh,
    pub channels: usize,
    /// Row-major `R × channels`.
    pub vertex_features: Vec<f64>,
    pub background_feature: Vec<f64>,
    /// Blend weight of new observations in vertex feature updates.
    pub momentum: f64,
    pub background_momentum: f64,
    /// False until the first update has seeded the background feature.
    pub background_initialized: bool,
    pub category: String,
}

impl NeuralMesh {
    /// Random unit vertex features from `seed`; the background feature is set
    /// from the first batch of observed background cells.
    pub fn new(geometry: CuboidMesh, channels: usize, momentum: f64, category: &str, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("feature channel count must be positive"));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} outside [0, 1]")));
        }
        let mut rng = seed::rng(seed);
        let r = geometry.vertex_count();
        let mut vertex_features = vec![0.0; r * channels];
        for row in vertex_features.chunks_exact_mut(channels) {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            normalize(row);
        }
        let mut background_feature: Vec<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut background_feature);
        Ok(NeuralMesh {
            geometry,
            channels,
            vertex_features,
            background_feature,
            momentum,
            background_momentum: momentum,
            background_initialized: false,
            category: category.to_owned(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.geometry.vertex_count()
    }

    pub fn vertex_feature(&self, r: usize) -> &[f64] {
        &self.vertex_features[r * self.channels..(r + 1) * self.channels]
    }

    pub fn vertex_feature_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.vertex_features[r * c..(r + 1) * c]
    }

    /// True when all vertex features coincide within `tol`.
    pub fn is_degenerate(&self, tol: f64) -> bool {
        let first = self.vertex_feature(0);
        (1..self.vertex_count()).all(|r| {
            self.vertex_feature(r)
                .iter()
                .zip(first)
                .all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    pub fn max_norm_error(&self) -> f64 {
        self.vertex_features
            .chunks_exact(self.channels)
            .chain(std::iter::once(self.background_feature.as_slice()))
            .map(|c| (crate::features::norm(c) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Moving-average update from one observed feature map: every visible
    /// vertex moves toward the feature of its cell, the background feature
    /// toward the mean background cell. Unobserved vertices are unchanged.
    pub fn update_vertex_features(&mut self, features: &FeatureMap, corr: &Correspondence) -> Result<()> {
        if features.height != corr.height || features.width != corr.width {
            return Err(Error::invalid(format!(
                "correspondence is {}x{} but feature map is {}x{}",
                corr.height, corr.width, features.height, features.width
            )));
        }
        if features.channels != self.channels {
            return Err(Error::invalid("feature channel count differs from mesh"));
        }
        for &(r, cell) in &corr.pairs {
            let step = moving_average_step(self.vertex_feature(r), features.cell(cell), self.momentum);
            if step.normalized.iter().any(|v| !v.is_finite()) || crate::features::norm(&step.blended) < 1e-12 {
                continue;
            }
            self.vertex_feature_mut(r).copy_from_slice(&step.normalized);
        }
        if !corr.background.is_empty() {
            let mut mean = vec![0.0; self.channels];
            for &cell in &corr.background {
                for (m, f) in mean.iter_mut().zip(features.cell(cell)) {
                    *m += f;
                }
            }
            mean.iter_mut().for_each(|m| *m /= corr.background.len() as f64);
            if crate::features::norm(&mean) > 1e-12 {
                if self.background_initialized {
                    let step = moving_average_step(&self.background_feature, &mean, self.background_momentum);
                    if crate::features::norm(&step.blended) > 1e-12 {
                        self.background_feature = step.normalized;
                    }
                } else {
                    normalize(&mut mean);
                    self.background_feature = mean;
                    self.background_initialized = true;
                }
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("neural-mesh");
        c.metadata.insert("category".into(), self.category.clone());
        c.metadata.insert("grid_density".into(), self.geometry.grid_density().to_string());
        c.metadata.insert("background_initialized".into(), self.background_initialized.to_string());
        let r = self.vertex_count();
        c.tensors.push(Tensor::new("dimensions", DType::F64, vec![3], self.geometry.dimensions().to_vec()));
        c.tensors.push(Tensor::new(
            "momentum",
            DType::F64,
            vec![2],
            vec![self.momentum, self.background_momentum],
        ));
        c.tensors.push(Tensor::new(
            "vertex_features",
            DType::F64,
            vec![r, self.channels],
            self.vertex_features.clone(),
        ));
        c.tensors.push(Tensor::new(
            "background_feature",
            DType::F64,
            vec![self.channels],
            self.background_feature.clone(),
        ));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("neural-mesh")?;
        let dims = c.tensor("dimensions")?;
        if dims.data.len() != 3 {
            return Err(Error::Decode("dimensions must have 3 entries".into()));
        }
        let density: usize = c.meta_parse("grid_density")?;
        let geometry = CuboidMesh::build([dims.data[0], dims.data[1], dims.data[2]], density)
            .map_err(|e| Error::Decode(e.to_string()))?;
        let features = c.tensor("vertex_features")?;
        let background = c.tensor("background_feature")?;
        let momentum = c.tensor("momentum")?;
        if features.dims.len() != 2 || features.dims[0] != geometry.vertex_count() {
            return Err(Error::Decode("vertex feature table does not match geometry".into()));
        }
        let channels = features.dims[1];
        if background.dims != [channels] || momentum.data.len() != 2 {
            return Err(Error::Decode("background feature or momentum has wrong shape".into()));
        }
        Ok(NeuralMesh {
            geometry,
            channels,
            vertex_features: features.data.clone(),
            background_feature: background.data.clone(),
            momentum: momentum.data[0],
            background_momentum: momentum.data[1],
            background_initialized: c.meta_parse("background_initialized")?,
            category: c.meta("category")?.to_owned(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

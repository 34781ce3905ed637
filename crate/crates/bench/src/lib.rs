//! Shared fixtures for the criterion benchmarks.

use meshpose_core::datagen::{generate_sample, GeneratorConfig, SceneSample};
use meshpose_core::features::{oracle_extract, ExtractorConfig};
use meshpose_core::{Camera, CuboidMesh, ExtractorParams, FeatureMap, NeuralMesh, Pose};

pub const STRIDE: usize = 4;

pub fn camera() -> Camera {
    Camera::centered(80.0, 64, 64).expect("valid camera")
}

pub fn mesh() -> NeuralMesh {
    let geometry = CuboidMesh::build([2.0, 1.0, 1.1], 5).expect("valid cuboid");
    NeuralMesh::new(geometry, 32, 0.1, "car", 7).expect("valid mesh")
}

pub fn pose() -> Pose {
    Pose::new(0.8, 0.3, 0.02, 4.2).expect("valid pose")
}

/// Oracle features of [`mesh`] at [`pose`] with noise 0.1.
pub fn oracle_map(mesh: &NeuralMesh) -> FeatureMap {
    oracle_extract(mesh, &pose(), &camera(), STRIDE, 0.1, &mesh.background_feature, 1)
}

pub fn extractor() -> ExtractorParams {
    ExtractorParams::init(ExtractorConfig::default(), 3).expect("valid extractor")
}

pub fn scene() -> SceneSample {
    generate_sample(&GeneratorConfig::default(), &["car".to_owned()], 0, 0).expect("valid sample")
}

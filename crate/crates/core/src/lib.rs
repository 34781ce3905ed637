//! Feature-level render-and-compare pose estimation with neural mesh models.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: poses, rotations, the pinhole camera, cuboid meshes and a
//!   z-buffered rasterizer.
//! * [`datagen`]: procedural synthetic scenes, domain shift, edge maps.
//! * [`features`]: the unit-norm feature map contract, a small trainable
//!   convolutional extractor and an oracle extractor for verification.
//! * [`neuralmesh`]: vertex feature storage with moving-average updates.
//! * [`losses`]: contrastive, reconstruction and domain-contrastive objectives.
//! * [`inference`]: multi-start gradient descent over pose.
//! * [`adaptation`]: synthetic pretraining, pseudo labels, domain adaptation.
//! * [`eval`]: geodesic accuracy metrics and reports.
//! * [`pipeline`]: the end-to-end orchestration used by the CLI.

pub mod adaptation;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod image;
pub mod inference;
pub mod losses;
pub mod neuralmesh;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
pub use features::{ExtractorParams, FeatureMap};
pub use geometry::{geodesic_distance, Camera, CuboidMesh, Pose, RenderResult, RotationMatrix};
pub use inference::{InferenceConfig, PoseEstimate};
pub use neuralmesh::NeuralMesh;

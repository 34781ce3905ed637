//! Rotation and pose math, the pinhole camera, cuboid meshes and the
//! z-buffered triangle rasterizer.

mod camera;
mod mesh;
mod pose;
mod raster;

pub use camera::Camera;
pub use mesh::{CuboidMesh, CuboidSide};
pub use pose::{
    geodesic_distance, geodesic_distance_matrices, pose_to_rotation, rotation_derivatives, Pose,
    RotationMatrix,
};
pub use raster::{rasterize, rasterize_triangles, RenderResult};

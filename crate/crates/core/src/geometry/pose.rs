use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Camera viewpoint on a sphere around the object.
///
/// The camera orbits the origin. `azimuth` turns about the world vertical
/// (+Y) axis, `elevation` tilts the camera toward the pole and `theta` spins
/// the image about the optical axis. At `(0, 0, 0, d)` the camera sits on the
/// +Z axis at distance `d`, looks at the origin, and image up is world up.
///
/// Camera frame: x right, y up, the camera looks down its own -z axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub azimuth: f64,
    pub elevation: f64,
    pub theta: f64,
    pub distance: f64,
}

impl Pose {
    /// Validated, canonicalized pose.
    pub fn new(azimuth: f64, elevation: f64, theta: f64, distance: f64) -> Result<Self> {
        let pose = Pose {
            azimuth,
            elevation,
            theta,
            distance,
        };
        pose.validate()?;
        Ok(pose.canonical())
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.azimuth, self.elevation, self.theta, self.distance];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose {self:?}")));
        }
        if self.distance <= 0.0 {
            return Err(Error::invalid(format!(
                "pose distance must be positive, got {}",
                self.distance
            )));
        }
        Ok(())
    }

    /// Maps the angles into azimuth ∈ [0, 2π), elevation ∈ [-π/2, π/2],
    /// theta ∈ (-π, π] without changing the rotation.
    pub fn canonical(&self) -> Pose {
        let mut azimuth = self.azimuth;
        let mut theta = self.theta;
        let mut elevation = wrap_pi(self.elevation);
        if elevation > PI / 2.0 {
            elevation = PI - elevation;
            azimuth += PI;
            theta += PI;
        } else if elevation < -PI / 2.0 {
            elevation = -PI - elevation;
            azimuth += PI;
            theta += PI;
        }
        let mut azimuth = azimuth.rem_euclid(TAU);
        if azimuth >= TAU {
            azimuth = 0.0;
        }
        Pose {
            azimuth,
            elevation,
            theta: wrap_pi(theta),
            distance: self.distance,
        }
    }

    /// World-to-camera rotation. Panics only on non-finite angles, which
    /// [`Pose::new`] rules out; use [`pose_to_rotation`] for unchecked input.
    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix(rotation_matrix(self.azimuth, self.elevation, self.theta))
    }

    /// Camera centre in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        self.distance * Vector3::new(ce * sa, se, ce * ca)
    }

    /// Transforms a world point into the camera frame.
    pub fn world_to_camera(&self, rotation: &RotationMatrix, p: &Vector3<f64>) -> Vector3<f64> {
        rotation.0 * p - Vector3::new(0.0, 0.0, self.distance)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.azimuth, self.elevation, self.theta, self.distance]
    }

    pub fn from_array(v: [f64; 4]) -> Pose {
        Pose {
            azimuth: v[0],
            elevation: v[1],
            theta: v[2],
            distance: v[3],
        }
    }
}

/// Wraps an angle into (-π, π].
fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rz(theta) · Rx(elevation) · Ry(-azimuth)`.
fn rotation_matrix(azimuth: f64, elevation: f64, theta: f64) -> Matrix3<f64> {
    rot_z(theta) * rot_x(elevation) * rot_y(-azimuth)
}

/// Partial derivatives of the world-to-camera rotation with respect to
/// azimuth, elevation and theta.
pub fn rotation_derivatives(pose: &Pose) -> [Matrix3<f64>; 3] {
    let rz = rot_z(pose.theta);
    let rx = rot_x(pose.elevation);
    let ry = rot_y(-pose.azimuth);
    [
        -(rz * rx * d_rot_y(-pose.azimuth)),
        rz * d_rot_x(pose.elevation) * ry,
        d_rot_z(pose.theta) * rx * ry,
    ]
}

pub fn pose_to_rotation(pose: &Pose) -> Result<RotationMatrix> {
    if ![pose.azimuth, pose.elevation, pose.theta]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::invalid(format!("non-finite pose {pose:?}")));
    }
    let c = pose.canonical();
    Ok(RotationMatrix(rotation_matrix(c.azimuth, c.elevation, c.theta)))
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation has non-finite entries"));
        }
        let orth = (m.transpose() * m - Matrix3::identity()).amax();
        if orth > Self::TOLERANCE {
            return Err(Error::invalid(format!(
                "matrix is not orthonormal (max |RᵀR - I| = {orth:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::invalid(format!(
                "matrix has determinant {det}, expected +1"
            )));
        }
        Ok(RotationMatrix(m))
    }

    /// Rodrigues' formula. `axis` need not be normalized but must be nonzero.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::invalid("axis-angle needs a nonzero axis and finite angle"));
        }
        let k = axis / n;
        let kx = k.cross_matrix();
        let (s, c) = angle.sin_cos();
        Ok(RotationMatrix(
            Matrix3::identity() + kx * s + kx * kx * (1.0 - c),
        ))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let cos = 0.5 * (m.trace() - 1.0);
        let v = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let sin = 0.5 * v.norm();
        // atan2 is well conditioned at both ends of the range where acos is not.
        sin.atan2(cos.clamp(-1.0, 1.0))
    }
}

/// Angle of the relative rotation `r1ᵀ r2`, in [0, π].
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    RotationMatrix(r1.0.transpose() * r2.0).angle()
}

/// [`geodesic_distance`] on raw matrices, validating both.
pub fn geodesic_distance_matrices(m1: &Matrix3<f64>, m2: &Matrix3<f64>) -> Result<f64> {
    let r1 = RotationMatrix::new(*m1)?;
    let r2 = RotationMatrix::new(*m2)?;
    Ok(geodesic_distance(&r1, &r2))
}

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One of the six sides of an axis-aligned cuboid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CuboidSide {
    NegX,
    PosX,
    NegY,
    PosY,
    NegZ,
    PosZ,
}

impl CuboidSide {
    pub const ALL: [CuboidSide; 6] = [
        CuboidSide::NegX,
        CuboidSide::PosX,
        CuboidSide::NegY,
        CuboidSide::PosY,
        CuboidSide::NegZ,
        CuboidSide::PosZ,
    ];

    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn sign(self) -> f64 {
        if self as usize % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn normal(self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis()] = self.sign();
        n
    }
}

/// Axis-aligned cuboid centred at the origin, with vertices on a regular
/// lattice over its surface and a triangulation of all six sides.
#[derive(Clone, Debug, PartialEq)]
pub struct CuboidMesh {
    dimensions: [f64; 3],
    grid_density: usize,
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_sides: Vec<CuboidSide>,
}

impl CuboidMesh {
    /// Builds the surface lattice with `grid_density` points per edge.
    /// `dimensions` are full side lengths along x, y, z.
    pub fn build(dimensions: [f64; 3], grid_density: usize) -> Result<Self> {
        if dimensions.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::invalid(format!(
                "cuboid dimensions must be positive, got {dimensions:?}"
            )));
        }
        if grid_density < 2 {
            return Err(Error::invalid(format!(
                "grid density must be at least 2, got {grid_density}"
            )));
        }
        let n = grid_density;
        let last = n - 1;
        let coord = |axis: usize, i: usize| -> f64 {
            // Exact endpoints so surface points satisfy |x| = lx/2 bit-exactly.
            let half = dimensions[axis] / 2.0;
            if i == 0 {
                -half
            } else if i == last {
                half
            } else {
                -half + dimensions[axis] * i as f64 / last as f64
            }
        };

        let mut index = HashMap::new();
        let mut vertices = Vec::with_capacity(n * n * n - (n - 2).pow(3));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let on_surface = [i, j, k].iter().any(|&c| c == 0 || c == last);
                    if on_surface {
                        index.insert([i, j, k], vertices.len());
                        vertices.push(Vector3::new(coord(0, i), coord(1, j), coord(2, k)));
                    }
                }
            }
        }

        let mut faces = Vec::new();
        let mut face_sides = Vec::new();
        for side in CuboidSide::ALL {
            let axis = side.axis();
            let fixed = if side.sign() < 0.0 { 0 } else { last };
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            let lattice = |s: usize, t: usize| {
                let mut c = [0usize; 3];
                c[axis] = fixed;
                c[a1] = s;
                c[a2] = t;
                index[&c]
            };
            for s in 0..last {
                for t in 0..last {
                    let q = [
                        lattice(s, t),
                        lattice(s + 1, t),
                        lattice(s + 1, t + 1),
                        lattice(s, t + 1),
                    ];
                    for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                        let e1 = vertices[tri[1]] - vertices[tri[0]];
                        let e2 = vertices[tri[2]] - vertices[tri[0]];
                        let outward = e1.cross(&e2).dot(&side.normal()) > 0.0;
                        faces.push(if outward { tri } else { [tri[0], tri[2], tri[1]] });
                        face_sides.push(side);
                    }
                }
            }
        }

        Ok(CuboidMesh {
            dimensions,
            grid_density,
            vertices,
            faces,
            face_sides,
        })
    }

    pub fn dimensions(&self) -> [f64; 3] {
        self.dimensions
    }

    pub fn grid_density(&self) -> usize {
        self.grid_density
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_side(&self, face: usize) -> CuboidSide {
        self.face_sides[face]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Sides the vertex lies on (one for side interiors, two on edges,
    /// three at corners).
    pub fn sides_of_vertex(&self, r: usize) -> Vec<CuboidSide> {
        let v = &self.vertices[r];
        CuboidSide::ALL
            .into_iter()
            .filter(|s| v[s.axis()] == s.sign() * self.dimensions[s.axis()] / 2.0)
            .collect()
    }

    /// Applies a vertex permutation: new vertex `i` is old vertex `perm[i]`.
    /// Used to check that losses do not depend on vertex labelling.
    pub fn permuted(&self, perm: &[usize]) -> Result<CuboidMesh> {
        if perm.len() != self.vertices.len() {
            return Err(Error::invalid("permutation length does not match vertex count"));
        }
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            if old >= perm.len() || inverse[old] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            inverse[old] = new;
        }
        Ok(CuboidMesh {
            dimensions: self.dimensions,
            grid_density: self.grid_density,
            vertices: perm.iter().map(|&o| self.vertices[o]).collect(),
            faces: self
                .faces
                .iter()
                .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
                .collect(),
            face_sides: self.face_sides.clone(),
        })
    }
}

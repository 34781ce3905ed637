mod pose {
    use meshpose_core::geometry::*;
    use nalgebra::{Matrix3, Vector3};
    use std::f64::consts::{PI, TAU};
    use proptest::prelude::*;

    fn pose(a: f64, e: f64, t: f64) -> Pose {
        Pose {
            azimuth: a,
            elevation: e,
            theta: t,
            distance: 5.0,
        }
    }

    #[test]
    fn anchor_pose_looks_down_minus_z() {
        let p = pose(0.0, 0.0, 0.0);
        let r = pose_to_rotation(&p).unwrap();
        assert!((r.matrix() - Matrix3::identity()).amax() < 1e-15);
        let c = p.camera_center();
        assert!((c - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
        // Origin maps straight ahead of the camera.
        let origin = p.world_to_camera(&r, &Vector3::zeros());
        assert_eq!(origin, Vector3::new(0.0, 0.0, -5.0));
        // World up stays image up.
        let up = p.world_to_camera(&r, &Vector3::new(0.0, 1.0, 0.0));
        assert!(up.y > 0.0 && up.x.abs() < 1e-12);
    }

    #[test]
    fn camera_center_maps_to_camera_origin() {
        for &(a, e, t) in &[(0.3, 0.2, 0.05), (4.0, -0.4, -0.07), (2.0, 1.2, 0.0)] {
            let p = pose(a, e, t);
            let r = p.rotation();
            let c = p.world_to_camera(&r, &p.camera_center());
            assert!(c.norm() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn azimuth_is_periodic() {
        let r1 = pose_to_rotation(&pose(1.0, 0.3, 0.1)).unwrap();
        let r2 = pose_to_rotation(&pose(1.0 + TAU, 0.3, 0.1)).unwrap();
        assert!((r1.matrix() - r2.matrix()).amax() < 1e-12);
    }

    #[test]
    fn half_turn_in_plane_is_pi_away() {
        let r1 = pose_to_rotation(&pose(0.7, 0.2, PI)).unwrap();
        let r2 = pose_to_rotation(&pose(0.7, 0.2, 0.0)).unwrap();
        assert!((geodesic_distance(&r1, &r2) - PI).abs() < 1e-9);
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        assert!(pose_to_rotation(&pose(f64::NAN, 0.0, 0.0)).is_err());
        assert!(Pose::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Pose::new(0.0, f64::INFINITY, 0.0, 1.0).is_err());
    }

    #[test]
    fn geodesic_identity_and_known_angle() {
        let r = pose_to_rotation(&pose(0.4, 0.1, -0.05)).unwrap();
        assert_eq!(geodesic_distance(&r, &r), 0.0);
        let z = RotationMatrix::from_axis_angle(Vector3::z(), PI / 6.0).unwrap();
        let d = geodesic_distance(&RotationMatrix::identity(), &z);
        assert!((d - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(geodesic_distance_matrices(&Matrix3::identity(), &m).is_err());
        let scaled = Matrix3::identity() * 1.01;
        assert!(RotationMatrix::new(scaled).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = pose(0.9, 0.4, 0.08);
        let d = rotation_derivatives(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut plus = p.to_array();
            let mut minus = p.to_array();
            plus[k] += h;
            minus[k] -= h;
            let fd = (Pose::from_array(plus).rotation().matrix()
                - Pose::from_array(minus).rotation().matrix())
                / (2.0 * h);
            assert!((fd - d[k]).amax() < 1e-8, "param {k}");
        }
    }

    proptest! {
        #[test]
        fn rotations_are_proper(a in -10.0..10.0f64, e in -3.0..3.0f64, t in -4.0..4.0f64) {
            let r = pose_to_rotation(&pose(a, e, t)).unwrap();
            prop_assert!(RotationMatrix::new(*r.matrix()).is_ok());
        }

        #[test]
        fn canonicalization_preserves_rotation(a in -10.0..10.0f64, e in -3.0..3.0f64, t in -4.0..4.0f64) {
            let raw = pose(a, e, t);
            let c = raw.canonical();
            prop_assert!((0.0..TAU).contains(&c.azimuth));
            prop_assert!(c.elevation.abs() <= PI / 2.0 + 1e-12);
            prop_assert!(c.theta > -PI && c.theta <= PI);
            let r1 = raw.rotation();
            let r2 = c.rotation();
            prop_assert!(geodesic_distance(&r1, &r2) < 1e-7);
        }

        #[test]
        fn geodesic_symmetric_and_triangle(
            a in proptest::array::uniform3(-4.0..4.0f64),
            b in proptest::array::uniform3(-4.0..4.0f64),
            c in proptest::array::uniform3(-4.0..4.0f64),
        ) {
            let ra = pose(a[0], a[1], a[2]).rotation();
            let rb = pose(b[0], b[1], b[2]).rotation();
            let rc = pose(c[0], c[1], c[2]).rotation();
            let ab = geodesic_distance(&ra, &rb);
            prop_assert!((ab - geodesic_distance(&rb, &ra)).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert!(geodesic_distance(&ra, &rc) <= ab + geodesic_distance(&rb, &rc) + 1e-6);
        }
    }
}

mod mesh {
    use meshpose_core::geometry::*;

    /// Counts lattice points of an n³ grid with at least one coordinate on
    /// the boundary, by brute enumeration.
    fn surface_lattice_count(n: usize) -> usize {
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if [i, j, k].iter().any(|&c| c == 0 || c == n - 1) {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(CuboidMesh::build([1.0; 3], 2).unwrap().vertex_count(), 8);
        assert_eq!(surface_lattice_count(3), 26);
        assert_eq!(CuboidMesh::build([1.0; 3], 3).unwrap().vertex_count(), 26);
        for n in 2..8 {
            let m = CuboidMesh::build([1.0, 2.0, 0.5], n).unwrap();
            assert_eq!(m.vertex_count(), surface_lattice_count(n));
            assert_eq!(m.faces().len(), 12 * (n - 1) * (n - 1));
        }
    }

    #[test]
    fn vertices_on_surface_and_unique() {
        for n in 2..7 {
            let m = CuboidMesh::build([2.0, 1.0, 1.0], n).unwrap();
            for v in m.vertices() {
                assert!(v.x.abs() == 1.0 || v.y.abs() == 0.5 || v.z.abs() == 0.5, "{v:?}");
                assert!(v.x.abs() <= 1.0 && v.y.abs() <= 0.5 && v.z.abs() <= 0.5);
            }
            for (a, va) in m.vertices().iter().enumerate() {
                for vb in &m.vertices()[a + 1..] {
                    assert!((va - vb).norm() > 1e-9);
                }
            }
        }
    }

    #[test]
    fn faces_valid_and_outward() {
        let m = CuboidMesh::build([1.5, 1.0, 0.7], 4).unwrap();
        for (fi, f) in m.faces().iter().enumerate() {
            assert!(f.iter().all(|&i| i < m.vertex_count()));
            let v = m.vertices();
            let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
            assert!(n.norm() > 0.0);
            assert!(n.dot(&m.face_side(fi).normal()) > 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(CuboidMesh::build([0.0, 1.0, 1.0], 3).is_err());
        assert!(CuboidMesh::build([1.0, -1.0, 1.0], 3).is_err());
        assert!(CuboidMesh::build([1.0, 1.0, 1.0], 1).is_err());
    }

    #[test]
    fn vertex_sides() {
        let m = CuboidMesh::build([1.0; 3], 3).unwrap();
        let mut hist = [0usize; 4];
        for r in 0..m.vertex_count() {
            hist[m.sides_of_vertex(r).len()] += 1;
        }
        // 6 side centres, 12 edge midpoints, 8 corners.
        assert_eq!(hist, [0, 6, 12, 8]);
    }
}

mod camera {
    use meshpose_core::geometry::*;
    use nalgebra::Vector3;

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Camera::new(0.0, 4.0, 4.0, 8, 8).is_err());
        assert!(Camera::new(10.0, 9.0, 4.0, 8, 8).is_err());
        assert!(Camera::new(10.0, 4.0, 4.0, 0, 8).is_err());
        assert!(Camera::centered(10.0, 8, 8).is_ok());
    }

    #[test]
    fn downscale_rounds_up() {
        let c = Camera::centered(60.0, 65, 64).unwrap().downscaled(4);
        assert_eq!((c.height, c.width), (17, 16));
        assert_eq!(c.focal_length, 15.0);
    }

    #[test]
    fn projection_and_jacobian_agree() {
        let cam = Camera::centered(50.0, 64, 64).unwrap();
        let p = Vector3::new(0.3, -0.2, -4.0);
        let (u, v, d) = cam.project(&p).unwrap();
        assert_eq!(d, 4.0);
        assert!((u - (32.0 + 50.0 * 0.3 / 4.0)).abs() < 1e-12);
        assert!((v - (32.0 + 50.0 * 0.2 / 4.0)).abs() < 1e-12);
        let j = cam.projection_jacobian(&p);
        let h = 1e-6;
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let (ua, va, _) = cam.project(&a).unwrap();
            let (ub, vb, _) = cam.project(&b).unwrap();
            assert!(((ua - ub) / (2.0 * h) - j[0][k]).abs() < 1e-6);
            assert!(((va - vb) / (2.0 * h) - j[1][k]).abs() < 1e-6);
        }
        assert!(cam.project(&Vector3::new(0.0, 0.0, 1.0)).is_none());
    }
}

mod raster {
    use meshpose_core::geometry::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn camera() -> Camera {
        Camera::centered(60.0, 64, 64).unwrap()
    }

    fn pose(a: f64, e: f64, t: f64, d: f64) -> Pose {
        Pose {
            azimuth: a,
            elevation: e,
            theta: t,
            distance: d,
        }
    }

    #[test]
    fn frontal_cube_is_predicted_square() {
        let mesh = CuboidMesh::build([1.0; 3], 4).unwrap();
        let cam = camera();
        let d = 4.0;
        let res = rasterize(&mesh, &pose(0.0, 0.0, 0.0, d), &cam);
        // Front side at depth d - 0.5 projects to a square of half-width f·0.5/(d-0.5).
        let half = cam.focal_length * 0.5 / (d - 0.5);
        let (lo, hi) = (cam.cx - half, cam.cx + half);
        for row in 0..cam.height {
            for col in 0..cam.width {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                let inside = x >= lo && x <= hi && y >= lo && y <= hi;
                assert_eq!(res.foreground_mask[row * cam.width + col], inside, "({row},{col})");
            }
        }
        let expected_side = ((hi - 0.5).floor() - (lo - 0.5).ceil() + 1.0) as usize;
        assert_eq!(res.foreground_count(), expected_side * expected_side);
    }

    #[test]
    fn behind_camera_is_empty() {
        let mesh = CuboidMesh::build([1.0; 3], 3).unwrap();
        let behind: Vec<Vector3<f64>> = mesh
            .vertices()
            .iter()
            .map(|v| v + Vector3::new(0.0, 0.0, 50.0))
            .collect();
        let res = rasterize_triangles(&behind, mesh.faces(), &pose(0.0, 0.0, 0.0, 4.0), &camera());
        assert!(res.is_empty());
        assert!(res.vertex_pixel.iter().all(|v| v.is_none()));
    }

    #[test]
    fn degenerate_triangles_are_skipped() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let res = rasterize_triangles(&verts, &[[0, 1, 2]], &pose(0.0, 0.0, 0.0, 4.0), &camera());
        assert!(res.is_empty());
    }

    #[test]
    fn farther_mask_is_contained() {
        let mesh = CuboidMesh::build([1.6, 0.8, 1.0], 4).unwrap();
        let cam = camera();
        for &(a, e, t) in &[(0.0, 0.0, 0.0), (0.7, 0.3, 0.05), (3.5, -0.2, -0.08), (5.0, 1.0, 0.0)] {
            let near = rasterize(&mesh, &pose(a, e, t, 3.0), &cam);
            let far = rasterize(&mesh, &pose(a, e, t, 6.0), &cam);
            assert!(far.foreground_count() < near.foreground_count());
            for i in 0..far.foreground_mask.len() {
                assert!(!far.foreground_mask[i] || near.foreground_mask[i]);
            }
        }
    }

    #[test]
    fn frontal_visibility_is_front_side() {
        let mesh = CuboidMesh::build([1.0; 3], 4).unwrap();
        let res = rasterize(&mesh, &pose(0.0, 0.0, 0.0, 4.0), &camera());
        for r in 0..mesh.vertex_count() {
            let front = mesh.vertices()[r].z == 0.5;
            assert_eq!(res.vertex_pixel[r].is_some(), front, "vertex {r}");
        }
    }

    fn visible_interior_sides(mesh: &CuboidMesh, res: &RenderResult) -> usize {
        let mut sides = std::collections::BTreeSet::new();
        for r in 0..mesh.vertex_count() {
            let s = mesh.sides_of_vertex(r);
            if s.len() == 1 && res.vertex_pixel[r].is_some() {
                sides.insert(s[0]);
            }
        }
        sides.len()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn render_invariants(
            a in 0.0..6.28f64, e in -1.5..1.5f64, t in -0.5..0.5f64, d in 3.0..8.0f64,
        ) {
            let mesh = CuboidMesh::build([1.4, 0.9, 1.1], 5).unwrap();
            let cam = camera();
            let p = pose(a, e, t, d);
            let res = rasterize(&mesh, &p, &cam);
            prop_assert!(visible_interior_sides(&mesh, &res) <= 3);
            for i in 0..res.foreground_mask.len() {
                prop_assert_eq!(res.foreground_mask[i], res.pixel_vertex[i].is_some());
                prop_assert_eq!(res.foreground_mask[i], res.depth[i].is_finite());
            }
            for r in 0..mesh.vertex_count() {
                if let Some((row, col)) = res.vertex_pixel[r] {
                    let (u, v, depth) = res.projected[r].unwrap();
                    prop_assert!(res.foreground_mask[row * cam.width + col]);
                    let surface = res.surface_depth_at(mesh.faces(), u, v).unwrap();
                    prop_assert!((depth - surface).abs() <= res.depth_tolerance);
                }
            }
            let again = rasterize(&mesh, &p, &cam);
            prop_assert_eq!(&again, &res);
        }
    }
}

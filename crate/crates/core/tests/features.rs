mod adam {
    use meshpose_core::features::*;

    #[test]
    fn minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g, 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }
}

mod oracle {
    use meshpose_core::features::*;
    use meshpose_core::geometry::{rasterize, CuboidMesh};
    use meshpose_core::{Camera, NeuralMesh, Pose};

    #[test]
    fn noiseless_render_copies_vertex_features() {
        let mesh = NeuralMesh::new(CuboidMesh::build([1.2, 0.8, 1.0], 4).unwrap(), 6, 0.1, "x", 1).unwrap();
        let cam = Camera::centered(60.0, 64, 64).unwrap();
        let pose = Pose::new(0.8, 0.3, 0.0, 4.0).unwrap();
        let fm = oracle_extract(&mesh, &pose, &cam, 4, 0.0, &mesh.background_feature, 0);
        let render = rasterize(&mesh.geometry, &pose, &cam.downscaled(4));
        for (cell, v) in render.pixel_vertex.iter().enumerate() {
            let expected = match v {
                Some(r) => mesh.vertex_feature(*r as usize),
                None => &mesh.background_feature[..],
            };
            assert_eq!(fm.cell(cell), expected);
        }
        assert!(fm.max_norm_error() < 1e-6);
        let noisy = oracle_extract(&mesh, &pose, &cam, 4, 0.5, &mesh.background_feature, 3);
        assert!(noisy.max_norm_error() < 1e-6);
        assert_ne!(noisy, fm);
        assert_eq!(noisy, oracle_extract(&mesh, &pose, &cam, 4, 0.5, &mesh.background_feature, 3));
    }
}

mod cnn {
    use meshpose_core::checkpoint::Container;
    use meshpose_core::features::*;
    use meshpose_core::image::Image;
    use meshpose_core::seed;
    use rand::Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }


    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = seed::rng(seed);
        let data = (0..h * w * 3).map(|_| rng.gen::<f32>()).collect();
        Image::from_data(h, w, data).unwrap()
    }

    fn small_config() -> ExtractorConfig {
        ExtractorConfig {
            hidden_channels: vec![4, 5],
            kernel_sizes: vec![3, 3, 3],
            feature_channels: 6,
        }
    }

    #[test]
    fn output_shape_and_norm() {
        let params = ExtractorParams::init(ExtractorConfig::default(), 1).unwrap();
        let img = random_image(30, 37, 2);
        let fm = params.extract(&img).unwrap();
        assert_eq!((fm.height, fm.width, fm.channels, fm.stride), (8, 10, 32, 4));
        assert!(fm.max_norm_error() < 1e-6);
        assert_eq!(fm, params.extract(&img).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = ExtractorParams::init(small_config(), 1).unwrap();
        let bad = Image {
            height: 4,
            width: 4,
            data: vec![0.0; 10],
        };
        assert!(params.extract(&bad).is_err());
        let img = random_image(8, 8, 3);
        let (_, cache) = params.forward(&img).unwrap();
        assert!(params.backward(&cache, &[0.0; 5]).is_err());
        let mut cfg = small_config();
        cfg.kernel_sizes = vec![4, 3, 3];
        assert!(ExtractorParams::init(cfg, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let params = ExtractorParams::init(small_config(), 4).unwrap();
        let img = random_image(12, 12, 5);
        let fm = params.extract(&img).unwrap();
        let g = params.extract_gradients(&img, &vec![0.0; fm.data.len()]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn radial_upstream_gives_zero_gradient() {
        // The normalized output can only move tangentially to the sphere.
        let params = ExtractorParams::init(small_config(), 6).unwrap();
        let img = random_image(12, 12, 7);
        let fm = params.extract(&img).unwrap();
        let g = params.extract_gradients(&img, &fm.data).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn shift_by_stride_shifts_features() {
        let params = ExtractorParams::init(ExtractorConfig::default(), 8).unwrap();
        let (h, w) = (40, 64);
        let base = random_image(h, w, 9);
        let s = params.stride();
        let mut shifted = Image::filled(h, w, [0.5; 3]);
        for r in 0..h {
            for c in s..w {
                shifted.set_pixel(r, c, base.pixel(r, c - s));
            }
        }
        let fa = params.extract(&base).unwrap();
        let fb = params.extract(&shifted).unwrap();
        // Receptive field spans ~3 cells; stay clear of both borders.
        let mut compared = 0;
        for r in 0..fa.height {
            for c in 3..fa.width - 4 {
                let a = fa.cell_at(r, c);
                let b = fb.cell_at(r, c + 1);
                let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "cell ({r},{c}) differs by {err}");
                compared += 1;
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = ExtractorParams::init(small_config(), 10).unwrap();
        let img = random_image(11, 13, 11);
        let fm = params.extract(&img).unwrap();
        let mut rng = seed::rng(12);
        let upstream: Vec<f64> = (0..fm.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad = params.extract_gradients(&img, &upstream).unwrap();
        for trial in 0..20 {
            let dir: Vec<f64> = (0..params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let objective = |sign: f64| {
                let mut p = params.clone();
                for (v, d) in p.values_mut().iter_mut().zip(&dir) {
                    *v += sign * h * d;
                }
                dot(&p.extract(&img).unwrap().data, &upstream)
            };
            let fd = (objective(1.0) - objective(-1.0)) / (2.0 * h);
            let analytic = dot(&grad, &dir);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
            assert!(rel < 1e-3, "trial {trial}: fd {fd} analytic {analytic}");
        }
    }

    #[test]
    fn checkpoint_round_trip_after_rounding() {
        let mut params = ExtractorParams::init(small_config(), 13).unwrap();
        params.round_to_f32();
        let back = ExtractorParams::from_container(&Container::decode(&params.to_container().encode()).unwrap()).unwrap();
        assert_eq!(back, params);
    }
}

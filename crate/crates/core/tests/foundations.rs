mod seed {
    use meshpose_core::seed::*;

    #[test]
    fn derivation_separates_labels_and_indices() {
        let a = derive(7, "car", 0);
        assert_ne!(a, derive(7, "car", 1));
        assert_ne!(a, derive(7, "truck", 0));
        assert_ne!(a, derive(8, "car", 0));
        assert_eq!(a, derive(7, "car", 0));
    }
}

mod image {
    use meshpose_core::image::*;

    #[test]
    fn encode_decode() {
        let mut img = Image::filled(3, 2, [0.1, 0.5, 0.9]);
        img.set_pixel(2, 1, [1.0, 0.0, 0.25]);
        let bytes = img.encode();
        assert_eq!(&bytes[..8], IMG_MAGIC);
        assert_eq!(bytes.len(), 20 + 3 * 2 * 3 * 4);
        assert_eq!(Image::decode(&bytes).unwrap(), img);
        assert!(Image::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}

mod checkpoint {
    use meshpose_core::checkpoint::*;
    use meshpose_core::Error;

    fn sample() -> Container {
        let mut c = Container::new("test");
        c.metadata.insert("category".into(), "car".into());
        c.tensors.push(Tensor::new("a", DType::F32, vec![2, 2], vec![1.0, -2.5, 0.25, 3.0]));
        c.tensors.push(Tensor::new("b", DType::F64, vec![3], vec![0.1, 0.2, 1e-300]));
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Container::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = sample().encode();
        for n in 0..bytes.len() {
            assert!(Container::decode(&bytes[..n]).is_err(), "prefix {n}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Container::decode(&padded).is_err());
    }

    #[test]
    fn future_version_names_both() {
        let mut bytes = sample().encode();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Container::decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 7, expected: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        assert_eq!(content_hash(b"abc"), content_hash(b"abc"));
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
        assert_eq!(content_hash(b"").len(), 64);
    }
}

mod config {
    use meshpose_core::config::*;
    use meshpose_core::Error;
    use std::path::PathBuf;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn schema_matches_defaults() {
        let parsed = RunConfig::from_toml(CONFIG_SCHEMA).unwrap();
        assert_eq!(parsed, RunConfig::default().with_derived_seeds());
        assert_eq!(RunConfig::from_toml("").unwrap(), parsed);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_toml("[train]\nlearnin_rate = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("learnin_rate"), "{err}");
        let err = RunConfig::from_toml("colour = 1\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["[train]\ntau = 1.5\n", "categories = [\"boat\"]\n", "[mesh]\nmomentum = 0.0\n"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn environment_overrides_sections_and_top_level() {
        let c = RunConfig::from_toml_with_env(
            "[train]\ntau = 0.5\n",
            env(&[
                ("MESHPOSE_TRAIN__TAU", "0.75"),
                ("MESHPOSE_SEED", "9"),
                ("MESHPOSE_OUTPUT_DIR", "elsewhere"),
                ("MESHPOSE_SPLITS__TARGET_TEST_PER_CATEGORY", "3"),
                ("HOME", "/root"),
            ]),
        )
        .unwrap();
        assert_eq!(c.train.tau, 0.75);
        assert_eq!(c.seed, 9);
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(c.splits.target_test_per_category, 3);
        let err = RunConfig::from_toml_with_env("", env(&[("MESHPOSE_TRAIN__NOPE", "1")])).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn seeds_derive_from_the_master_seed() {
        let a = RunConfig::from_toml("seed = 1\n").unwrap();
        let b = RunConfig::from_toml("seed = 2\n").unwrap();
        assert_ne!(a.generator.master_seed, b.generator.master_seed);
        assert_ne!(a.train.seed, b.train.seed);
        assert_eq!(a, RunConfig::from_toml(&a.to_toml().unwrap()).unwrap());
    }
}

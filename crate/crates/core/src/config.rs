//! The unified run configuration: one TOML file with a section per
//! component, validated on load, with environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{MeshConfig, TrainConfig};
use crate::datagen::{known_categories, GeneratorConfig, ShiftConfig};
use crate::features::ExtractorConfig;
use crate::inference::InferenceConfig;
use crate::{seed, Error, Result};

/// Prefix of environment overrides: `MESHPOSE_<SECTION>__<KEY>=<value>`
/// sets `[section] key`, `MESHPOSE_<KEY>` a top-level key. Values are read
/// as TOML (`0.5`, `true`, `[1, 2]`) and fall back to plain strings.
pub const ENV_PREFIX: &str = "MESHPOSE_";

/// Sizes of the splits the pipeline generates besides the synthetic
/// training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Unlabelled shifted-domain images per category used for adaptation.
    pub target_pool_per_category: usize,
    /// Shifted-domain test images per category.
    pub target_test_per_category: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            target_pool_per_category: 250,
            target_test_per_category: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Extra accuracy thresholds in degrees, reported next to π/6 and π/18.
    pub extra_thresholds_degrees: Vec<f64>,
    /// Largest accuracy drop that report comparison tolerates.
    pub accuracy_tolerance: f64,
    pub median_tolerance_degrees: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            extra_thresholds_degrees: Vec::new(),
            accuracy_tolerance: 0.02,
            median_tolerance_degrees: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. The seeds of the generator, shift and training sections
    /// are derived from it and overwrite whatever those sections say.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub categories: Vec<String>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub generator: GeneratorConfig,
    pub shift: ShiftConfig,
    pub splits: SplitConfig,
    pub extractor: ExtractorConfig,
    pub mesh: MeshConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 2024,
            output_dir: PathBuf::from("runs/default"),
            categories: vec!["car".into(), "truck".into()],
            threads: 0,
            generator: GeneratorConfig::default(),
            shift: ShiftConfig::default(),
            splits: SplitConfig::default(),
            extractor: ExtractorConfig::default(),
            mesh: MeshConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// The default configuration with every key documented.
pub const CONFIG_SCHEMA: &str = include_str!("config_schema.toml");

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn parse_env_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Applies `MESHPOSE_*` overrides from `vars` to a parsed config table.
pub fn apply_overrides<I>(table: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let parts: Vec<&str> = path.split("__").collect();
        let value = parse_env_value(&raw);
        match parts.as_slice() {
            [k] if !k.is_empty() => {
                table.insert((*k).to_owned(), value);
            }
            [section, k] if !section.is_empty() && !k.is_empty() => {
                let entry = table
                    .entry((*section).to_owned())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                match entry {
                    toml::Value::Table(t) => {
                        t.insert((*k).to_owned(), value);
                    }
                    _ => return Err(config_error(format!("{key}: `{section}` is not a section"))),
                }
            }
            _ => return Err(config_error(format!("{key}: expected {ENV_PREFIX}<SECTION>__<KEY>"))),
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies the given environment overrides, derives the
    /// section seeds and validates.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(config_error)?;
        apply_overrides(&mut table, env)?;
        let config: RunConfig = toml::Value::Table(table).try_into().map_err(config_error)?;
        let config = config.with_derived_seeds();
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Reads a config file with the process environment's overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_env(&text, std::env::vars())
            .map_err(|e| config_error(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))
    }

    /// Built-in defaults with the process environment's overrides.
    pub fn load_default() -> Result<Self> {
        Self::from_toml_with_env("", std::env::vars())
    }

    pub fn with_derived_seeds(mut self) -> Self {
        // 63 bits, so the config stays representable as TOML integers.
        let derive = |label| seed::derive(self.seed, label, 0) >> 1;
        self.generator.master_seed = derive("generator");
        self.shift.seed = derive("shift");
        self.train.seed = derive("train");
        self
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| config_error(format!("[{section}] {e}")));
        if self.categories.is_empty() {
            return Err(config_error("categories must not be empty"));
        }
        let known = known_categories();
        for c in &self.categories {
            if !known.iter().any(|k| k == c) {
                return Err(config_error(format!("unknown category `{c}` (known: {})", known.join(", "))));
            }
        }
        let mut sorted = self.categories.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.categories.len() {
            return Err(config_error("categories must be distinct"));
        }
        wrap("generator", self.generator.validate())?;
        wrap("shift", self.shift.validate())?;
        wrap("extractor", self.extractor.validate())?;
        wrap("train", self.train.validate())?;
        wrap("inference", self.inference.validate())?;
        if self.mesh.grid_density < 2 {
            return Err(config_error("[mesh] grid_density must be at least 2"));
        }
        for (k, m) in [("momentum", self.mesh.momentum), ("background_momentum", self.mesh.background_momentum)] {
            if !(m > 0.0 && m <= 1.0) {
                return Err(config_error(format!("[mesh] {k} {m} outside (0, 1]")));
            }
        }
        if self.generator.image_size % self.extractor.stride() != 0 {
            return Err(config_error(format!(
                "image_size {} is not a multiple of the extractor stride {}",
                self.generator.image_size,
                self.extractor.stride()
            )));
        }
        if self.eval.extra_thresholds_degrees.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(config_error("[eval] thresholds must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_error)
    }

    /// Extra thresholds in radians.
    pub fn eval_thresholds(&self) -> Vec<f64> {
        self.eval.extra_thresholds_degrees.iter().map(|d| d.to_radians()).collect()
    }
}

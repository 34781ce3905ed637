//! End-to-end orchestration: generate → pretrain → adapt → infer → eval.
//!
//! Every phase leaves its artifacts under the run directory and a marker in
//! `phases/`; a rerun with the same configuration skips finished phases and
//! reloads their outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{
    adapt_unsupervised, finetune_fewshot, predict, pretrain_synthetic, select_annotated, AnnotationBudget, Model,
    PseudoLabel, TrainLog, TrainSample,
};
use crate::config::RunConfig;
use crate::datagen::{generate_dataset, generate_shifted, write_dataset, Dataset, GeneratorConfig, SceneSample};
use crate::eval::{compare_reports, evaluate_run, write_predictions, EvalReport, PredictionRecord, ReportDiff};
use crate::{seed, Error, Result};

pub const PHASES: [&str; 5] = ["generate", "pretrain", "adapt", "infer", "eval"];

pub const TRAIN_SPLIT: &str = "train";
pub const POOL_SPLIT: &str = "target_pool";
pub const TEST_SPLIT: &str = "target_test";

/// Layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_path_buf() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn model(&self, stage: &str) -> PathBuf {
        self.root.join("models").join(stage)
    }
    pub fn log(&self, phase: &str) -> PathBuf {
        self.root.join("logs").join(format!("{phase}.jsonl"))
    }
    pub fn pseudo_labels(&self, round: usize) -> PathBuf {
        self.root.join("pseudo_labels").join(format!("round_{round}.jsonl"))
    }
    pub fn predictions(&self, stage: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{stage}.jsonl"))
    }
    pub fn report_dir(&self, stage: &str) -> PathBuf {
        self.root.join("reports").join(stage)
    }
    pub fn comparison(&self) -> PathBuf {
        self.root.join("reports").join("comparison.json")
    }
    pub fn marker(&self, phase: &str) -> PathBuf {
        self.root.join("phases").join(format!("{phase}.done"))
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("run.json")
    }
}

/// Writes `body`, creating parent directories.
pub fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i)?);
        out.push('\n');
    }
    write_file(path, out)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// SHA-256 of every file in `dir`, keyed by its path relative to `base`.
pub fn checkpoint_hashes(dir: &Path, base: &Path) -> Result<BTreeMap<String, String>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    files.retain(|f| f.is_file());
    files.sort();
    let mut out = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(base).unwrap_or(&f).to_string_lossy().into_owned();
        out.insert(rel, file_sha256(&f)?);
    }
    Ok(out)
}

/// The three splits of a run, in memory.
pub struct Splits {
    pub train: Vec<SceneSample>,
    pub pool: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
}

fn split_generator(config: &RunConfig, label: &str, per_category: usize) -> GeneratorConfig {
    GeneratorConfig {
        samples_per_category: per_category,
        master_seed: seed::derive(config.generator.master_seed, label, 0) >> 1,
        ..config.generator.clone()
    }
}

/// Synthetic training images plus the shifted-domain pool and test split,
/// each drawn with its own seed.
pub fn generate_splits(config: &RunConfig) -> Result<Splits> {
    let train = generate_dataset(&config.generator, &config.categories)?;
    let shift_for = |label: &str| crate::datagen::ShiftConfig {
        seed: seed::derive(config.shift.seed, label, 0) >> 1,
        ..config.shift.clone()
    };
    let pool = generate_shifted(
        &split_generator(config, POOL_SPLIT, config.splits.target_pool_per_category),
        &shift_for(POOL_SPLIT),
        &config.categories,
    )?;
    let test = generate_shifted(
        &split_generator(config, TEST_SPLIT, config.splits.target_test_per_category),
        &shift_for(TEST_SPLIT),
        &config.categories,
    )?;
    Ok(Splits { train, pool, test })
}

pub fn write_splits(root: &Path, splits: &Splits, force: bool) -> Result<Dataset> {
    write_dataset(
        root,
        &[(TRAIN_SPLIT, &splits.train), (POOL_SPLIT, &splits.pool), (TEST_SPLIT, &splits.test)],
        force,
    )?;
    Dataset::open(root)
}

/// Loads one split as training samples, with or without its poses.
pub fn load_split(dataset: &Dataset, split: &str, labeled: bool) -> Result<Vec<TrainSample>> {
    use rayon::prelude::*;
    dataset
        .split(split)
        .par_iter()
        .map(|e| {
            Ok(TrainSample {
                id: e.id.clone(),
                category: e.category.clone(),
                image: dataset.load_image(e)?,
                camera: e.camera,
                pose: labeled.then_some(e.pose),
            })
        })
        .collect()
}

pub fn write_train_log(paths: &RunPaths, phase: &str, log: &TrainLog) -> Result<()> {
    write_file(&paths.log(phase), log.to_jsonl()?)?;
    for (round, labels) in log.pseudo_labels.iter().enumerate() {
        write_jsonl::<PseudoLabel>(&paths.pseudo_labels(round), labels)?;
    }
    Ok(())
}

/// Predictions for every sample, failed estimates excluded (and logged).
pub fn predict_records(model: &Model, samples: &[TrainSample], config: &RunConfig) -> Result<Vec<PredictionRecord>> {
    let start = Instant::now();
    let estimates = predict(model, samples, &config.inference)?;
    let per_sample = start.elapsed().as_secs_f64() * 1e3 / samples.len().max(1) as f64;
    let mut out = Vec::new();
    for (s, e) in samples.iter().zip(estimates) {
        match e {
            Ok(e) => out.push(PredictionRecord::new(&s.id, &s.category, &e, per_sample)),
            Err(err) => log::warn!("{}: {err}", s.id),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub generator: u64,
    pub shift: u64,
    pub train: u64,
}

/// `run.json`: enough to reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub seeds: SeedRecord,
    pub dataset_hash: Option<String>,
    /// SHA-256 of every checkpoint file, keyed by path relative to the run.
    pub checkpoints: BTreeMap<String, String>,
    pub phases_completed: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config: config.clone(),
            seeds: SeedRecord {
                master: config.seed,
                generator: config.generator.master_seed,
                shift: config.shift.seed,
                train: config.train.seed,
            },
            dataset_hash: None,
            checkpoints: BTreeMap::new(),
            phases_completed: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub root: PathBuf,
    pub pretrained: EvalReport,
    pub adapted: EvalReport,
    pub comparison: ReportDiff,
    pub dataset_hash: String,
    /// Phases skipped because an earlier run had finished them.
    pub skipped: Vec<String>,
}

struct Runner<'a> {
    config: &'a RunConfig,
    paths: RunPaths,
    manifest: RunManifest,
    skipped: Vec<String>,
}

impl Runner<'_> {
    fn done(&self, phase: &str) -> bool {
        self.paths.marker(phase).exists()
    }

    fn finish(&mut self, phase: &str) -> Result<()> {
        write_file(&self.paths.marker(phase), phase)?;
        if !self.manifest.phases_completed.iter().any(|p| p == phase) {
            self.manifest.phases_completed.push(phase.to_owned());
        }
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        write_file(&self.paths.manifest(), serde_json::to_string_pretty(&self.manifest)?)
    }

    fn record_checkpoints(&mut self, stage: &str) -> Result<()> {
        let hashes = checkpoint_hashes(&self.paths.model(stage), &self.paths.root)?;
        self.manifest.checkpoints.extend(hashes);
        Ok(())
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("phase {name}");
        f(self).map_err(|e| Error::Phase {
            phase: name.to_owned(),
            source: Box::new(e),
        })
    }
}

/// The configuration as recorded in reports. The thread count is left out:
/// it never changes results.
pub fn config_echo(config: &RunConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(config)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("threads");
    }
    Ok(v)
}

fn same_run(a: &RunConfig, b: &RunConfig) -> bool {
    RunConfig { threads: 0, ..a.clone() } == RunConfig { threads: 0, ..b.clone() }
}

/// Runs every phase under `config.output_dir`. With `force` the run
/// directory's phase markers are discarded and every phase reruns; without
/// it, finished phases are skipped, and a run directory created with a
/// different configuration is refused.
pub fn run_pipeline(config: &RunConfig, force: bool) -> Result<PipelineOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline_inner(config, force))
}

fn run_pipeline_inner(config: &RunConfig, force: bool) -> Result<PipelineOutcome> {
    config.validate()?;
    let paths = RunPaths::new(&config.output_dir);
    let mut manifest = RunManifest::new(config);
    if paths.manifest().exists() {
        let previous = RunManifest::read(&paths.manifest())?;
        if force {
            let dir = paths.root.join("phases");
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        } else if !same_run(&previous.config, config) {
            return Err(Error::OutputExists(paths.root.clone()));
        } else {
            manifest = previous;
        }
    }
    let mut run = Runner {
        config,
        paths,
        manifest,
        skipped: Vec::new(),
    };
    run.save_manifest()?;

    let dataset = run.phase("generate", |r| {
        if r.done("generate") {
            r.skipped.push("generate".into());
            return Dataset::open(&r.paths.dataset());
        }
        let splits = generate_splits(r.config)?;
        // No marker means no finished dataset, so stale files are replaced.
        let ds = write_splits(&r.paths.dataset(), &splits, true)?;
        r.manifest.dataset_hash = Some(ds.content_hash()?);
        r.finish("generate")?;
        Ok(ds)
    })?;

    let train = load_split(&dataset, TRAIN_SPLIT, true)?;

    let pretrained = run.phase("pretrain", |r| {
        let dir = r.paths.model("pretrained");
        if r.done("pretrain") {
            r.skipped.push("pretrain".into());
            return Model::load(&dir, &r.config.categories);
        }
        let (model, log) = pretrain_synthetic(&train, &r.config.categories, &r.config.extractor, &r.config.mesh, &r.config.train)?;
        model.save(&dir)?;
        write_train_log(&r.paths, "pretrain", &log)?;
        r.record_checkpoints("pretrained")?;
        r.finish("pretrain")?;
        // Checkpoints store f32; continue from exactly what a resumed run loads.
        Model::load(&dir, &r.config.categories)
    })?;

    let adapted = run.phase("adapt", |r| {
        let dir = r.paths.model("adapted");
        if r.done("adapt") {
            r.skipped.push("adapt".into());
            return Model::load(&dir, &r.config.categories);
        }
        let (model, log) = adapt_phase(r.config, &dataset, &pretrained, &train)?;
        model.save(&dir)?;
        write_train_log(&r.paths, "adapt", &log)?;
        r.record_checkpoints("adapted")?;
        r.finish("adapt")?;
        Model::load(&dir, &r.config.categories)
    })?;

    let test = load_split(&dataset, TEST_SPLIT, false)?;
    let (pred_pre, pred_ad) = run.phase("infer", |r| {
        let (p, a) = (r.paths.predictions("pretrained"), r.paths.predictions("adapted"));
        if r.done("infer") {
            r.skipped.push("infer".into());
            return Ok((crate::eval::read_predictions(&p)?, crate::eval::read_predictions(&a)?));
        }
        let pre = predict_records(&pretrained, &test, r.config)?;
        let ad = predict_records(&adapted, &test, r.config)?;
        for (path, recs) in [(&p, &pre), (&a, &ad)] {
            if let Some(d) = path.parent() {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            write_predictions(path, recs)?;
        }
        r.finish("infer")?;
        Ok((pre, ad))
    })?;

    let (pretrained_report, adapted_report, comparison) = run.phase("eval", |r| {
        let entries: Vec<_> = dataset.split(TEST_SPLIT).into_iter().cloned().collect();
        let echo = config_echo(r.config)?;
        let thresholds = r.config.eval_thresholds();
        let pre = evaluate_run(&pred_pre, &entries, &thresholds, echo.clone())?;
        let ad = evaluate_run(&pred_ad, &entries, &thresholds, echo)?;
        pre.write(&r.paths.report_dir("pretrained"))?;
        ad.write(&r.paths.report_dir("adapted"))?;
        let cmp = compare_reports(&pre, &ad, r.config.eval.accuracy_tolerance, r.config.eval.median_tolerance_degrees);
        write_file(&r.paths.comparison(), serde_json::to_string_pretty(&cmp)?)?;
        if r.done("eval") {
            r.skipped.push("eval".into());
        } else {
            r.finish("eval")?;
        }
        Ok((pre, ad, cmp))
    })?;

    let dataset_hash = match &run.manifest.dataset_hash {
        Some(h) => h.clone(),
        None => {
            let h = dataset.content_hash()?;
            run.manifest.dataset_hash = Some(h.clone());
            run.save_manifest()?;
            h
        }
    };
    Ok(PipelineOutcome {
        root: run.paths.root.clone(),
        pretrained: pretrained_report,
        adapted: adapted_report,
        comparison,
        dataset_hash,
        skipped: run.skipped,
    })
}

/// Unsupervised adaptation on the target pool, or few-shot fine-tuning when
/// the configuration asks for annotated target images.
pub fn adapt_phase(config: &RunConfig, dataset: &Dataset, model: &Model, synthetic: &[TrainSample]) -> Result<(Model, TrainLog)> {
    let budget = config.train.fewshot_annotations;
    if budget == AnnotationBudget::Count(0) {
        let pool = load_split(dataset, POOL_SPLIT, false)?;
        return adapt_unsupervised(model, &pool, synthetic, &config.train, &config.inference);
    }
    let labeled_pool = load_split(dataset, POOL_SPLIT, true)?;
    let labeled = select_annotated(&labeled_pool, budget);
    let unlabeled: Vec<TrainSample> = labeled_pool
        .into_iter()
        .map(|s| TrainSample { pose: None, ..s })
        .collect();
    finetune_fewshot(model, &labeled, &unlabeled, synthetic, &config.train, &config.inference)
}

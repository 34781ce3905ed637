use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use meshpose_core::adaptation::{
    adapt_unsupervised, finetune_fewshot, generate_pseudo_labels, pretrain_synthetic, select_annotated, AnnotationBudget,
    BudgetKeyword, Model,
};
use meshpose_core::config::{RunConfig, CONFIG_SCHEMA};
use meshpose_core::datagen::{read_manifest, Dataset};
use meshpose_core::eval::{compare_reports, evaluate_run, read_predictions, write_predictions, EvalReport};
use meshpose_core::pipeline::{
    checkpoint_hashes, generate_splits, load_split, predict_records, run_pipeline, write_file, write_splits,
    write_train_log, RunManifest, RunPaths, POOL_SPLIT, TRAIN_SPLIT,
};
use meshpose_core::{Error, ExtractorParams, NeuralMesh};

const ENV_HELP: &str = "Every configuration key can be overridden from the environment:\n  \
MESHPOSE_<SECTION>__<KEY>=<value>   e.g. MESHPOSE_TRAIN__TAU=0.8\n  \
MESHPOSE_<KEY>=<value>              e.g. MESHPOSE_SEED=7\n\
Command-line flags override both.";

#[derive(Parser)]
#[command(name = "meshpose", version, about = "Category-level pose estimation with neural mesh models")]
#[command(after_long_help = long_help())]
struct Cli {
    /// Worker threads (0 = all cores). Overrides the config's `threads`.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity: error, warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

fn long_help() -> String {
    format!("{ENV_HELP}\n\nConfiguration file (all keys optional, defaults shown):\n\n{CONFIG_SCHEMA}")
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phase {
    Pretrain,
    Adapt,
    Fewshot,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training split and the shifted-domain splits.
    Generate {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train a model: synthetic pretraining, unsupervised adaptation or few-shot fine-tuning.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        phase: Phase,
        /// Dataset directory [default: <output_dir>/dataset].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Starting model for adapt/fewshot [default: <output_dir>/models/pretrained].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output model directory [default: <output_dir>/models/<pretrained|adapted>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Annotated target images per category for fewshot: a count or `all`.
        #[arg(long)]
        annotations: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Estimate poses for every image of a dataset split.
    Infer {
        #[command(flatten)]
        config: ConfigArg,
        /// Neural mesh checkpoint; repeat once per category.
        #[arg(long, required = true)]
        mesh: Vec<PathBuf>,
        /// Feature extractor checkpoint.
        #[arg(long)]
        extractor: PathBuf,
        /// Dataset directory (with manifest.jsonl).
        #[arg(long)]
        images: PathBuf,
        /// Split to run on; every image when omitted.
        #[arg(long)]
        split: Option<String>,
        /// Predictions file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Score predictions against a manifest; writes report.json and report.csv.
    Eval {
        /// Predictions file (JSON lines).
        #[arg(long)]
        pred: PathBuf,
        /// Dataset manifest (JSON lines).
        #[arg(long)]
        manifest: PathBuf,
        /// Report directory [default: next to the predictions].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra accuracy threshold in degrees; repeatable.
        #[arg(long = "threshold-deg")]
        thresholds: Vec<f64>,
        /// Baseline report.json to diff against; regressions exit nonzero.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 0.02)]
        accuracy_tolerance: f64,
        #[arg(long, default_value_t = 2.0)]
        median_tolerance: f64,
    },
    /// Run generate, pretrain, adapt, infer and eval; finished phases are skipped on rerun.
    Pipeline {
        #[command(flatten)]
        config: ConfigArg,
        /// Run directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Rerun every phase, replacing earlier artifacts.
        #[arg(long)]
        force: bool,
    },
    /// Count the pseudo labels kept at several confidence thresholds.
    SweepTau {
        #[command(flatten)]
        config: ConfigArg,
        /// Model directory [default: <output_dir>/models/pretrained].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset directory [default: <output_dir>/dataset].
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = POOL_SPLIT)]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,0.9,1.0")]
        taus: Vec<f64>,
    },
    /// Print the configuration schema, or validate and print a resolved configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print every key with its default and documentation.
    Schema,
    /// Validate a configuration and print it with overrides and derived seeds applied.
    Check {
        #[command(flatten)]
        config: ConfigArg,
    },
}

/// A failure with its exit code and category.
struct Failure {
    code: u8,
    category: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let category = e.category().to_owned();
        Failure {
            code: if category == "config" { 2 } else { 1 },
            category,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn new(code: u8, category: &str, message: impl Into<String>) -> Self {
        Failure {
            code,
            category: category.to_owned(),
            message: message.into(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(arg: &ConfigArg, threads: Option<usize>) -> CliResult<RunConfig> {
    let mut c = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::load_default()?,
    };
    if let Some(t) = threads {
        c.threads = t;
    }
    Ok(c)
}

fn reseed(mut c: RunConfig, seed: Option<u64>) -> CliResult<RunConfig> {
    if let Some(s) = seed {
        c.seed = s;
        c = c.with_derived_seeds();
    }
    c.validate()?;
    Ok(c)
}

fn parse_budget(raw: &str) -> CliResult<AnnotationBudget> {
    if raw == "all" {
        return Ok(AnnotationBudget::Keyword(BudgetKeyword::All));
    }
    raw.parse()
        .map(AnnotationBudget::Count)
        .map_err(|_| Failure::new(2, "config", format!("--annotations expects a count or `all`, got `{raw}`")))
}

fn refuse_existing(path: &Path, force: bool) -> CliResult {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.to_path_buf()).into());
    }
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::from(e).into())
}

fn cmd_generate(config: RunConfig, out: &Path, force: bool) -> CliResult {
    if out.join(meshpose_core::datagen::MANIFEST_FILE).exists() && !force {
        return Err(Error::OutputExists(out.to_path_buf()).into());
    }
    let splits = generate_splits(&config)?;
    let ds = write_splits(out, &splits, force)?;
    let mut manifest = RunManifest::new(&config);
    manifest.dataset_hash = Some(ds.content_hash()?);
    manifest.phases_completed.push("generate".into());
    write_file(&out.join("config.toml"), config.to_toml()?)?;
    write_file(&out.join("run.json"), json(&manifest)?)?;
    println!(
        "wrote {} train, {} target_pool, {} target_test images to {}",
        splits.train.len(),
        splits.pool.len(),
        splits.test.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    mut config: RunConfig,
    phase: Phase,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    annotations: Option<String>,
    force: bool,
) -> CliResult {
    let run = RunPaths::new(&config.output_dir);
    let data = data.unwrap_or_else(|| run.dataset());
    let stage = if matches!(phase, Phase::Pretrain) { "pretrained" } else { "adapted" };
    let out = out.unwrap_or_else(|| run.model(stage));
    refuse_existing(&out.join(meshpose_core::adaptation::EXTRACTOR_FILE), force)?;
    if let Some(a) = &annotations {
        config.train.fewshot_annotations = parse_budget(a)?;
    }
    let dataset = Dataset::open(&data)?;
    let train = load_split(&dataset, TRAIN_SPLIT, true)?;
    let (trained, log, name) = match phase {
        Phase::Pretrain => {
            let (m, l) = pretrain_synthetic(&train, &config.categories, &config.extractor, &config.mesh, &config.train)?;
            (m, l, "pretrain")
        }
        Phase::Adapt | Phase::Fewshot => {
            let start = Model::load(&model.unwrap_or_else(|| run.model("pretrained")), &config.categories)?;
            if matches!(phase, Phase::Adapt) {
                let pool = load_split(&dataset, POOL_SPLIT, false)?;
                let (m, l) = adapt_unsupervised(&start, &pool, &train, &config.train, &config.inference)?;
                (m, l, "adapt")
            } else {
                let labeled_pool = load_split(&dataset, POOL_SPLIT, true)?;
                let labeled = select_annotated(&labeled_pool, config.train.fewshot_annotations);
                let unlabeled: Vec<_> = labeled_pool
                    .into_iter()
                    .map(|s| meshpose_core::adaptation::TrainSample { pose: None, ..s })
                    .collect();
                let (m, l) = finetune_fewshot(&start, &labeled, &unlabeled, &train, &config.train, &config.inference)?;
                (m, l, "fewshot")
            }
        }
    };
    trained.save(&out)?;
    for w in &log.warnings {
        log::warn!("{w}");
    }
    write_train_log(&RunPaths::new(&out), name, &log)?;
    let mut manifest = RunManifest::new(&config);
    manifest.dataset_hash = Some(dataset.content_hash()?);
    manifest.checkpoints = checkpoint_hashes(&out, &out)?;
    manifest.phases_completed.push(name.into());
    write_file(&out.join("run.json"), json(&manifest)?)?;
    println!("{name}: model written to {}", out.display());
    Ok(())
}

fn cmd_infer(
    config: RunConfig,
    meshes: &[PathBuf],
    extractor: &Path,
    images: &Path,
    split: Option<&str>,
    out: &Path,
    force: bool,
) -> CliResult {
    refuse_existing(out, force)?;
    let extractor = ExtractorParams::load(extractor)?;
    let meshes = meshes.iter().map(|p| NeuralMesh::load(p)).collect::<Result<Vec<_>, _>>()?;
    let model = Model { extractor, meshes };
    let mut dataset = Dataset::open(images)?;
    if let Some(s) = split {
        dataset.entries.retain(|e| e.split == s);
        if dataset.entries.is_empty() {
            return Err(Failure::new(1, "invalid-argument", format!("no images in split `{s}`")));
        }
    }
    let known = model.categories();
    if let Some(e) = dataset.entries.iter().find(|e| !known.contains(&e.category)) {
        return Err(Failure::new(
            1,
            "invalid-argument",
            format!("{}: no mesh checkpoint for category `{}`", e.id, e.category),
        ));
    }
    let splits: std::collections::BTreeSet<String> = dataset.entries.iter().map(|e| e.split.clone()).collect();
    let mut samples = Vec::new();
    for s in &splits {
        samples.extend(load_split(&dataset, s, false)?);
    }
    let records = predict_records(&model, &samples, &config)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::new(1, "io", format!("{}: {e}", dir.display())))?;
    }
    write_predictions(out, &records)?;
    println!("{} of {} images estimated; predictions in {}", records.len(), samples.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    pred: &Path,
    manifest: &Path,
    out: Option<PathBuf>,
    thresholds: &[f64],
    compare: Option<PathBuf>,
    acc_tol: f64,
    med_tol: f64,
) -> CliResult {
    let preds = read_predictions(pred)?;
    let entries = read_manifest(manifest)?;
    let radians: Vec<f64> = thresholds.iter().map(|d| d.to_radians()).collect();
    let echo = serde_json::json!({
        "predictions": pred.display().to_string(),
        "manifest": manifest.display().to_string(),
        "extra_thresholds_degrees": thresholds,
    });
    let report = evaluate_run(&preds, &entries, &radians, echo)?;
    let out = out.unwrap_or_else(|| pred.parent().map(Path::to_path_buf).unwrap_or_default());
    report.write(&out)?;
    let o = &report.overall;
    println!(
        "{} samples: acc@pi/6 {:.4}  acc@pi/18 {:.4}  median {:.2} deg  ({} unjoinable)",
        o.count,
        o.acc_pi_6,
        o.acc_pi_18,
        o.median_error_degrees,
        report.errors.len()
    );
    if let Some(base) = compare {
        let baseline = EvalReport::read(&base)?;
        let diff = compare_reports(&baseline, &report, acc_tol, med_tol);
        write_file(&out.join("comparison.json"), json(&diff)?)?;
        let show = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.4}"));
        for d in &diff.diffs {
            println!(
                "{:>10} {:<24} {:>10} -> {:>10}{}",
                d.group,
                d.metric,
                show(d.baseline),
                show(d.candidate),
                if d.regression { "  REGRESSION" } else { "" }
            );
        }
        if diff.has_regressions() {
            return Err(Failure::new(1, "regression", format!("{} metric(s) regressed", diff.regressions().count())));
        }
    }
    Ok(())
}

fn cmd_pipeline(mut config: RunConfig, out: Option<PathBuf>, force: bool) -> CliResult {
    if let Some(o) = out {
        config.output_dir = o;
    }
    let outcome = run_pipeline(&config, force)?;
    if !outcome.skipped.is_empty() {
        println!("skipped finished phases: {}", outcome.skipped.join(", "));
    }
    for (name, r) in [("pretrained", &outcome.pretrained), ("adapted", &outcome.adapted)] {
        println!(
            "{name:>10}: acc@pi/6 {:.4}  acc@pi/18 {:.4}  median {:.2} deg",
            r.overall.acc_pi_6, r.overall.acc_pi_18, r.overall.median_error_degrees
        );
    }
    println!("artifacts in {}", outcome.root.display());
    Ok(())
}

fn cmd_sweep_tau(config: RunConfig, model: Option<PathBuf>, data: Option<PathBuf>, split: &str, taus: &[f64]) -> CliResult {
    let run = RunPaths::new(&config.output_dir);
    let model = Model::load(&model.unwrap_or_else(|| run.model("pretrained")), &config.categories)?;
    let dataset = Dataset::open(&data.unwrap_or_else(|| run.dataset()))?;
    let samples = load_split(&dataset, split, false)?;
    if samples.is_empty() {
        return Err(Failure::new(1, "invalid-argument", format!("no images in split `{split}`")));
    }
    let labels = generate_pseudo_labels(&model, &samples, 0.0, &config.inference)?;
    for &tau in taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Failure::new(2, "config", format!("tau {tau} outside [0, 1]")));
        }
        let kept = labels.iter().filter(|l| l.confidence >= tau).count();
        println!(
            "{}",
            serde_json::json!({"tau": tau, "kept": kept, "candidates": labels.len(), "kept_fraction": kept as f64 / labels.len() as f64})
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(1, "invalid-argument", format!("thread pool: {e}")))?;
    }
    let threads = cli.threads;
    match cli.command {
        Command::Generate { config, out, seed, force } => cmd_generate(reseed(load_config(&config, threads)?, seed)?, &out, force),
        Command::Train {
            config,
            phase,
            data,
            model,
            out,
            annotations,
            force,
        } => cmd_train(load_config(&config, threads)?, phase, data, model, out, annotations, force),
        Command::Infer {
            config,
            mesh,
            extractor,
            images,
            split,
            out,
            force,
        } => cmd_infer(load_config(&config, threads)?, &mesh, &extractor, &images, split.as_deref(), &out, force),
        Command::Eval {
            pred,
            manifest,
            out,
            thresholds,
            compare,
            accuracy_tolerance,
            median_tolerance,
        } => cmd_eval(&pred, &manifest, out, &thresholds, compare, accuracy_tolerance, median_tolerance),
        Command::Pipeline { config, out, seed, force } => cmd_pipeline(reseed(load_config(&config, threads)?, seed)?, out, force),
        Command::SweepTau {
            config,
            model,
            data,
            split,
            taus,
        } => cmd_sweep_tau(load_config(&config, threads)?, model, data, &split, &taus),
        Command::Config { action } => match action {
            ConfigAction::Schema => {
                print!("{CONFIG_SCHEMA}");
                Ok(())
            }
            ConfigAction::Check { config } => {
                let c = load_config(&config, threads)?;
                print!("{}", c.to_toml()?);
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .parse_default_env()
        .format_timestamp_secs()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

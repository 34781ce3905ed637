//! Training orchestration: synthetic pretraining, pseudo labelling,
//! unsupervised domain adaptation and few-shot fine-tuning.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Category, SceneSample};
use crate::features::{Adam, ExtractorConfig, ExtractorParams, FeatureMap};
use crate::geometry::{Camera, CuboidMesh, Pose};
use crate::image::Image;
use crate::inference::{InferenceConfig, PoseEstimate, PoseEstimator};
use crate::losses::{contrastive_loss, joint_loss, reconstruction_gradients, LossValue};
use crate::neuralmesh::{project_correspondences, Correspondence, NeuralMesh};
use crate::{seed, Error, Result};

/// One image with its annotations. `pose` is `None` for unlabelled data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub category: String,
    pub image: Image,
    pub camera: Camera,
    pub pose: Option<Pose>,
}

impl TrainSample {
    pub fn labeled(id: impl Into<String>, s: &SceneSample) -> Self {
        TrainSample {
            id: id.into(),
            category: s.category.clone(),
            image: s.image.clone(),
            camera: s.camera,
            pose: Some(s.pose),
        }
    }

    pub fn unlabeled(id: impl Into<String>, s: &SceneSample) -> Self {
        TrainSample {
            pose: None,
            ..TrainSample::labeled(id, s)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Lattice points per cuboid edge.
    pub grid_density: usize,
    pub momentum: f64,
    pub background_momentum: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            grid_density: 5,
            momentum: 0.1,
            background_momentum: 0.1,
        }
    }
}

/// Number of annotated images per category for few-shot fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnnotationBudget {
    Count(usize),
    Keyword(BudgetKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetKeyword {
    All,
}

impl AnnotationBudget {
    pub fn per_category(self, available: usize) -> usize {
        match self {
            AnnotationBudget::Count(n) => n.min(available),
            AnnotationBudget::Keyword(BudgetKeyword::All) => available,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    /// Extractor epochs over the pseudo-labelled set in every round.
    pub adapt_epochs: usize,
    pub adaptation_rounds: usize,
    /// Epochs on the annotated samples before pseudo labelling.
    pub fewshot_epochs: usize,
    pub batch_size: usize,
    /// Peak Adam learning rate; decays with a half cosine over each phase.
    pub learning_rate: f64,
    /// Step size of the vertex-feature gradient step on the domain term.
    pub vertex_learning_rate: f64,
    /// Weight of the contrastive term, divided by the number of cells it
    /// covers.
    pub contrastive_weight: f64,
    /// Background cells in the contrastive term per foreground cell,
    /// drawn without replacement. With more background than foreground
    /// cells the term is minimized by collapsing the foreground onto one
    /// feature.
    pub contrastive_background_ratio: f64,
    pub alpha: f64,
    /// Pseudo-label confidence threshold (inclusive).
    pub tau: f64,
    pub freeze_extractor: bool,
    /// Labelled synthetic samples replayed per kept pseudo label during
    /// adaptation.
    pub synthetic_replay: f64,
    pub fewshot_annotations: AnnotationBudget,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 8,
            adapt_epochs: 4,
            adaptation_rounds: 3,
            fewshot_epochs: 4,
            batch_size: 8,
            learning_rate: 3e-4,
            vertex_learning_rate: 0.05,
            contrastive_weight: 3.0,
            contrastive_background_ratio: 0.25,
            alpha: 1.0,
            tau: 0.9,
            freeze_extractor: false,
            synthetic_replay: 0.5,
            fewshot_annotations: AnnotationBudget::Count(0),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("vertex_learning_rate", self.vertex_learning_rate),
            ("contrastive_weight", self.contrastive_weight),
            ("contrastive_background_ratio", self.contrastive_background_ratio),
            ("alpha", self.alpha),
            ("synthetic_replay", self.synthetic_replay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Shared extractor plus one neural mesh per category.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub extractor: ExtractorParams,
    pub meshes: Vec<NeuralMesh>,
}

pub const EXTRACTOR_FILE: &str = "extractor.ckpt";

pub fn mesh_file(category: &str) -> String {
    format!("mesh-{category}.ckpt")
}

impl Model {
    pub fn init(categories: &[String], extractor: &ExtractorConfig, mesh: &MeshConfig, seed_value: u64) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::invalid("a model needs at least one category"));
        }
        let extractor = ExtractorParams::init(extractor.clone(), seed::derive(seed_value, "extractor", 0))?;
        let channels = extractor.config().feature_channels;
        let meshes = categories
            .iter()
            .map(|c| {
                let geometry = CuboidMesh::build(Category::named(c)?.bounding_dimensions(), mesh.grid_density)?;
                let mut m = NeuralMesh::new(geometry, channels, mesh.momentum, c, seed::derive(seed_value, c, 1))?;
                m.background_momentum = mesh.background_momentum;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { extractor, meshes })
    }

    pub fn categories(&self) -> Vec<String> {
        self.meshes.iter().map(|m| m.category.clone()).collect()
    }

    fn mesh_index(&self, category: &str) -> Result<usize> {
        self.meshes
            .iter()
            .position(|m| m.category == category)
            .ok_or_else(|| Error::invalid(format!("model has no mesh for category `{category}`")))
    }

    pub fn mesh(&self, category: &str) -> Result<&NeuralMesh> {
        Ok(&self.meshes[self.mesh_index(category)?])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.extractor.save(&dir.join(EXTRACTOR_FILE))?;
        for m in &self.meshes {
            m.save(&dir.join(mesh_file(&m.category)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, categories: &[String]) -> Result<Self> {
        let extractor = ExtractorParams::load(&dir.join(EXTRACTOR_FILE))?;
        let meshes = categories
            .iter()
            .map(|c| NeuralMesh::load(&dir.join(mesh_file(c))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { extractor, meshes })
    }
}

/// Per-epoch record of a training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub round: usize,
    pub epoch: usize,
    pub samples: usize,
    pub learning_rate: f64,
    /// Mean per-sample loss breakdown.
    pub loss: LossValue,
}

/// Per-round record of pseudo labelling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub phase: String,
    pub round: usize,
    pub candidates: usize,
    pub kept: usize,
    pub kept_fraction: f64,
    pub mean_confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub rounds: Vec<RoundLog>,
    /// Pseudo labels of every round, in round order.
    pub pseudo_labels: Vec<Vec<PseudoLabel>>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    fn extend(&mut self, other: TrainLog) {
        self.epochs.extend(other.epochs);
        self.rounds.extend(other.rounds);
        self.pseudo_labels.extend(other.pseudo_labels);
        self.warnings.extend(other.warnings);
    }

    /// Epoch and round records as JSON lines.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        for r in &self.rounds {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// What a training example contributes.
#[derive(Clone, Debug)]
struct Example<'a> {
    sample: &'a TrainSample,
    mesh: usize,
    pose: Pose,
    /// Update vertex features by moving average from this example.
    moving_average: bool,
    /// Include the domain-contrastive term.
    domain: bool,
}

struct ExampleOutput {
    grad: Vec<f64>,
    features: FeatureMap,
    corr: Correspondence,
    loss: [f64; 3],
}

fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    base * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos())
}

fn example_gradient(model: &Model, ex: &Example, config: &TrainConfig, epoch_seed: u64, need_grad: bool) -> Result<ExampleOutput> {
    let mesh = &model.meshes[ex.mesh];
    let (fm, cache) = model.extractor.forward(&ex.sample.image)?;
    let corr = project_correspondences(&mesh.geometry, &ex.pose, &ex.sample.camera, fm.stride);
    let rec = reconstruction_gradients(&fm, mesh, &corr)?;
    let mut upstream = rec.cells;
    let mut con_value = 0.0;
    let fg: Vec<usize> = corr.pairs.iter().map(|&(_, c)| c).collect();
    if !fg.is_empty() && config.contrastive_weight > 0.0 {
        let m = ((config.contrastive_background_ratio * fg.len() as f64).round() as usize).min(corr.background.len());
        let mut bg = corr.background.clone();
        let mut rng = seed::rng(seed::derive(epoch_seed, &ex.sample.id, 0));
        let (picked, _) = bg.partial_shuffle(&mut rng, m);
        let mut bg = picked.to_vec();
        bg.sort_unstable();
        let (con, g) = contrastive_loss(&fm, &fg, &bg)?;
        let w = config.contrastive_weight / (fg.len() + bg.len()) as f64;
        con_value = con.total;
        upstream.iter_mut().zip(&g).for_each(|(u, gi)| *u += w * gi);
    }
    let mut domain_value = 0.0;
    if ex.domain {
        let c = fm.channels;
        for &(r, cell) in &corr.pairs {
            let (f, v) = (fm.cell(cell), mesh.vertex_feature(r));
            for k in 0..c {
                let d = f[k] - v[k];
                domain_value += d * d;
                upstream[cell * c + k] += config.alpha * 2.0 * d;
            }
        }
    }
    let grad = if need_grad {
        model.extractor.backward(&cache, &upstream)?
    } else {
        Vec::new()
    };
    Ok(ExampleOutput {
        grad,
        features: fm,
        corr,
        loss: [con_value, rec.loss.total, domain_value],
    })
}

/// Runs `epochs` passes over `examples`, updating the extractor by Adam on
/// the summed per-example gradients of each batch, then applying the
/// example-specific vertex feature updates in order.
fn train_epochs(
    model: &mut Model,
    examples: &[Example],
    epochs: usize,
    config: &TrainConfig,
    phase: &str,
    round: usize,
) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::new();
    if examples.is_empty() || epochs == 0 {
        return Ok(logs);
    }
    let update_extractor = !config.freeze_extractor && config.learning_rate > 0.0;
    let mut adam = Adam::new(model.extractor.len());
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * epochs;
    let mut step = 0;
    for epoch in 0..epochs {
        let epoch_seed = seed::derive(config.seed, phase, (round * 10_000 + epoch) as u64);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seed::rng(epoch_seed));
        let mut sums = [0.0; 3];
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            let outputs: Vec<ExampleOutput> = batch
                .par_iter()
                .map(|&i| example_gradient(model, &examples[i], config, epoch_seed, update_extractor))
                .collect::<Result<_>>()?;
            lr = cosine_lr(config.learning_rate, step, total_steps);
            step += 1;
            if update_extractor {
                let mut grad = vec![0.0; model.extractor.len()];
                for o in &outputs {
                    grad.iter_mut().zip(&o.grad).for_each(|(g, x)| *g += x);
                }
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                adam.step(model.extractor.values_mut(), &grad, lr);
            }
            // Domain term: one averaged gradient step on each mesh's vertex
            // features.
            let mut vertex_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (&i, o) in batch.iter().zip(&outputs) {
                let ex = &examples[i];
                for k in 0..3 {
                    sums[k] += o.loss[k];
                }
                if ex.moving_average {
                    model.meshes[ex.mesh].update_vertex_features(&o.features, &o.corr)?;
                }
                if ex.domain && config.alpha > 0.0 {
                    let mesh = &model.meshes[ex.mesh];
                    let g = vertex_grads
                        .entry(ex.mesh)
                        .or_insert_with(|| vec![0.0; mesh.vertex_features.len()]);
                    let c = mesh.channels;
                    for &(r, cell) in &o.corr.pairs {
                        let (f, v) = (o.features.cell(cell), mesh.vertex_feature(r));
                        for k in 0..c {
                            g[r * c + k] -= 2.0 * (f[k] - v[k]);
                        }
                    }
                }
            }
            for (mi, g) in vertex_grads {
                let mesh = &mut model.meshes[mi];
                let c = mesh.channels;
                let step_size = config.vertex_learning_rate * config.alpha / batch.len() as f64;
                for r in 0..mesh.vertex_count() {
                    let gr = &g[r * c..(r + 1) * c];
                    if gr.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let feat = mesh.vertex_feature_mut(r);
                    for k in 0..c {
                        feat[k] -= step_size * gr[k];
                    }
                    crate::features::normalize(feat);
                }
            }
        }
        let n = examples.len() as f64;
        let loss = joint_loss(sums[0] / n, sums[1] / n, sums[2] / n, config.alpha)?;
        log::info!(
            "{phase} round {round} epoch {epoch}: total {:.4} con {:.3} rec {:.4} domain {:.4}",
            loss.total,
            sums[0] / n,
            sums[1] / n,
            sums[2] / n
        );
        logs.push(EpochLog {
            phase: phase.to_owned(),
            round,
            epoch,
            samples: examples.len(),
            learning_rate: lr,
            loss,
        });
    }
    if update_extractor {
        model.extractor.round_to_f32();
    }
    Ok(logs)
}

fn labeled_examples<'a>(model: &Model, samples: &'a [TrainSample], moving_average: bool) -> Result<Vec<Example<'a>>> {
    samples
        .iter()
        .map(|s| {
            let pose = s
                .pose
                .ok_or_else(|| Error::invalid(format!("sample `{}` has no ground-truth pose", s.id)))?;
            Ok(Example {
                sample: s,
                mesh: model.mesh_index(&s.category)?,
                pose,
                moving_average,
                domain: false,
            })
        })
        .collect()
}

/// Synthetic pretraining from ground-truth correspondences: the extractor
/// follows the gradients of the contrastive and reconstruction terms, the
/// vertex features follow the observed features by moving average.
pub fn pretrain_synthetic(
    samples: &[TrainSample],
    categories: &[String],
    extractor: &ExtractorConfig,
    mesh: &MeshConfig,
    config: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    let model = Model::init(categories, extractor, mesh, config.seed)?;
    pretrain_model(model, samples, config)
}

/// [`pretrain_synthetic`] starting from an existing model.
pub fn pretrain_model(mut model: Model, samples: &[TrainSample], config: &TrainConfig) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("pretraining needs at least one sample"));
    }
    let examples = labeled_examples(&model, samples, true)?;
    let epochs = train_epochs(&mut model, &examples, config.pretrain_epochs, config, "pretrain", 0)?;
    Ok((
        model,
        TrainLog {
            epochs,
            ..TrainLog::default()
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub sample_id: String,
    pub category: String,
    pub pose: Pose,
    pub confidence: f64,
    pub final_loss: f64,
    /// `confidence >= tau`.
    pub kept: bool,
}

/// Estimates every sample's pose with its category's mesh. Results are in
/// input order and do not depend on the thread count.
pub fn predict(model: &Model, samples: &[TrainSample], inference: &InferenceConfig) -> Result<Vec<Result<PoseEstimate>>> {
    inference.validate()?;
    let stride = model.extractor.stride();
    let mut estimators: Vec<(usize, Camera, PoseEstimator)> = Vec::new();
    for s in samples {
        let mi = model.mesh_index(&s.category)?;
        if !estimators.iter().any(|(m, c, _)| *m == mi && *c == s.camera) {
            estimators.push((mi, s.camera, PoseEstimator::new(&model.meshes[mi], &s.camera, stride, inference)?));
        }
    }
    Ok(samples
        .par_iter()
        .map(|s| {
            let mi = model.mesh_index(&s.category)?;
            let (_, _, est) = estimators
                .iter()
                .find(|(m, c, _)| *m == mi && *c == s.camera)
                .expect("estimator built above");
            est.estimate(&model.extractor.extract(&s.image)?)
        })
        .collect())
}

/// Pseudo labels for unlabelled samples; a label is kept iff its
/// confidence is at least `tau`.
pub fn generate_pseudo_labels(
    model: &Model,
    samples: &[TrainSample],
    tau: f64,
    inference: &InferenceConfig,
) -> Result<Vec<PseudoLabel>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} outside [0, 1]")));
    }
    let estimates = predict(model, samples, inference)?;
    samples
        .iter()
        .zip(estimates)
        .map(|(s, e)| {
            let e = e?;
            Ok(PseudoLabel {
                sample_id: s.id.clone(),
                category: s.category.clone(),
                pose: e.pose,
                confidence: e.confidence,
                final_loss: e.final_loss,
                kept: e.confidence >= tau,
            })
        })
        .collect()
}

fn round_log(phase: &str, round: usize, labels: &[PseudoLabel]) -> RoundLog {
    let kept = labels.iter().filter(|l| l.kept).count();
    let mean = if labels.is_empty() {
        0.0
    } else {
        labels.iter().map(|l| l.confidence).sum::<f64>() / labels.len() as f64
    };
    RoundLog {
        phase: phase.to_owned(),
        round,
        candidates: labels.len(),
        kept,
        kept_fraction: if labels.is_empty() { 0.0 } else { kept as f64 / labels.len() as f64 },
        mean_confidence: mean,
    }
}

/// Replayed synthetic examples for one round: a seeded selection of
/// `count` labelled samples.
fn replay_examples<'a>(model: &Model, synthetic: &'a [TrainSample], count: usize, config: &TrainConfig, round: usize) -> Result<Vec<Example<'a>>> {
    if synthetic.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..synthetic.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(config.seed, "replay", round as u64)));
    order.truncate(count.min(synthetic.len()));
    order.sort_unstable();
    let picked: Vec<&TrainSample> = order.iter().map(|&i| &synthetic[i]).collect();
    picked
        .into_iter()
        .map(|s| {
            Ok(Example {
                sample: s,
                mesh: model.mesh_index(&s.category)?,
                pose: s.pose.ok_or_else(|| Error::invalid(format!("replay sample `{}` has no pose", s.id)))?,
                moving_average: false,
                domain: false,
            })
        })
        .collect()
}

fn adaptation_rounds(
    mut model: Model,
    labeled: &[TrainSample],
    unlabeled: &[TrainSample],
    synthetic: &[TrainSample],
    config: &TrainConfig,
    inference: &InferenceConfig,
    phase: &str,
) -> Result<(Model, TrainLog)> {
    let mut log = TrainLog::default();
    for round in 0..config.adaptation_rounds {
        let labels = generate_pseudo_labels(&model, unlabeled, config.tau, inference)?;
        let summary = round_log(phase, round, &labels);
        log::info!(
            "{phase} round {round}: kept {}/{} pseudo labels (mean confidence {:.3})",
            summary.kept,
            summary.candidates,
            summary.mean_confidence
        );
        let kept = summary.kept;
        log.rounds.push(summary);
        if kept == 0 && labeled.is_empty() {
            if round == 0 {
                let best = labels.iter().map(|l| l.confidence).fold(0.0, f64::max);
                return Err(Error::NoPseudoLabels(format!(
                    "no pseudo label reached tau = {} in the first round (highest confidence {best:.4}); lower tau",
                    config.tau
                )));
            }
            log.warnings.push(format!("{phase} round {round}: no pseudo labels kept, skipping training"));
            log.pseudo_labels.push(labels);
            continue;
        }
        let mut examples = Vec::new();
        for s in labeled {
            examples.push(Example {
                sample: s,
                mesh: model.mesh_index(&s.category)?,
                pose: s.pose.expect("labeled samples carry poses"),
                moving_average: false,
                domain: true,
            });
        }
        for (s, l) in unlabeled.iter().zip(&labels) {
            if l.kept {
                examples.push(Example {
                    sample: s,
                    mesh: model.mesh_index(&s.category)?,
                    pose: l.pose,
                    moving_average: false,
                    domain: true,
                });
            }
        }
        let replay = (config.synthetic_replay * examples.len() as f64).round() as usize;
        examples.extend(replay_examples(&model, synthetic, replay, config, round)?);
        let epochs = train_epochs(&mut model, &examples, config.adapt_epochs, config, phase, round + 1)?;
        log.epochs.extend(epochs);
        log.pseudo_labels.push(labels);
    }
    Ok((model, log))
}

/// Pseudo-label domain adaptation: every round re-labels the shifted
/// samples with the current model, keeps labels with confidence at least
/// `tau`, and trains on `L_con + L_rec + α·L_domain` at the kept poses. The
/// extractor follows all three terms; vertex features move only along the
/// domain term. `synthetic` samples, if any, are replayed with their
/// ground truth to anchor the extractor.
pub fn adapt_unsupervised(
    model: &Model,
    shifted: &[TrainSample],
    synthetic: &[TrainSample],
    config: &TrainConfig,
    inference: &InferenceConfig,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if shifted.is_empty() {
        return Err(Error::invalid("adaptation needs unlabelled shifted-domain samples"));
    }
    adaptation_rounds(model.clone(), &[], shifted, synthetic, config, inference, "adapt")
}

/// Few-shot fine-tuning: train on the annotated samples with ground-truth
/// correspondences, then run the pseudo-label rounds on the unlabelled pool
/// while keeping the annotated samples in every round's training set.
/// Annotated samples are deduplicated by id and removed from the pool. With
/// no annotated samples this falls back to [`adapt_unsupervised`].
pub fn finetune_fewshot(
    model: &Model,
    labeled: &[TrainSample],
    unlabeled: &[TrainSample],
    synthetic: &[TrainSample],
    config: &TrainConfig,
    inference: &InferenceConfig,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    let mut seen = BTreeSet::new();
    let labeled: Vec<TrainSample> = labeled.iter().filter(|s| seen.insert(s.id.clone())).cloned().collect();
    if labeled.is_empty() {
        log::warn!("few-shot fine-tuning without annotated samples; running unsupervised adaptation");
        let (m, mut log) = adapt_unsupervised(model, unlabeled, synthetic, config, inference)?;
        log.warnings
            .insert(0, "no annotated samples: fell back to unsupervised adaptation".to_owned());
        return Ok((m, log));
    }
    let pool: Vec<TrainSample> = unlabeled.iter().filter(|s| !seen.contains(&s.id)).cloned().collect();
    let mut model = model.clone();
    let mut log = TrainLog::default();
    let examples = labeled_examples(&model, &labeled, true)?;
    log.epochs = train_epochs(&mut model, &examples, config.fewshot_epochs, config, "fewshot", 0)?;
    if pool.is_empty() {
        return Ok((model, log));
    }
    let (model, rounds) = adaptation_rounds(model, &labeled, &pool, synthetic, config, inference, "fewshot")?;
    log.extend(rounds);
    Ok((model, log))
}

/// The first `budget` samples per category in id order.
pub fn select_annotated(samples: &[TrainSample], budget: AnnotationBudget) -> Vec<TrainSample> {
    let mut by_cat: BTreeMap<&str, Vec<&TrainSample>> = BTreeMap::new();
    for s in samples {
        by_cat.entry(&s.category).or_default().push(s);
    }
    let mut out = Vec::new();
    for (_, mut v) in by_cat {
        v.sort_by(|a, b| a.id.cmp(&b.id));
        let n = budget.per_category(v.len());
        out.extend(v.into_iter().take(n).cloned());
    }
    out
}

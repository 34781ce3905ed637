//! Pose accuracy metrics and evaluation reports.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::ManifestEntry;
use crate::geometry::{geodesic_distance, Pose};
use crate::inference::PoseEstimate;
use crate::{Error, Result};

pub const PI_6: f64 = PI / 6.0;
pub const PI_18: f64 = PI / 18.0;

fn errors(predictions: &[Pose], truths: &[Pose]) -> Result<Vec<f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            truths.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| geodesic_distance(&p.rotation(), &t.rotation()))
        .collect())
}

/// Fraction of predictions whose geodesic rotation error is strictly below
/// `threshold` radians. Empty lists give 0.
pub fn pose_accuracy(predictions: &[Pose], truths: &[Pose], threshold: f64) -> Result<f64> {
    let e = errors(predictions, truths)?;
    Ok(accuracy_of(&e, threshold))
}

fn accuracy_of(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// Median geodesic error in degrees; the mean of the middle two for even
/// counts.
pub fn median_error(predictions: &[Pose], truths: &[Pose]) -> Result<f64> {
    let e = errors(predictions, truths)?;
    if e.is_empty() {
        return Err(Error::invalid("median error of an empty set"));
    }
    Ok(median_degrees(&e))
}

fn median_degrees(errors: &[f64]) -> f64 {
    let mut d: Vec<f64> = errors.iter().map(|e| e.to_degrees()).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub category: String,
    pub pose: Pose,
    pub final_loss: f64,
    pub confidence: f64,
    pub iterations_used: usize,
    pub init_index: usize,
    pub elapsed_ms: f64,
}

impl PredictionRecord {
    pub fn new(id: &str, category: &str, estimate: &PoseEstimate, elapsed_ms: f64) -> Self {
        PredictionRecord {
            id: id.to_owned(),
            category: category.to_owned(),
            pose: estimate.pose,
            final_loss: estimate.final_loss,
            confidence: estimate.confidence,
            iterations_used: estimate.iterations_used,
            init_index: estimate.init_index,
            elapsed_ms,
        }
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Decode(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub acc_pi_6: f64,
    pub acc_pi_18: f64,
    pub median_error_degrees: f64,
    /// Accuracy at any extra thresholds, keyed by the threshold in degrees.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl Metrics {
    fn of(errors: &[f64], thresholds: &[f64]) -> Metrics {
        Metrics {
            count: errors.len(),
            acc_pi_6: round6(accuracy_of(errors, PI_6)),
            acc_pi_18: round6(accuracy_of(errors, PI_18)),
            median_error_degrees: if errors.is_empty() { 0.0 } else { round6(median_degrees(errors)) },
            extra: thresholds
                .iter()
                .map(|&t| (threshold_key(t), round6(accuracy_of(errors, t))))
                .collect(),
        }
    }
}

fn threshold_key(t: f64) -> String {
    format!("acc@{}deg", round6(t.to_degrees()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub id: String,
    pub category: String,
    pub domain_tag: String,
    pub error_degrees: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinError {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_category: BTreeMap<String, Metrics>,
    pub per_domain: BTreeMap<String, Metrics>,
    /// Per-sample errors sorted by id.
    pub samples: Vec<SampleError>,
    /// Predictions that could not be scored.
    pub errors: Vec<JoinError>,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Joins predictions to manifest entries by id and computes metrics overall,
/// per category and per domain tag. Predictions without a manifest entry, with
/// a mismatched category or repeated ids are listed in `errors` and left out
/// of the metrics. The result does not depend on input order.
pub fn evaluate_run(
    predictions: &[PredictionRecord],
    manifest: &[ManifestEntry],
    thresholds: &[f64],
    config: serde_json::Value,
) -> Result<EvalReport> {
    if let Some(t) = thresholds.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::invalid(format!("threshold {t} must be positive")));
    }
    let by_id: HashMap<&str, &ManifestEntry> = manifest.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut sorted: Vec<&PredictionRecord> = predictions.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut samples = Vec::new();
    let mut join_errors = Vec::new();
    let mut raw: Vec<(String, String, f64)> = Vec::new();
    for (k, p) in sorted.iter().enumerate() {
        let dup = (k > 0 && sorted[k - 1].id == p.id) || sorted.get(k + 1).is_some_and(|q| q.id == p.id);
        let reason = if dup {
            Some("duplicate prediction id".to_owned())
        } else {
            match by_id.get(p.id.as_str()) {
                None => Some("no manifest entry".to_owned()),
                Some(e) if e.category != p.category => {
                    Some(format!("category `{}` but manifest says `{}`", p.category, e.category))
                }
                Some(_) if p.pose.validate().is_err() => Some("invalid predicted pose".to_owned()),
                Some(_) => None,
            }
        };
        if let Some(reason) = reason {
            join_errors.push(JoinError { id: p.id.clone(), reason });
            continue;
        }
        let e = by_id[p.id.as_str()];
        let err = geodesic_distance(&p.pose.rotation(), &e.pose.rotation());
        raw.push((e.category.clone(), e.domain_tag.as_str().to_owned(), err));
        samples.push(SampleError {
            id: p.id.clone(),
            category: e.category.clone(),
            domain_tag: e.domain_tag.as_str().to_owned(),
            error_degrees: round6(err.to_degrees()),
        });
    }
    let all: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let mut cats: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut doms: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (c, d, e) in &raw {
        cats.entry(c.clone()).or_default().push(*e);
        doms.entry(d.clone()).or_default().push(*e);
    }
    Ok(EvalReport {
        overall: Metrics::of(&all, thresholds),
        per_category: cats.into_iter().map(|(k, v)| (k, Metrics::of(&v, thresholds))).collect(),
        per_domain: doms.into_iter().map(|(k, v)| (k, Metrics::of(&v, thresholds))).collect(),
        samples,
        errors: join_errors,
        config,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    group: &'a str,
    name: &'a str,
    count: usize,
    acc_pi_6: f64,
    acc_pi_18: f64,
    median_error_degrees: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row for the aggregate, then one per category and per domain.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut rows = vec![("overall", "all", &self.overall)];
        rows.extend(self.per_category.iter().map(|(k, m)| ("category", k.as_str(), m)));
        rows.extend(self.per_domain.iter().map(|(k, m)| ("domain", k.as_str(), m)));
        for (group, name, m) in rows {
            w.serialize(CsvRow {
                group,
                name,
                count: m.count,
                acc_pi_6: m.acc_pi_6,
                acc_pi_18: m.acc_pi_18,
                median_error_degrees: m.median_error_degrees,
            })
            .map_err(|e| Error::Decode(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Decode(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.json", self.to_json()?), ("report.csv", self.to_csv()?)] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<EvalReport> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDiff {
    /// `overall`, `category/<name>` or `domain/<name>`.
    pub group: String,
    pub metric: String,
    pub baseline: Option<f64>,
    pub candidate: Option<f64>,
    pub delta: Option<f64>,
    pub regression: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub diffs: Vec<MetricDiff>,
}

impl ReportDiff {
    pub fn regressions(&self) -> impl Iterator<Item = &MetricDiff> {
        self.diffs.iter().filter(|d| d.regression)
    }

    pub fn has_regressions(&self) -> bool {
        self.regressions().next().is_some()
    }
}

/// Metric-by-metric differences from `baseline` to `candidate`. Accuracies
/// that drop by more than `accuracy_tolerance`, median errors that grow by
/// more than `median_tolerance_degrees` and groups missing from the
/// candidate are flagged. Unchanged metrics are omitted.
pub fn compare_reports(
    baseline: &EvalReport,
    candidate: &EvalReport,
    accuracy_tolerance: f64,
    median_tolerance_degrees: f64,
) -> ReportDiff {
    fn groups(r: &EvalReport) -> BTreeMap<String, &Metrics> {
        let mut g = BTreeMap::from([("overall".to_owned(), &r.overall)]);
        g.extend(r.per_category.iter().map(|(k, m)| (format!("category/{k}"), m)));
        g.extend(r.per_domain.iter().map(|(k, m)| (format!("domain/{k}"), m)));
        g
    }
    fn values(m: &Metrics) -> BTreeMap<String, f64> {
        let mut v = BTreeMap::from([
            ("acc_pi_6".to_owned(), m.acc_pi_6),
            ("acc_pi_18".to_owned(), m.acc_pi_18),
            ("median_error_degrees".to_owned(), m.median_error_degrees),
        ]);
        v.extend(m.extra.iter().map(|(k, x)| (k.clone(), *x)));
        v
    }
    let (a, b) = (groups(baseline), groups(candidate));
    let mut names: Vec<&String> = a.keys().chain(b.keys()).collect();
    names.sort();
    names.dedup();
    let mut diffs = Vec::new();
    for g in names {
        let va = a.get(g).map(|m| values(m)).unwrap_or_default();
        let vb = b.get(g).map(|m| values(m)).unwrap_or_default();
        let mut metrics: Vec<&String> = va.keys().chain(vb.keys()).collect();
        metrics.sort();
        metrics.dedup();
        for m in metrics {
            let (x, y) = (va.get(m).copied(), vb.get(m).copied());
            if x == y {
                continue;
            }
            let delta = x.zip(y).map(|(x, y)| round6(y - x));
            let regression = match delta {
                None => y.is_none(),
                Some(d) if m == "median_error_degrees" => d > median_tolerance_degrees,
                Some(d) => d < -accuracy_tolerance,
            };
            diffs.push(MetricDiff {
                group: g.clone(),
                metric: m.clone(),
                baseline: x,
                candidate: y,
                delta,
                regression,
            });
        }
    }
    ReportDiff { diffs }
}

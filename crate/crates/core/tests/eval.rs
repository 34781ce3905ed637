use std::f64::consts::PI;

use meshpose_core::datagen::{DomainTag, ManifestEntry};
use meshpose_core::eval::*;
use meshpose_core::{Camera, Pose};

fn pose(a: f64, e: f64, t: f64) -> Pose {
    Pose::new(a, e, t, 4.0).unwrap()
}

/// A pose whose rotation differs from `p` by exactly `angle` (about the
/// camera axis).
fn off_by(p: &Pose, angle: f64) -> Pose {
    Pose { theta: p.theta + angle, ..*p }
}

#[test]
fn exact_predictions_are_always_correct() {
    let truths: Vec<Pose> = (0..20).map(|k| pose(0.3 * k as f64, 0.1, -0.05)).collect();
    for t in [1e-9, PI_18, PI_6, PI] {
        assert_eq!(pose_accuracy(&truths, &truths, t).unwrap(), 1.0);
    }
    assert_eq!(median_error(&truths[..1], &truths[..1]).unwrap(), 0.0);
}

#[test]
fn accuracy_uses_a_strict_threshold() {
    let truths: Vec<Pose> = (0..10).map(|k| pose(0.5 * k as f64, 0.3, 0.0)).collect();
    let preds: Vec<Pose> = truths.iter().map(|t| off_by(t, PI_6 + 1e-6)).collect();
    assert_eq!(pose_accuracy(&preds, &truths, PI_6).unwrap(), 0.0);
    assert_eq!(pose_accuracy(&preds, &truths, PI / 2.0).unwrap(), 1.0);
    // Rotations about other axes.
    let az: Vec<Pose> = truths.iter().map(|t| pose(t.azimuth, 0.0, 0.0)).collect();
    let shifted: Vec<Pose> = az.iter().map(|t| pose(t.azimuth + PI_6 + 1e-6, 0.0, 0.0)).collect();
    assert_eq!(pose_accuracy(&shifted, &az, PI_6).unwrap(), 0.0);
    assert_eq!(pose_accuracy(&shifted, &az, PI_6 + 2e-6).unwrap(), 1.0);
}

#[test]
fn mixed_set_counts_errors_below_threshold() {
    let truths: Vec<Pose> = (0..13).map(|k| pose(0.4 * k as f64, -0.1, 0.02)).collect();
    let errs = [0.01, 0.1, 0.2, 0.5, 0.6, 0.9, 1.2, 0.05, 0.3, 2.0, 3.0, 0.52, 0.53];
    let preds: Vec<Pose> = truths.iter().zip(errs).map(|(t, e)| off_by(t, e)).collect();
    let k = errs.iter().filter(|&&e| e < PI_6).count();
    let acc = pose_accuracy(&preds, &truths, PI_6).unwrap();
    assert!((acc - k as f64 / 13.0).abs() < 1e-12);
}

#[test]
fn median_conventions() {
    let truths: Vec<Pose> = (0..4).map(|k| pose(k as f64, 0.2, 0.0)).collect();
    let preds: Vec<Pose> = truths
        .iter()
        .zip([10.0f64, 20.0, 30.0, 40.0])
        .map(|(t, d)| off_by(t, d.to_radians()))
        .collect();
    assert!((median_error(&preds[..3], &truths[..3]).unwrap() - 20.0).abs() < 1e-9);
    assert!((median_error(&preds, &truths).unwrap() - 25.0).abs() < 1e-9);
    assert!(median_error(&[], &[]).is_err());
    assert!(pose_accuracy(&preds[..2], &truths, PI_6).is_err());
}

fn entry(id: &str, category: &str, pose: Pose, tag: DomainTag) -> ManifestEntry {
    ManifestEntry {
        id: id.into(),
        split: "test".into(),
        category: category.into(),
        index: 0,
        file: format!("{id}.img"),
        pose,
        camera: Camera::centered(80.0, 64, 64).unwrap(),
        texture_id: 0,
        background_id: 0,
        domain_tag: tag,
        seed: 0,
    }
}

fn record(id: &str, category: &str, pose: Pose) -> PredictionRecord {
    PredictionRecord {
        id: id.into(),
        category: category.into(),
        pose,
        final_loss: 1.0,
        confidence: 0.5,
        iterations_used: 3,
        init_index: 0,
        elapsed_ms: 1.0,
    }
}

fn fixture() -> (Vec<ManifestEntry>, Vec<PredictionRecord>) {
    let mut manifest = Vec::new();
    let mut preds = Vec::new();
    for k in 0..12 {
        let cat = if k % 2 == 0 { "car" } else { "truck" };
        let tag = if k < 6 { DomainTag::Synthetic } else { DomainTag::Shifted };
        let t = pose(0.5 * k as f64, 0.2, 0.0);
        let id = format!("test/{cat}/{k:05}");
        manifest.push(entry(&id, cat, t, tag));
        preds.push(record(&id, cat, off_by(&t, 0.07 * k as f64)));
    }
    (manifest, preds)
}

#[test]
fn perfect_predictor_report() {
    let (manifest, _) = fixture();
    let preds: Vec<PredictionRecord> = manifest.iter().map(|e| record(&e.id, &e.category, e.pose)).collect();
    let r = evaluate_run(&preds, &manifest, &[], serde_json::Value::Null).unwrap();
    assert_eq!(r.overall.count, 12);
    assert_eq!(r.overall.acc_pi_6, 1.0);
    assert_eq!(r.overall.acc_pi_18, 1.0);
    assert_eq!(r.overall.median_error_degrees, 0.0);
    assert!(r.errors.is_empty());
    for m in r.per_category.values().chain(r.per_domain.values()) {
        assert_eq!((m.acc_pi_6, m.median_error_degrees), (1.0, 0.0));
    }
}

#[test]
fn report_groups_and_is_order_invariant() {
    let (manifest, mut preds) = fixture();
    let a = evaluate_run(&preds, &manifest, &[PI / 4.0], serde_json::json!({"k": 1})).unwrap();
    assert_eq!(a.per_category["car"].count, 6);
    assert_eq!(a.per_domain["shifted"].count, 6);
    assert!(a.overall.acc_pi_18 <= a.overall.acc_pi_6);
    assert!(a.overall.extra.contains_key("acc@45deg"));
    // Median agrees with the stored per-sample errors.
    let mut e: Vec<f64> = a.samples.iter().map(|s| s.error_degrees).collect();
    e.sort_by(f64::total_cmp);
    assert!((a.overall.median_error_degrees - 0.5 * (e[5] + e[6])).abs() < 1e-5);

    preds.reverse();
    let b = evaluate_run(&preds, &manifest, &[PI / 4.0], serde_json::json!({"k": 1})).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let csv = a.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 2 + 2);
    assert!(csv.starts_with("group,name,count,acc_pi_6,acc_pi_18,median_error_degrees"));
}

#[test]
fn unjoinable_predictions_are_listed_not_scored() {
    let (manifest, mut preds) = fixture();
    preds.push(record("test/car/99999", "car", pose(0.0, 0.0, 0.0)));
    preds.push(record(&manifest[1].id, "car", manifest[1].pose));
    let r = evaluate_run(&preds, &manifest, &[], serde_json::Value::Null).unwrap();
    let ids: Vec<&str> = r.errors.iter().map(|e| e.id.as_str()).collect();
    assert!(ids.contains(&"test/car/99999"));
    // Both copies of a repeated id are rejected.
    assert_eq!(ids.iter().filter(|&&i| i == manifest[1].id).count(), 2);
    assert_eq!(r.overall.count, 11);
}

#[test]
fn comparison_flags_regressions() {
    let (manifest, preds) = fixture();
    let a = evaluate_run(&preds, &manifest, &[], serde_json::Value::Null).unwrap();
    assert!(compare_reports(&a, &a, 0.0, 0.0).diffs.is_empty());
    let worse: Vec<PredictionRecord> = preds
        .iter()
        .map(|p| PredictionRecord {
            pose: off_by(&p.pose, 0.6),
            ..p.clone()
        })
        .collect();
    let b = evaluate_run(&worse, &manifest, &[], serde_json::Value::Null).unwrap();
    let d = compare_reports(&a, &b, 0.01, 1.0);
    assert!(d.has_regressions());
    assert!(d.regressions().any(|x| x.group == "overall" && x.metric == "acc_pi_6"));
    let back = compare_reports(&b, &a, 0.01, 1.0);
    assert!(!back.has_regressions());
}

#[test]
fn predictions_and_reports_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, preds) = fixture();
    let path = dir.path().join("predictions.jsonl");
    write_predictions(&path, &preds).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), preds);
    let r = evaluate_run(&preds, &manifest, &[], serde_json::Value::Null).unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(EvalReport::read(&dir.path().join("report.json")).unwrap(), r);
    std::fs::write(&path, "{\"id\": 3}\n").unwrap();
    assert!(read_predictions(&path).is_err());
}

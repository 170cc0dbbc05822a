use posetrack_core::eval::{
    annotator_agreement, emit_report, evaluate_dataset, evaluate_poses, pck, torso_size, EvalConfig, EvalReport,
    InvisibleRule, ReportFormat, Subset,
};
use posetrack_core::geometry::Point2;
use posetrack_core::synthdata::{generate_dataset, DatasetManifest, GenerationConfig, PuppetRanges};
use posetrack_core::Pose;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair(seed: u64, spread: f64) -> (Pose, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, mut gt) = posetrack_core::synthdata::sample_puppet(&mut rng, 128, 128, &PuppetRanges::default());
    for v in gt.visibility.iter_mut() {
        *v = if rng.random_bool(0.85) { 1.0 } else { 0.0 };
    }
    let mut pred = gt.clone();
    for p in pred.points.iter_mut() {
        p.x += rng.random_range(-spread..=spread);
        p.y += rng.random_range(-spread..=spread);
    }
    (pred, gt)
}

fn decisions(pred: &Pose, gt: &Pose, cfg: &EvalConfig) -> Vec<Option<bool>> {
    pck(pred, gt, cfg)
        .unwrap()
        .keypoints
        .into_iter()
        .map(|(_, d)| d)
        .collect()
}

#[test]
fn perfect_prediction_scores_100_and_torso_is_hip_shoulder_distance() {
    let (_, gt) = pair(1, 0.0);
    let cfg = EvalConfig::default();
    assert_eq!(pck(&gt, &gt, &cfg).unwrap().pck(), Some(100.0));
    let expected = gt.mid_shoulder().distance(gt.mid_hip());
    assert_eq!(torso_size(&gt).unwrap(), expected);

    let mut flat = gt.clone();
    for i in [11, 12, 23, 24] {
        flat.points[i] = Point2::new(5.0, 5.0);
    }
    assert!(torso_size(&flat).is_err());
}

#[test]
fn boundary_is_strict() {
    let (_, gt) = pair(2, 0.0);
    let torso = torso_size(&gt).unwrap();
    let mut pred = gt.clone();
    pred.points[0].x += 0.2 * torso;
    let cfg = EvalConfig {
        subset: Subset::Full,
        ..EvalConfig::default()
    };
    let score = pck(&pred, &gt, &cfg).unwrap();
    let nose = score.keypoints.iter().find(|(id, _)| id.index() == 0).unwrap().1;
    if gt.visibility[0] >= 0.5 {
        assert_eq!(nose, Some(false));
    }
}

#[test]
fn invisible_rule_changes_the_denominator() {
    let (pred, gt) = pair(3, 4.0);
    let skip = pck(&pred, &gt, &EvalConfig::default()).unwrap();
    let strict = pck(
        &pred,
        &gt,
        &EvalConfig {
            invisible: InvisibleRule::CountIncorrect,
            ..EvalConfig::default()
        },
    )
    .unwrap();
    assert_eq!(strict.total(), 17);
    assert_eq!(strict.correct(), skip.correct());
    assert!(skip.total() <= 17);
}

#[test]
fn dataset_driver_and_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(6, 2, dir.path(), &GenerationConfig::default()).unwrap();
    let cfg = EvalConfig::default();
    let report = evaluate_dataset(|_, gt| Ok(gt.clone()), &manifest, &cfg, "oracle").unwrap();
    assert_eq!(report.aggregate(), 100.0);
    assert_eq!(report.frames(), 6);

    let same = annotator_agreement(&manifest, &manifest, &cfg).unwrap();
    assert_eq!(same.mean(), 100.0);

    let mut shifted = manifest.clone();
    for r in &mut shifted.records {
        for k in &mut r.keypoints {
            k[0] += 50.0;
        }
    }
    let far = annotator_agreement(&manifest, &shifted, &cfg).unwrap();
    assert!(far.mean() < 100.0);

    let fewer = manifest.slice(0..3);
    assert!(annotator_agreement(&manifest, &fewer, &cfg).is_err());
    let empty = DatasetManifest::default();
    assert!(evaluate_dataset(|_, gt| Ok(gt.clone()), &empty, &cfg, "x").is_err());
}

#[test]
fn csv_report_round_trips() {
    let cfg = EvalConfig::default();
    let mut reports = Vec::new();
    for (model, spread) in [("Full", 1.0), ("Lite", 6.0)] {
        for (dataset, seed) in [("AR", 10), ("Yoga", 20)] {
            let (preds, gts): (Vec<_>, Vec<_>) = (0..10).map(|i| pair(seed + i, spread)).unzip();
            let mut r = evaluate_poses(&preds, &gts, &cfg, model, dataset).unwrap();
            r.predictor_seconds = 0.5;
            reports.push(r);
        }
    }
    let csv = emit_report(&reports, ReportFormat::Csv).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["Model", "FPS", "AR PCK@0.2", "Yoga PCK@0.2"]);
    assert_eq!(rows.len(), 3);
    for (row, chunk) in rows[1..].iter().zip(reports.chunks(2)) {
        assert_eq!(row[0], chunk[0].model);
        assert_eq!(row[1].parse::<f64>().unwrap(), 20.0);
        for (cell, r) in row[2..].iter().zip(chunk) {
            assert!((cell.parse::<f64>().unwrap() - r.aggregate()).abs() <= 0.05);
        }
    }
    let md = emit_report(&reports[..1], ReportFormat::Markdown).unwrap();
    assert_eq!(md.lines().count(), 3);
    assert!(md.starts_with("| Model | FPS | AR PCK@0.2 |"));
}

#[test]
fn report_merge_is_count_addition() {
    let cfg = EvalConfig::default();
    let (preds, gts): (Vec<_>, Vec<_>) = (0..8).map(|i| pair(40 + i, 5.0)).unzip();
    let whole = evaluate_poses(&preds, &gts, &cfg, "m", "d").unwrap();
    let mut left = evaluate_poses(&preds[..3], &gts[..3], &cfg, "m", "d").unwrap();
    let right = evaluate_poses(&preds[3..], &gts[3..], &cfg, "m", "d").unwrap();
    left.merge(&right).unwrap();
    assert_eq!(left.totals(), whole.totals());
    assert_eq!(left.per_keypoint, whole.per_keypoint);
    let full = EvalConfig {
        subset: Subset::Full,
        ..cfg
    };
    let other = EvalReport::new("m", "d", &full);
    assert!(left.merge(&other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn similarity_invariance(seed in any::<u64>(), angle in -3.2f64..3.2, scale in 0.01f64..100.0,
                             tx in -1e3f64..1e3, ty in -1e3f64..1e3, spread in 0.0f64..15.0) {
        let (pred, gt) = pair(seed, spread);
        let cfg = EvalConfig::default();
        let (s, c) = angle.sin_cos();
        let f = |p: Point2<f64>| Point2::new(scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty);
        prop_assert_eq!(
            decisions(&pred.map_points(f), &gt.map_points(f), &cfg),
            decisions(&pred, &gt, &cfg)
        );
    }

    #[test]
    fn tolerance_is_monotone(seed in any::<u64>(), spread in 0.0f64..20.0, lo in 0.01f64..1.0, step in 0.0f64..1.0) {
        let (pred, gt) = pair(seed, spread);
        let cfg = EvalConfig::default();
        let a = pck(&pred, &gt, &cfg.with_tolerance(lo)).unwrap();
        let b = pck(&pred, &gt, &cfg.with_tolerance(lo + step)).unwrap();
        prop_assert!(b.correct() >= a.correct());
        for ((_, x), (_, y)) in a.keypoints.iter().zip(&b.keypoints) {
            if *x == Some(true) {
                prop_assert_eq!(*y, Some(true));
            }
        }
    }
}

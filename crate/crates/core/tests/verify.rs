use std::path::PathBuf;

use stokolmo::boundary::AnalysisConfig;
use stokolmo::classifier::{classify, VerdictKind};
use stokolmo::linalg::Matrix;
use stokolmo::model::{Dynamics, Face, KolmogorovModel};
use stokolmo::sde::{LogGrid, OccupationHistogram, SimConfig};
use stokolmo::verify::{
    detect_blowup_signature, estimate_basin_probabilities, tv_distance, verify_verdict, PathClass, VerificationStatus,
    VerifyConfig, VerifyError,
};

fn load(name: &str) -> KolmogorovModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name);
    KolmogorovModel::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn quick(t_max: f64, n_paths: usize, seed: u64) -> VerifyConfig {
    VerifyConfig {
        sim: SimConfig {
            t_max,
            burn_in: t_max / 10.0,
            n_paths,
            seed,
            ..SimConfig::default()
        },
        ..VerifyConfig::default()
    }
}

fn face(idx: &[usize]) -> Face {
    Face::from_indices(idx.iter().copied())
}

#[test]
fn tv_of_identical_and_disjoint_histograms() {
    let grid = LogGrid::uniform(1, -1.0, 1.0, 4);
    let mut a = OccupationHistogram::empty(grid.clone());
    let mut b = OccupationHistogram::empty(grid.clone());
    a.add(&[-0.75], 1.0);
    b.add(&[0.75], 2.0);
    assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
    assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
    let other = OccupationHistogram::empty(LogGrid::uniform(1, -1.0, 1.0, 5));
    assert_eq!(tv_distance(&a, &other), Err(VerifyError::GridMismatch));
}

#[test]
fn extinction_instance_is_confirmed() {
    let m = load("lv_extinct.json");
    let c = classify(&m, &AnalysisConfig::default());
    let r = verify_verdict(&m, &c.verdict, &quick(100.0, 60, 4)).unwrap();
    assert_eq!(r.status, VerificationStatus::Passed, "{:?}", r.failures());
    let b = r.basins.unwrap();
    assert!(b.basins[0].count * 100 >= 95 * b.total);
    let total: usize = r.path_classes.iter().map(|c| c.count).sum();
    assert_eq!(total, 60);
}

#[test]
fn coexistence_moments_and_convergence() {
    let m = load("lv_coexist.json");
    let c = classify(&m, &AnalysisConfig::default());
    let r = verify_verdict(&m, &c.verdict, &quick(200.0, 40, 6)).unwrap();
    assert_eq!(r.status, VerificationStatus::Passed, "{:?}", r.failures());
    assert_eq!(r.tv_curve.len(), 5);
    let means: Vec<f64> = r.checks.iter().filter(|c| c.name.starts_with("interior mean")).map(|c| c.observed).collect();
    assert_eq!(means.len(), 2);
    assert!(means.iter().all(|v| (v / (5.0 / 6.0) - 1.0).abs() < 0.03));
}

#[test]
fn bistable_basins_split() {
    let m = load("lv_bistable.json");
    let faces = vec![("mu_1".to_string(), face(&[0])), ("mu_2".to_string(), face(&[1]))];
    let b = estimate_basin_probabilities(&m, &faces, &quick(50.0, 100, 2)).unwrap();
    assert_eq!(b.assigned() + b.interior + b.blowup + b.other, b.total);
    assert!(b.basins.iter().all(|s| s.count > 0), "{b:?}");
    assert!(b.unassigned_fraction <= 0.05);
    // Symmetric start: the two shares agree within their intervals.
    let (p1, p2) = (&b.basins[0], &b.basins[1]);
    assert!(p1.ci.0 <= 0.5 && 0.5 <= p1.ci.1 || p2.ci.0 <= 0.5 && 0.5 <= p2.ci.1, "{b:?}");
}

#[test]
fn start_on_a_face_stays_there() {
    let m = load("lv_bistable.json");
    let faces = vec![("mu_1".to_string(), face(&[0])), ("mu_2".to_string(), face(&[1]))];
    let cfg = VerifyConfig {
        x0: Some(vec![1.0, 0.0]),
        ..quick(20.0, 30, 3)
    };
    let b = estimate_basin_probabilities(&m, &faces, &cfg).unwrap();
    assert_eq!(b.basins[0].count, 30);
}

#[test]
fn single_attractor_takes_every_path() {
    let m = load("lv_extinct.json");
    let b = estimate_basin_probabilities(&m, &[("mu_1".into(), face(&[0]))], &quick(50.0, 50, 9)).unwrap();
    assert!(b.basins[0].ci.1 >= 1.0 - 1e-12 && b.basins[0].count == 50);
}

#[test]
fn cooperative_signature_is_positive() {
    let s = detect_blowup_signature(&load("coop_blowup.json"), &quick(100.0, 200, 8)).unwrap();
    assert!(s.positive, "{s:?}");
    assert!(s.slope.mean >= 3.0 - 3.0 * s.slope.se, "{s:?}");
    assert!(s.blowup_count * 100 >= 99 * 200);
}

#[test]
fn competitive_signature_has_no_blowup() {
    let s = detect_blowup_signature(&load("lv_coexist.json"), &quick(100.0, 50, 8)).unwrap();
    assert_eq!(s.blowup_count, 0);
    assert!(!s.positive, "{s:?}");
}

#[test]
fn deterministic_stable_node_has_zero_slope() {
    let m = KolmogorovModel::new(
        Dynamics::Lv {
            a: vec![3.0, 3.0],
            b: Matrix::from_rows(&[vec![-2.0, -1.0], vec![-1.0, -2.0]]).unwrap(),
            g: vec![0.0, 0.0],
        },
        Matrix::identity(2),
    )
    .unwrap();
    let s = detect_blowup_signature(&m, &quick(500.0, 2, 1)).unwrap();
    assert!(s.slope.mean.abs() < 0.01, "{s:?}");
}

#[test]
fn blowup_verdict_reports_fraction() {
    let m = load("coop_blowup.json");
    let c = classify(&m, &AnalysisConfig::default());
    assert!(matches!(c.verdict.kind, VerdictKind::BlowUpRisk { .. }));
    let r = verify_verdict(&m, &c.verdict, &quick(100.0, 50, 5)).unwrap();
    assert_eq!(r.status, VerificationStatus::Passed);
    assert!(r.blowup_fraction > 0.9);
    assert!(r.path_classes.iter().any(|c| c.class == PathClass::BlowUp));
}

#[test]
fn inconclusive_verdicts_are_not_verified() {
    let m = KolmogorovModel::new(
        Dynamics::Lv {
            a: vec![0.5],
            b: Matrix::from_diag(&[-1.0]),
            g: vec![1.0],
        },
        Matrix::identity(1),
    )
    .unwrap();
    let c = classify(&m, &AnalysisConfig::default());
    assert!(matches!(c.verdict.kind, VerdictKind::Inconclusive { .. }), "{:?}", c.verdict.kind);
    assert_eq!(verify_verdict(&m, &c.verdict, &quick(10.0, 2, 1)), Err(VerifyError::Inconclusive));
}

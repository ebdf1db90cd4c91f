use std::path::PathBuf;

use stokolmo::boundary::{AnalysisConfig, FaceStatus, Provenance, Representation};
use stokolmo::classifier::{classify, ConditionStatus, ExtinctionConclusion, VerdictKind};
use stokolmo::foodchain::{classify_food_chain, FoodChainParams};
use stokolmo::model::{Face, KolmogorovModel};

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> KolmogorovModel {
    let text = std::fs::read_to_string(models_dir().join(name)).unwrap();
    KolmogorovModel::from_json_str(&text).unwrap()
}

fn face(idx: &[usize]) -> Face {
    Face::from_indices(idx.iter().copied())
}

#[test]
fn coexistence_is_persistent() {
    let c = classify(&load("lv_coexist.json"), &AnalysisConfig::default());
    let VerdictKind::Persistent { certificate } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert!((certificate.rho_star - 0.3125).abs() < 1e-9, "{certificate:?}");
    let labels: Vec<&str> = c.boundary.as_ref().unwrap().measures().iter().map(|m| m.label.as_str()).collect();
    assert_eq!(labels, ["delta*", "mu_1", "mu_2"]);
}

#[test]
fn single_extinction() {
    let c = classify(&load("lv_extinct.json"), &AnalysisConfig::default());
    let VerdictKind::Extinction { partition, rates, conclusion } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert_eq!(partition.m1, ["mu_1"]);
    assert_eq!(*conclusion, ExtinctionConclusion::Full);
    assert_eq!(rates[0].rates.len(), 1);
    assert_eq!(rates[0].rates[0].species, 2);
    assert!((rates[0].rates[0].lambda + 6.5).abs() < 1e-12);
}

#[test]
fn bistable_has_two_attractors() {
    let c = classify(&load("lv_bistable.json"), &AnalysisConfig::default());
    let VerdictKind::Extinction { partition, .. } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert_eq!(partition.m1, ["mu_1", "mu_2"]);
    assert_eq!(partition.m2, ["delta*"]);
    assert_eq!(partition.a_extn3_status, ConditionStatus::Pass);
}

#[test]
fn total_extinction() {
    let c = classify(&load("lv_total_extinct.json"), &AnalysisConfig::default());
    let VerdictKind::Extinction { partition, rates, .. } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert_eq!(partition.m1, ["delta*"]);
    assert_eq!(partition.a_extn3_status, ConditionStatus::Vacuous);
    let l: Vec<f64> = rates[0].rates.iter().map(|r| r.lambda).collect();
    assert!((l[0] + 0.2).abs() < 1e-12 && (l[1] + 0.3).abs() < 1e-12);
}

#[test]
fn predator_prey_persists() {
    let c = classify(&load("predator_prey.json"), &AnalysisConfig::default());
    assert!(matches!(c.verdict.kind, VerdictKind::Persistent { .. }), "{:?}", c.verdict);
    let t = &c.boundary.unwrap().table;
    let k = t.index_of(face(&[0])).unwrap();
    assert!((t.lambda[k][1] - 1.0).abs() < 1e-12);
}

#[test]
fn two_predators_one_prey() {
    let c = classify(&load("two_predators.json"), &AnalysisConfig::default());
    let b = c.boundary.as_ref().unwrap();
    let labels: Vec<&str> = b.measures().iter().map(|m| m.label.as_str()).collect();
    assert_eq!(labels, ["delta*", "mu_1", "mu_12"]);
    let t = &b.table;
    let m1 = t.index_of(face(&[0])).unwrap();
    let m12 = t.index_of(face(&[0, 1])).unwrap();
    assert!((t.measures[m1].moments()[0] - 2.5).abs() < 1e-12);
    assert!((t.lambda[m1][1] - 1.5).abs() < 1e-12);
    assert!((t.lambda[m1][2] + 1.25).abs() < 1e-12);
    let mom = t.measures[m12].moments();
    assert!((mom[0] - 1.75).abs() < 1e-12 && (mom[1] - 0.75).abs() < 1e-12);
    assert!((t.lambda[m12][2] + 2.375).abs() < 1e-12);
    let VerdictKind::Extinction { partition, .. } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert_eq!(partition.m1, ["mu_12"]);
}

#[test]
fn cooperative_model_is_blowup_risk() {
    let c = classify(&load("coop_blowup.json"), &AnalysisConfig::default());
    let VerdictKind::BlowUpRisk { reason } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert!(reason.contains("b_1b_2−c_1c_2<0"), "{reason}");
}

#[test]
fn general_two_species_is_persistent() {
    let c = classify(&load("general_holling.json"), &AnalysisConfig::default());
    assert!(matches!(c.verdict.kind, VerdictKind::Persistent { .. }), "{:?}", c.verdict);
    let t = &c.boundary.unwrap().table;
    let k = t.index_of(face(&[0])).unwrap();
    assert_eq!(t.measures[k].provenance, Provenance::Quadrature);
    assert!((t.lambda[0][0] - 1.0).abs() < 1e-12);
    assert!(t.lambda[k][1] > 0.5, "{}", t.lambda[k][1]);
}

#[test]
fn general_three_species_loses_the_top() {
    let c = classify(&load("general_holling3.json"), &AnalysisConfig::default());
    let VerdictKind::Extinction { partition, rates, .. } = &c.verdict.kind else { panic!("{:?}", c.verdict) };
    assert_eq!(partition.m1, ["mu_12"]);
    assert!(rates[0].rates[0].lambda < -1.0);
    let b = c.boundary.unwrap();
    let k = b.table.index_of(face(&[0, 1])).unwrap();
    assert_eq!(b.table.measures[k].provenance, Provenance::MonteCarlo);
    assert!(matches!(b.table.measures[k].representation, Representation::Empirical(_)));
    let f13 = b.faces.iter().find(|f| f.face == face(&[0, 2])).unwrap();
    assert!(matches!(&f13.status, FaceStatus::NoInterior { attractor } if attractor == "mu_1"));
}

#[test]
fn food_chain_agrees_with_general_pipeline() {
    for (name, survivors) in [("foodchain_persistent.json", 3), ("foodchain_apex_extinct.json", 2)] {
        let text = std::fs::read_to_string(models_dir().join(name)).unwrap();
        let p = FoodChainParams::from_json_str(&text).unwrap();
        let fast = classify_food_chain(&p, 1e-9);
        assert_eq!(fast.j_star, survivors);
        let general = classify(&p.to_model().unwrap(), &AnalysisConfig::default());
        let alive: Vec<usize> = match &general.verdict.kind {
            VerdictKind::Persistent { .. } => (0..3).collect(),
            VerdictKind::Extinction { partition, rates, .. } => {
                assert_eq!(partition.m1.len(), 1, "{partition:?}");
                rates[0].support.indices()
            }
            other => panic!("{other:?}"),
        };
        assert_eq!(alive, fast.survivors(), "{name}");
    }
}

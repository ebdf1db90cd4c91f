//! Persistence and extinction verdicts from an invasion-rate table.
//!
//! Conditions over the convex hull of a set of ergodic measures reduce to
//! finitely many linear constraints because `μ ↦ λ_i(μ)` is linear, so each
//! test is a small maximin linear program over the simplex of species
//! weights.

use serde::Serialize;

use crate::assumptions::{AssumptionReport, CheckStatus, SampleSpec};
use crate::boundary::{find_boundary_measures, AnalysisConfig, BoundaryAnalysis, FaceStatus, InvasionRateTable};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::model::{Face, KolmogorovModel};

/// Lower bound on every maximin weight.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Maximin {
    pub p: Vec<f64>,
    /// `min_μ Σ_i p_i λ_i(μ)` at the optimal `p`.
    pub t_star: f64,
    /// Row attaining the minimum.
    pub argmin: usize,
}

/// `max_{p ∈ Δ, p_i ≥ 1e-6} min_μ Σ_i p_i rows[μ][i]`.
///
/// With `p = ε + q` and `t = u − v` the problem becomes a standard-form LP
/// in `(q, u, v) ≥ 0`.
pub fn maximin(rows: &[Vec<f64>]) -> Maximin {
    assert!(!rows.is_empty(), "maximin needs at least one row");
    let n = rows[0].len();
    assert!(n > 0 && rows.iter().all(|r| r.len() == n));
    let eps = WEIGHT_FLOOR;
    let mut objective = vec![0.0; n + 2];
    objective[n] = 1.0;
    objective[n + 1] = -1.0;
    let mut lp = LinearProgram::maximize(objective);
    for r in rows {
        let mut c: Vec<f64> = r.iter().map(|v| -v).collect();
        c.push(1.0);
        c.push(-1.0);
        lp.constraint(c, Relation::Le, eps * r.iter().sum::<f64>());
    }
    let mut simplex = vec![1.0; n];
    simplex.extend([0.0, 0.0]);
    lp.constraint(simplex, Relation::Eq, 1.0 - n as f64 * eps);
    let LpOutcome::Optimal { x, .. } = lp.solve() else {
        unreachable!("bounded and feasible by construction");
    };
    let mut p: Vec<f64> = x[..n].iter().map(|q| eps + q).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    let (argmin, t_star) = weighted_min(rows, &p);
    Maximin { p, t_star, argmin }
}

fn weighted_min(rows: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    rows.iter()
        .map(|r| r.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best })
}

/// Maximin on the table's decision values (zero on each measure's support).
pub fn maximin_weights(table: &InvasionRateTable) -> Maximin {
    let n = table.lambda.first().map_or(0, |r| r.len());
    let all: Vec<usize> = (0..table.len()).collect();
    face_margin(table, Face::full(n), &all, 0.0).point
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decision {
    Positive,
    Negative,
    Undecided,
}

/// Maximin margins on the lower ends, point values and upper ends of the
/// entry intervals. The margin is monotone in every entry, so the true
/// margin lies between `lower` and `upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginBounds {
    pub lower: Maximin,
    pub point: Maximin,
    pub upper: Maximin,
    /// Table rows, in `argmin` order.
    pub measures: Vec<usize>,
}

impl MarginBounds {
    pub fn decision(&self, tol: f64) -> Decision {
        if self.lower.t_star > tol {
            Decision::Positive
        } else if self.upper.t_star < -tol {
            Decision::Negative
        } else {
            Decision::Undecided
        }
    }
}

/// Margin of the species in `face` against the listed table rows.
pub fn face_margin(table: &InvasionRateTable, face: Face, measures: &[usize], tol: f64) -> MarginBounds {
    let species = face.indices();
    let pick = |which: fn((f64, f64), f64) -> f64| -> Vec<Vec<f64>> {
        measures
            .iter()
            .map(|&mu| {
                species
                    .iter()
                    .map(|&i| {
                        let point = if table.measures[mu].support.contains(i) { 0.0 } else { table.lambda[mu][i] };
                        which(table.bounds(mu, i, tol), point)
                    })
                    .collect()
            })
            .collect()
    };
    MarginBounds {
        lower: maximin(&pick(|b, _| b.0)),
        point: maximin(&pick(|_, p| p)),
        upper: maximin(&pick(|b, _| b.1)),
        measures: measures.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tri {
    True,
    False,
    Undetermined,
}

/// Whether measure `mu` attracts the subsystem on `universe`: every species
/// of `universe` off the support of `mu` has a negative rate, and `mu`'s own
/// subsystem is persistent against the measures on its boundary.
pub fn extinction_status(table: &InvasionRateTable, mu: usize, universe: Face, tol: f64) -> Tri {
    let support = table.measures[mu].support;
    let mut undetermined = false;
    for i in universe.indices() {
        if support.contains(i) {
            continue;
        }
        let (lo, hi) = table.bounds(mu, i, tol);
        if lo > 0.0 {
            return Tri::False;
        }
        if hi >= 0.0 {
            undetermined = true;
        }
    }
    if !support.is_empty() {
        let sub: Vec<usize> = (0..table.len())
            .filter(|&nu| table.measures[nu].support.is_proper_subset_of(support))
            .collect();
        match face_margin(table, support, &sub, tol).decision(tol) {
            Decision::Positive => {}
            Decision::Negative => return Tri::False,
            Decision::Undecided => undetermined = true,
        }
    }
    if undetermined {
        Tri::Undetermined
    } else {
        Tri::True
    }
}

/// Whether measure `mu` attracts the full system.
pub fn check_extinction_measure(table: &InvasionRateTable, mu: usize, tol: f64) -> Tri {
    let n = table.lambda[mu].len();
    extinction_status(table, mu, Face::full(n), tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceCertificate {
    pub p: Vec<f64>,
    /// Half the attained margin.
    pub rho_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refusal {
    /// Measure attaining the minimum.
    pub argmin: String,
    pub t_star: f64,
    pub reason: String,
}

pub fn check_persistence(table: &InvasionRateTable, tol: f64) -> Result<PersistenceCertificate, Refusal> {
    let n = table.lambda.first().map_or(0, |r| r.len());
    let all: Vec<usize> = (0..table.len()).collect();
    let m = face_margin(table, Face::full(n), &all, tol);
    let label = |k: usize| table.measures[m.measures[k]].label.clone();
    match m.decision(tol) {
        Decision::Positive if m.point.t_star > tol => Ok(PersistenceCertificate {
            p: m.point.p.clone(),
            rho_star: 0.5 * m.point.t_star,
        }),
        _ if m.point.t_star > tol => Refusal {
            argmin: label(m.lower.argmin),
            t_star: m.point.t_star,
            reason: format!(
                "margin {:e} is not resolved against the entry uncertainty at {}: tighten Monte Carlo budget",
                m.point.t_star,
                label(m.lower.argmin)
            ),
        }
        .into_err(),
        _ => Refusal {
            argmin: label(m.point.argmin),
            t_star: m.point.t_star,
            reason: format!(
                "no positive weighting: maximin margin {:e} at {}",
                m.point.t_star,
                label(m.point.argmin)
            ),
        }
        .into_err(),
    }
}

impl Refusal {
    fn into_err<T>(self) -> Result<T, Refusal> {
        Err(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionStatus {
    Pass,
    Fail,
    Vacuous,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurePartition {
    /// Labels of the attracting measures.
    pub m1: Vec<String>,
    pub m2: Vec<String>,
    /// Every measure in the convex hull of `m2` has a positive rate.
    pub a_extn3_status: ConditionStatus,
    #[serde(skip)]
    pub m1_rows: Vec<usize>,
    #[serde(skip)]
    pub m2_rows: Vec<usize>,
}

/// Splits the table into attracting measures and the rest. Fails with the
/// labels whose membership cannot be decided.
pub fn partition_measures(table: &InvasionRateTable, tol: f64) -> Result<MeasurePartition, Vec<String>> {
    let (mut m1, mut m2, mut unknown) = (Vec::new(), Vec::new(), Vec::new());
    for mu in 0..table.len() {
        match check_extinction_measure(table, mu, tol) {
            Tri::True => m1.push(mu),
            Tri::False => m2.push(mu),
            Tri::Undetermined => unknown.push(table.measures[mu].label.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(unknown);
    }
    let n = table.lambda.first().map_or(0, |r| r.len());
    let a_extn3_status = if m2.is_empty() {
        ConditionStatus::Vacuous
    } else {
        match face_margin(table, Face::full(n), &m2, tol).decision(tol) {
            Decision::Positive => ConditionStatus::Pass,
            Decision::Negative => ConditionStatus::Fail,
            Decision::Undecided => ConditionStatus::Undetermined,
        }
    };
    let labels = |rows: &[usize]| rows.iter().map(|&k| table.measures[k].label.clone()).collect();
    Ok(MeasurePartition {
        m1: labels(&m1),
        m2: labels(&m2),
        a_extn3_status,
        m1_rows: m1,
        m2_rows: m2,
    })
}

/// Predicted exponent of one species near an attracting measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedRate {
    /// 1-based species label.
    pub species: usize,
    pub lambda: f64,
    pub ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractorRates {
    pub measure: String,
    pub support: Face,
    pub rates: Vec<PredictedRate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtinctionConclusion {
    /// Paths settle on the attracting faces with probability one and the
    /// absent species decay at the predicted rates.
    Full,
    /// Only convergence towards the boundary is guaranteed.
    BoundaryConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum VerdictKind {
    Persistent {
        certificate: PersistenceCertificate,
    },
    Extinction {
        partition: MeasurePartition,
        rates: Vec<AttractorRates>,
        conclusion: ExtinctionConclusion,
    },
    BlowUpRisk {
        reason: String,
    },
    Inconclusive {
        reasons: Vec<String>,
    },
}

impl VerdictKind {
    pub fn name(&self) -> &'static str {
        match self {
            VerdictKind::Persistent { .. } => "Persistent",
            VerdictKind::Extinction { .. } => "Extinction",
            VerdictKind::BlowUpRisk { .. } => "BlowUpRisk",
            VerdictKind::Inconclusive { .. } => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub kind: VerdictKind,
    /// Reported alongside the verdict rather than inside it.
    #[serde(skip)]
    pub assumptions: AssumptionReport,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Absent when the pipeline stopped before boundary discovery.
    pub boundary: Option<BoundaryAnalysis>,
}

fn attractor_rates(table: &InvasionRateTable, rows: &[usize]) -> Vec<AttractorRates> {
    rows.iter()
        .map(|&mu| {
            let m = &table.measures[mu];
            let n = table.lambda[mu].len();
            AttractorRates {
                measure: m.label.clone(),
                support: m.support,
                rates: (0..n)
                    .filter(|i| !m.support.contains(*i))
                    .map(|i| PredictedRate {
                        species: i + 1,
                        lambda: table.lambda[mu][i],
                        ci: table.ci[mu][i],
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Assumption checks, boundary discovery, then the persistence and
/// extinction criteria. Every failure mode becomes a verdict kind.
pub fn classify(model: &KolmogorovModel, cfg: &AnalysisConfig) -> Classification {
    let assumptions = AssumptionReport::run(model, &SampleSpec::default());
    let mut notes = Vec::new();
    let done = |kind, assumptions, notes, boundary| Classification {
        verdict: Verdict { kind, assumptions, notes },
        boundary,
    };
    if assumptions.nondegenerate.status != CheckStatus::Pass {
        if cfg.allow_degenerate {
            notes.push(format!(
                "nondegeneracy check overridden: {}",
                assumptions.nondegenerate.reason
            ));
        } else {
            let reason = format!("noise is degenerate: {}", assumptions.nondegenerate.reason);
            return done(VerdictKind::Inconclusive { reasons: vec![reason] }, assumptions, notes, None);
        }
    }
    match assumptions.tightness.status {
        CheckStatus::Fail => {
            let reason = assumptions.tightness.reason.clone();
            return done(VerdictKind::BlowUpRisk { reason }, assumptions, notes, None);
        }
        CheckStatus::HeuristicFail => notes.push(format!(
            "tightness not confirmed by sampling: {}",
            assumptions.tightness.reason
        )),
        _ => {}
    }
    let boundary = find_boundary_measures(model, cfg);
    let unresolved: Vec<String> = boundary
        .faces
        .iter()
        .filter_map(|f| match &f.status {
            FaceStatus::Unresolved { reason } => Some(format!("face {}: {reason}", f.face)),
            _ => None,
        })
        .collect();
    if !unresolved.is_empty() {
        return done(VerdictKind::Inconclusive { reasons: unresolved }, assumptions, notes, Some(boundary));
    }
    if boundary.measures().iter().any(|m| m.provenance != crate::boundary::Provenance::Analytic) {
        notes.push("some boundary measures are numerical; their uniqueness is not certified".into());
    }
    let table = &boundary.table;
    let tol = cfg.decision_tol;
    let persistence = check_persistence(table, tol);
    let partition = partition_measures(table, tol);
    let kind = match (persistence, partition) {
        (Ok(certificate), part) => {
            assert!(
                !matches!(&part, Ok(p) if !p.m1.is_empty()),
                "a persistence certificate excludes attracting boundary measures"
            );
            VerdictKind::Persistent { certificate }
        }
        (Err(refusal), Ok(partition)) if !partition.m1.is_empty() => {
            notes.push(format!("persistence refused: {}", refusal.reason));
            let full = assumptions.growth.status.is_pass()
                && matches!(partition.a_extn3_status, ConditionStatus::Pass | ConditionStatus::Vacuous);
            if !full {
                notes.push(format!(
                    "only convergence to the boundary is concluded (growth condition {:?}, convex-hull condition {:?})",
                    assumptions.growth.status, partition.a_extn3_status
                ));
            }
            VerdictKind::Extinction {
                rates: attractor_rates(table, &partition.m1_rows),
                partition,
                conclusion: if full {
                    ExtinctionConclusion::Full
                } else {
                    ExtinctionConclusion::BoundaryConvergence
                },
            }
        }
        (Err(refusal), Ok(_)) => VerdictKind::Inconclusive {
            reasons: vec![format!(
                "persistence refused ({}) and no boundary measure is an attractor",
                refusal.reason
            )],
        },
        (Err(refusal), Err(unknown)) => VerdictKind::Inconclusive {
            reasons: vec![
                format!("persistence refused: {}", refusal.reason),
                format!("attractor status undecidable for {}", unknown.join(", ")),
            ],
        },
    };
    done(kind, assumptions, notes, Some(boundary))
}

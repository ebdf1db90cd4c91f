//! Monte Carlo evidence for a verdict: empirical exponents, occupation
//! convergence, basin probabilities and blow-up statistics.

use serde::Serialize;
use thiserror::Error;

use crate::boundary::lv_face_equilibrium;
use crate::classifier::{Verdict, VerdictKind};
use crate::model::{Dynamics, Face, KolmogorovModel};
use crate::sde::{simulate_ensemble, Ensemble, EnsembleOptions, LogGrid, OccupationHistogram, SimConfig, SimError};
use crate::stats::{wilson_interval, MeanSe};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("an inconclusive verdict has no predictions to verify")]
    Inconclusive,
    #[error("histograms live on different grids")]
    GridMismatch,
    #[error("blow-up signature needs a two-species Lotka–Volterra model")]
    NotTwoSpeciesLv,
    #[error("initial state has {got} entries for a {n}-species model")]
    InitialState { got: usize, n: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub sim: SimConfig,
    /// Initial state; all ones when absent.
    pub x0: Option<Vec<f64>>,
    /// Cell budget of the occupation grid.
    pub grid_cells: usize,
    /// Number of doublings in the occupation convergence curve.
    pub tv_windows: usize,
    pub tv_tolerance: f64,
    /// Relative tolerance on interior occupation moments.
    pub moment_rtol: f64,
    /// Width of acceptance bands in standard errors.
    pub se_band: f64,
    /// Largest admissible fraction of paths outside every predicted basin.
    pub unassigned_limit: f64,
    /// Normal quantile for binomial intervals.
    pub z: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            sim: SimConfig::default(),
            x0: None,
            grid_cells: 1024,
            tv_windows: 5,
            tv_tolerance: 0.05,
            moment_rtol: 0.03,
            se_band: 3.0,
            unassigned_limit: 0.10,
            z: 1.96,
        }
    }
}

impl VerifyConfig {
    fn start(&self, n: usize) -> Result<Vec<f64>, VerifyError> {
        match &self.x0 {
            Some(x) if x.len() != n => Err(VerifyError::InitialState { got: x.len(), n }),
            Some(x) => Ok(x.clone()),
            None => Ok(vec![1.0; n]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentSummary {
    /// 1-based species label.
    pub species: usize,
    #[serde(flatten)]
    pub stats: MeanSe,
}

/// Terminal state of a path at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "class", content = "face", rename_all = "kebab-case")]
pub enum PathClass {
    Interior,
    BlowUp,
    /// Surviving species; the rest are below the extinction threshold.
    Face(Face),
}

pub fn classify_path(y_end: &[f64], blew_up: bool, extinct_log_threshold: f64) -> PathClass {
    if blew_up {
        return PathClass::BlowUp;
    }
    let alive = Face::from_indices((0..y_end.len()).filter(|&i| y_end[i] >= extinct_log_threshold));
    if alive == Face::full(y_end.len()) {
        PathClass::Interior
    } else {
        PathClass::Face(alive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub class: PathClass,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinShare {
    pub label: String,
    pub face: Face,
    pub count: usize,
    pub p: f64,
    pub ci: (f64, f64),
}

/// Share of paths settling on each attracting face. `basins`, `interior`,
/// `blowup` and `other` count every path exactly once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinEstimate {
    pub basins: Vec<BasinShare>,
    pub interior: usize,
    pub blowup: usize,
    /// Paths on faces that are not predicted attractors.
    pub other: usize,
    pub total: usize,
    pub unassigned_fraction: f64,
    /// The horizon left too many paths unassigned.
    pub low_confidence: bool,
}

impl BasinEstimate {
    pub fn assigned(&self) -> usize {
        self.basins.iter().map(|b| b.count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvPoint {
    pub t: f64,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupSignature {
    /// `(b_2, b_1)`, the weights of `ln X_1` and `ln X_2`.
    pub weights: (f64, f64),
    /// Per-path slope of the weighted log-sum up to the last step before
    /// the halt.
    pub slope: MeanSe,
    pub blowup_count: usize,
    pub blowup_fraction: f64,
    /// Slope exceeds zero by more than the band.
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerificationStatus {
    Passed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub config: SimConfig,
    pub x0: Vec<f64>,
    pub exponents: Vec<ExponentSummary>,
    pub path_classes: Vec<ClassCount>,
    pub basins: Option<BasinEstimate>,
    pub tv_curve: Vec<TvPoint>,
    pub blowup_count: usize,
    pub blowup_fraction: f64,
    pub signature: Option<BlowupSignature>,
    /// Integration steps taken over all paths.
    pub path_steps: u64,
    pub checks: Vec<Check>,
    pub status: VerificationStatus,
}

impl EnsembleReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

pub fn tv_distance(h1: &OccupationHistogram, h2: &OccupationHistogram) -> Result<f64, VerifyError> {
    if h1.grid != h2.grid {
        return Err(VerifyError::GridMismatch);
    }
    let (p, q) = (h1.masses(), h2.masses());
    let d: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).collect();
    Ok((0.5 * crate::stats::pairwise_sum(&d)).min(1.0))
}

/// Checkpoints `burn_in + (t_max − burn_in)/2^m` for `m = windows..0`.
fn checkpoints(cfg: &SimConfig, windows: usize) -> Vec<f64> {
    let span = cfg.t_max - cfg.burn_in;
    let mut c = vec![cfg.burn_in];
    c.extend((0..=windows).rev().map(|m| cfg.burn_in + span / 2f64.powi(m as i32)));
    c
}

/// TV between occupation up to successive checkpoints.
fn tv_curve(ens: &Ensemble, marks: &[f64]) -> Vec<TvPoint> {
    let cumulative = |k: usize| {
        let parts: Vec<&OccupationHistogram> = ens.occupation[..k].iter().collect();
        OccupationHistogram::pool(&parts).expect("nonempty")
    };
    (1..ens.occupation.len())
        .map(|k| TvPoint {
            t: marks[k + 1],
            tv: tv_distance(&cumulative(k), &cumulative(k + 1)).expect("shared grid"),
        })
        .collect()
}

fn run(model: &KolmogorovModel, cfg: &VerifyConfig) -> Result<(Vec<f64>, Ensemble, Vec<f64>), VerifyError> {
    let x0 = cfg.start(model.n())?;
    let marks = checkpoints(&cfg.sim, cfg.tv_windows);
    let opts = EnsembleOptions {
        grid: Some(LogGrid::with_cell_budget(model.n(), -12.0, 8.0, cfg.grid_cells)),
        segments: marks.clone(),
        ..EnsembleOptions::default()
    };
    let ens = simulate_ensemble(model, &x0, &cfg.sim, &opts)?;
    Ok((x0, ens, marks))
}

fn path_classes(ens: &Ensemble) -> Vec<PathClass> {
    ens.paths
        .iter()
        .map(|p| classify_path(&p.y_end, p.flags.blowup.is_some(), ens.config.extinct_log_threshold))
        .collect()
}

fn basins_from(classes: &[PathClass], n: usize, faces: &[(String, Face)], cfg: &VerifyConfig) -> BasinEstimate {
    let total = classes.len();
    let count = |c: PathClass| classes.iter().filter(|x| **x == c).count();
    let basins: Vec<BasinShare> = faces
        .iter()
        .map(|(label, face)| {
            let k = if *face == Face::full(n) { count(PathClass::Interior) } else { count(PathClass::Face(*face)) };
            BasinShare {
                label: label.clone(),
                face: *face,
                count: k,
                p: k as f64 / total.max(1) as f64,
                ci: wilson_interval(k, total, cfg.z),
            }
        })
        .collect();
    let interior = if faces.iter().any(|(_, f)| *f == Face::full(n)) { 0 } else { count(PathClass::Interior) };
    let blowup = count(PathClass::BlowUp);
    let assigned: usize = basins.iter().map(|b| b.count).sum();
    let other = total - assigned - interior - blowup;
    let unassigned_fraction = (total - assigned) as f64 / total.max(1) as f64;
    BasinEstimate {
        basins,
        interior,
        blowup,
        other,
        total,
        unassigned_fraction,
        low_confidence: unassigned_fraction > cfg.unassigned_limit,
    }
}

/// Share of paths from `cfg.x0` ending on each listed face. Zero entries
/// of the start pin those species, and the paths run on the face of the
/// positive ones.
pub fn estimate_basin_probabilities(
    model: &KolmogorovModel,
    m1_faces: &[(String, Face)],
    cfg: &VerifyConfig,
) -> Result<BasinEstimate, VerifyError> {
    let n = model.n();
    let x0 = cfg.start(n)?;
    let start = Face::from_indices((0..n).filter(|&i| x0[i] != 0.0));
    if start.is_empty() {
        let classes = vec![PathClass::Face(Face::EMPTY); cfg.sim.n_paths];
        return Ok(basins_from(&classes, n, m1_faces, cfg));
    }
    let local: Vec<f64> = start.indices().iter().map(|&i| x0[i]).collect();
    let sub = model.restrict_to_face(start);
    let ens = simulate_ensemble(&sub, &local, &cfg.sim, &EnsembleOptions::default())?;
    let species = start.indices();
    let classes: Vec<PathClass> = ens
        .paths
        .iter()
        .map(|p| {
            if p.flags.blowup.is_some() {
                return PathClass::BlowUp;
            }
            let alive = Face::from_indices(
                (0..species.len())
                    .filter(|&k| p.y_end[k] >= cfg.sim.extinct_log_threshold)
                    .map(|k| species[k]),
            );
            if alive == Face::full(n) {
                PathClass::Interior
            } else {
                PathClass::Face(alive)
            }
        })
        .collect();
    Ok(basins_from(&classes, n, m1_faces, cfg))
}

fn lv_weights(model: &KolmogorovModel) -> Result<(f64, f64), VerifyError> {
    match model.dynamics() {
        Dynamics::Lv { b, .. } if model.n() == 2 => Ok((-b[(1, 1)], -b[(0, 0)])),
        _ => Err(VerifyError::NotTwoSpeciesLv),
    }
}

fn signature_from(ens: &Ensemble, weights: (f64, f64), band: f64) -> BlowupSignature {
    let y0: Vec<f64> = ens.x0.iter().map(|x| x.ln()).collect();
    let slopes: Vec<f64> = ens
        .paths
        .iter()
        .filter(|p| p.t_pre_halt > 0.0)
        .map(|p| (weights.0 * (p.y_pre_halt[0] - y0[0]) + weights.1 * (p.y_pre_halt[1] - y0[1])) / p.t_pre_halt)
        .collect();
    let slope = MeanSe::of(&slopes);
    let blowup_count = ens.blowup_count();
    BlowupSignature {
        weights,
        slope,
        blowup_count,
        blowup_fraction: blowup_count as f64 / ens.paths.len().max(1) as f64,
        positive: slope.mean - band * slope.se > 0.0,
    }
}

/// Slope of `b_2 ln X_1 + b_1 ln X_2` over an ensemble of a two-species
/// Lotka–Volterra model.
pub fn detect_blowup_signature(model: &KolmogorovModel, cfg: &VerifyConfig) -> Result<BlowupSignature, VerifyError> {
    let weights = lv_weights(model)?;
    let x0 = cfg.start(model.n())?;
    let ens = simulate_ensemble(model, &x0, &cfg.sim, &EnsembleOptions::default())?;
    Ok(signature_from(&ens, weights, cfg.se_band))
}

fn check(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        observed,
        expected,
        tolerance,
        passed,
        detail: detail.into(),
    }
}

/// Simulates the model and tests the verdict's predictions. The verdict is
/// only read.
pub fn verify_verdict(model: &KolmogorovModel, verdict: &Verdict, cfg: &VerifyConfig) -> Result<EnsembleReport, VerifyError> {
    if matches!(verdict.kind, VerdictKind::Inconclusive { .. }) {
        return Err(VerifyError::Inconclusive);
    }
    let n = model.n();
    let (x0, ens, marks) = run(model, cfg)?;
    let band = cfg.se_band;
    let exponents: Vec<ExponentSummary> = (0..n)
        .map(|i| ExponentSummary {
            species: i + 1,
            stats: ens.exponent(i),
        })
        .collect();
    let classes = path_classes(&ens);
    let mut distinct: Vec<PathClass> = Vec::new();
    for c in &classes {
        if !distinct.contains(c) {
            distinct.push(*c);
        }
    }
    distinct.sort_by_key(|c| match c {
        PathClass::Interior => (0, 0),
        PathClass::Face(f) => (1, f.bits()),
        PathClass::BlowUp => (2, 0),
    });
    let path_classes: Vec<ClassCount> = distinct
        .iter()
        .map(|c| ClassCount {
            class: *c,
            count: classes.iter().filter(|x| *x == c).count(),
        })
        .collect();
    let blowup_count = ens.blowup_count();
    let blowup_fraction = blowup_count as f64 / ens.paths.len().max(1) as f64;
    let mut checks = Vec::new();
    let mut basins = None;
    let mut signature = None;
    let mut curve = Vec::new();
    match &verdict.kind {
        VerdictKind::Persistent { .. } => {
            checks.push(check("no blow-up", blowup_count as f64, 0.0, 0.0, blowup_count == 0, "paths crossing the blow-up threshold"));
            for e in &exponents {
                let s = e.stats;
                checks.push(check(
                    format!("exponent of species {} not negative", e.species),
                    s.mean,
                    0.0,
                    band * s.se,
                    s.mean >= -band * s.se,
                    "time-averaged log growth after burn-in",
                ));
            }
            curve = tv_curve(&ens, &marks);
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                checks.push(check(
                    "occupation convergence",
                    last.tv,
                    0.0,
                    cfg.tv_tolerance,
                    last.tv < cfg.tv_tolerance && last.tv <= first.tv,
                    format!("TV between occupation up to successive checkpoints falls from {:.4} to {:.4}", first.tv, last.tv),
                ));
            }
            if model.is_lv() {
                match lv_face_equilibrium(model, Face::full(n)) {
                    Ok(eq) => {
                        for (i, m) in eq.moments.iter().enumerate() {
                            let s = ens.mean_x(i);
                            checks.push(check(
                                format!("interior mean of species {}", i + 1),
                                s.mean,
                                *m,
                                cfg.moment_rtol * m,
                                (s.mean - m).abs() <= cfg.moment_rtol * m,
                                "occupation mean against the averaged equilibrium",
                            ));
                        }
                    }
                    Err(e) => checks.push(check("interior equilibrium", f64::NAN, f64::NAN, 0.0, false, e.to_string())),
                }
            }
        }
        VerdictKind::Extinction { rates, .. } => {
            checks.push(check("no blow-up", blowup_count as f64, 0.0, 0.0, blowup_count == 0, "paths crossing the blow-up threshold"));
            let faces: Vec<(String, Face)> = rates.iter().map(|r| (r.measure.clone(), r.support)).collect();
            let est = basins_from(&classes, n, &faces, cfg);
            checks.push(check(
                "paths settle on attracting faces",
                est.unassigned_fraction,
                0.0,
                cfg.unassigned_limit,
                !est.low_confidence,
                format!("{} of {} paths end outside every predicted basin", est.total - est.assigned(), est.total),
            ));
            for r in rates {
                let members: Vec<usize> = classes
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| match c {
                        PathClass::Face(f) => *f == r.support,
                        PathClass::Interior => r.support == Face::full(n),
                        PathClass::BlowUp => false,
                    })
                    .map(|(k, _)| k)
                    .collect();
                if members.len() < 2 {
                    continue;
                }
                for pr in &r.rates {
                    let i = pr.species - 1;
                    let v: Vec<f64> = members.iter().map(|&k| ens.paths[k].exponent(i).rate).collect();
                    let s = MeanSe::of(&v);
                    let tol = band * (s.se * s.se + (pr.ci / band).powi(2)).sqrt();
                    checks.push(check(
                        format!("exponent of species {} near {}", pr.species, r.measure),
                        s.mean,
                        pr.lambda,
                        tol,
                        (s.mean - pr.lambda).abs() <= tol,
                        format!("{} paths in the basin", members.len()),
                    ));
                }
            }
            basins = Some(est);
        }
        VerdictKind::BlowUpRisk { .. } => {
            if let Ok(w) = lv_weights(model) {
                signature = Some(signature_from(&ens, w, band));
            }
            let positive = signature.as_ref().is_some_and(|s| s.positive);
            checks.push(check(
                "blow-up evidence",
                blowup_fraction,
                1.0,
                1.0,
                blowup_count > 0 || positive,
                "fraction of paths crossing the blow-up threshold",
            ));
        }
        VerdictKind::Inconclusive { .. } => unreachable!(),
    }
    let status = if checks.iter().all(|c| c.passed) {
        VerificationStatus::Passed
    } else {
        VerificationStatus::Failed
    };
    Ok(EnsembleReport {
        config: cfg.sim.clone(),
        x0,
        exponents,
        path_classes,
        basins,
        tv_curve: curve,
        blowup_count,
        blowup_fraction,
        signature,
        path_steps: ens.paths.iter().map(|p| (p.t_end / ens.config.dt).round() as u64).sum(),
        checks,
        status,
    })
}

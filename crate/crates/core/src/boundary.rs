//! Ergodic measures on the boundary of the orthant and their invasion rates.
//!
//! Faces are visited bottom-up by size. A face carries an interior ergodic
//! measure when its subsystem is persistent against the measures already
//! found on its own boundary; it carries none when one of those measures is
//! an attractor for the subsystem. Anything else leaves the face unresolved,
//! and every larger face containing it inherits that status.

use serde::Serialize;
use thiserror::Error;

use crate::classifier::{extinction_status, face_margin, Decision, Tri};
use crate::density::{stationary_density_1d, DensityError, DensityOptions, StationaryDensity1D};
use crate::expr::EvalError;
use crate::linalg::{solve, LinalgError};
use crate::model::{Dynamics, Face, KolmogorovModel};
use crate::sde::{
    simulate_ensemble, Ambient, EnsembleOptions, LogGrid, OccupationHistogram, RateEstimate,
    SimConfig, SimError,
};
use crate::stats::MeanSe;

/// Budget and tolerances for boundary discovery and classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    /// Simulation budget for faces without a closed form.
    pub mc: SimConfig,
    /// Analytic rates with `|λ|` below this are treated as zero.
    pub decision_tol: f64,
    /// Monte Carlo entries with a wider confidence half-width are flagged.
    pub max_ci: f64,
    pub density: DensityOptionsView,
    /// Cell budget for Monte Carlo occupation histograms.
    pub grid_cells: usize,
    /// Proceed when the noise nondegeneracy check does not pass.
    pub allow_degenerate: bool,
}

/// Serializable mirror of [`DensityOptions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityOptionsView {
    pub grid_size: usize,
    pub rtol: f64,
    pub tail_mass: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mc: SimConfig {
                t_max: 200.0,
                burn_in: 20.0,
                n_paths: 16,
                ..SimConfig::default()
            },
            decision_tol: 1e-9,
            max_ci: 0.25,
            density: DensityOptionsView {
                grid_size: 4001,
                rtol: 1e-9,
                tail_mass: 1e-6,
            },
            grid_cells: 1024,
            allow_degenerate: false,
        }
    }
}

impl AnalysisConfig {
    fn density_options(&self, u0: f64) -> DensityOptions {
        DensityOptions {
            u0,
            grid_size: self.density.grid_size,
            rtol: self.density.rtol,
            tail_mass: self.density.tail_mass,
            zero_tol: self.decision_tol,
            ..DensityOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    Quadrature,
    MonteCarlo,
}

/// Occupation statistics of a simulated face subsystem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    /// Time-averaged abundance per support species.
    pub mean_x: Vec<MeanSe>,
    /// Invasion-rate estimates for every species of the full model.
    pub rates: Vec<RateEstimate>,
    pub occupation: OccupationHistogram,
    pub config: SimConfig,
    /// Confidence half-width above which an entry is low-confidence.
    pub max_ci: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Representation {
    DiracOrigin,
    LvMoments {
        /// `∫ x_i dμ` for the support species in increasing order.
        moments: Vec<f64>,
        residual: f64,
    },
    Density1D(StationaryDensity1D),
    Empirical(EmpiricalMeasure),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicMeasure {
    pub label: String,
    pub support: Face,
    pub representation: Representation,
    pub provenance: Provenance,
}

impl ErgodicMeasure {
    pub fn dirac_origin() -> Self {
        ErgodicMeasure {
            label: measure_label(Face::EMPTY),
            support: Face::EMPTY,
            representation: Representation::DiracOrigin,
            provenance: Provenance::Analytic,
        }
    }

    /// First moments of the support species, where available.
    pub fn moments(&self) -> Vec<f64> {
        match &self.representation {
            Representation::DiracOrigin => Vec::new(),
            Representation::LvMoments { moments, .. } => moments.clone(),
            Representation::Density1D(d) => vec![d.mean],
            Representation::Empirical(e) => e.mean_x.iter().map(|m| m.mean).collect(),
        }
    }
}

/// `delta*` for the origin, `mu_12` for support `{1,2}`, and
/// `mu_{1,10}` once labels need separators.
pub fn measure_label(support: Face) -> String {
    if support.is_empty() {
        return "delta*".into();
    }
    let labels: Vec<String> = support.indices().iter().map(|i| (i + 1).to_string()).collect();
    if labels.iter().all(|l| l.len() == 1) {
        format!("mu_{}", labels.concat())
    } else {
        format!("mu_{{{}}}", labels.join(","))
    }
}

/// `λ[μ][i]` with confidence half-widths (zero for analytic entries).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvasionRateTable {
    pub measures: Vec<ErgodicMeasure>,
    pub lambda: Vec<Vec<f64>>,
    pub ci: Vec<Vec<f64>>,
    pub low_confidence: Vec<Vec<bool>>,
}

/// Floor of the tolerance for on-support rates.
pub const SUPPORT_RATE_FLOOR: f64 = 1e-10;

impl InvasionRateTable {
    pub fn empty() -> Self {
        InvasionRateTable {
            measures: Vec::new(),
            lambda: Vec::new(),
            ci: Vec::new(),
            low_confidence: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn append(&mut self, other: InvasionRateTable) {
        self.measures.extend(other.measures);
        self.lambda.extend(other.lambda);
        self.ci.extend(other.ci);
        self.low_confidence.extend(other.low_confidence);
    }

    /// Interval containing `λ_i(μ)` for sign decisions. Entries on the
    /// support vanish identically; elsewhere the half-width is the
    /// confidence half-width, at least `tol`.
    pub fn bounds(&self, mu: usize, i: usize, tol: f64) -> (f64, f64) {
        if self.measures[mu].support.contains(i) {
            return (0.0, 0.0);
        }
        let w = self.ci[mu][i].max(tol);
        (self.lambda[mu][i] - w, self.lambda[mu][i] + w)
    }

    /// Entries on the support that exceed `max(1e-10, ci)`.
    pub fn support_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (mu, m) in self.measures.iter().enumerate() {
            for i in m.support.indices() {
                if self.lambda[mu][i].abs() > SUPPORT_RATE_FLOOR.max(self.ci[mu][i]) {
                    out.push((mu, i));
                }
            }
        }
        out
    }

    pub fn index_of(&self, support: Face) -> Option<usize> {
        self.measures.iter().position(|m| m.support == support)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaceEquilibriumError {
    #[error("model is not structured Lotka-Volterra")]
    NotLv,
    #[error("face system is singular: {0}")]
    Singular(LinalgError),
    #[error("no interior equilibrium: moments {moments:?} are not all positive")]
    NonPositive { moments: Vec<f64> },
}

/// Moments on an LV face with residual `max_i |a_i − σ_ii g_i²/2 + Σ_j B_ij m_j|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LvEquilibrium {
    pub moments: Vec<f64>,
    pub residual: f64,
}

/// Solves `a_i − σ_ii g_i²/2 + Σ_{j∈I} B_ij m_j = 0` for `i ∈ I`.
pub fn lv_face_equilibrium(
    model: &KolmogorovModel,
    face: Face,
) -> Result<LvEquilibrium, FaceEquilibriumError> {
    let Dynamics::Lv { a, b, g } = model.dynamics() else {
        return Err(FaceEquilibriumError::NotLv);
    };
    let idx = face.indices();
    let rhs: Vec<f64> = idx
        .iter()
        .map(|&i| -(a[i] - 0.5 * model.sigma()[(i, i)] * g[i] * g[i]))
        .collect();
    let sub = b.select(&idx);
    let m = solve(&sub, &rhs).map_err(FaceEquilibriumError::Singular)?;
    let residual = (0..idx.len())
        .map(|r| (sub.row(r).iter().zip(&m).map(|(c, v)| c * v).sum::<f64>() - rhs[r]).abs())
        .fold(0.0, f64::max);
    if m.iter().any(|v| *v <= 0.0) {
        return Err(FaceEquilibriumError::NonPositive { moments: m });
    }
    Ok(LvEquilibrium { moments: m, residual })
}

/// The one-dimensional stationary density of the subsystem on `{k}`.
pub fn edge_density(
    model: &KolmogorovModel,
    k: usize,
    cfg: &AnalysisConfig,
) -> Result<StationaryDensity1D, DensityError> {
    let edge = model.restrict_to_face(Face::from_indices([k]));
    let f = |u: f64| edge.drift(0, &[u]);
    let g = |u: f64| edge.noise(0, &[u]);
    let sigma = edge.sigma()[(0, 0)];
    let u0 = match edge.dynamics() {
        Dynamics::Lv { a, b, g } => {
            let mean = (a[0] - 0.5 * sigma * g[0] * g[0]) / -b[(0, 0)];
            if mean > 0.0 && mean.is_finite() {
                mean
            } else {
                1.0
            }
        }
        Dynamics::General { .. } => 1.0,
    };
    stationary_density_1d(&f, &g, sigma, &cfg.density_options(u0))
}

/// `λ_i(μ) = ∫ (f_i − σ_ii g_i²/2) dμ` for every measure and species.
pub fn invasion_rates(
    model: &KolmogorovModel,
    measures: &[ErgodicMeasure],
) -> Result<InvasionRateTable, EvalError> {
    let n = model.n();
    let mut table = InvasionRateTable::empty();
    for mu in measures {
        let (lambda, ci, low) = match &mu.representation {
            Representation::DiracOrigin => {
                let zero = vec![0.0; n];
                let l = (0..n).map(|i| model.log_growth(i, &zero)).collect::<Result<Vec<_>, _>>()?;
                (l, vec![0.0; n], vec![false; n])
            }
            Representation::LvMoments { moments, .. } => {
                let point = model.embed(mu.support, moments);
                let l = match model.dynamics() {
                    // Affine integrands: the integral only needs first moments.
                    Dynamics::Lv { .. } => (0..n).map(|i| model.log_growth(i, &point)).collect::<Result<Vec<_>, _>>()?,
                    Dynamics::General { .. } => {
                        return Err(EvalError::NonFinite(format!(
                            "moment representation of {} needs affine rates",
                            mu.label
                        )))
                    }
                };
                (l, vec![0.0; n], vec![false; n])
            }
            Representation::Density1D(d) => {
                let k = mu.support.indices()[0];
                let mut l = Vec::with_capacity(n);
                let mut c = Vec::with_capacity(n);
                for i in 0..n {
                    let h = |u: f64| {
                        let mut x = vec![0.0; n];
                        x[k] = u;
                        model.log_growth(i, &x)
                    };
                    let (v, err) = d.expectation(&h)?;
                    l.push(v);
                    c.push(err);
                }
                (l, c, vec![false; n])
            }
            Representation::Empirical(e) => {
                let l = e.rates.iter().map(|r| r.mean).collect();
                let c: Vec<f64> = e.rates.iter().map(|r| r.ci).collect();
                let low = c.iter().map(|w| !(*w <= e.max_ci)).collect();
                (l, c, low)
            }
        };
        table.measures.push(mu.clone());
        table.lambda.push(lambda);
        table.ci.push(ci);
        table.low_confidence.push(low);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FaceStatus {
    /// The face carries the interior measure with this label.
    Measure { label: String },
    /// No interior measure: `attractor` attracts the face subsystem.
    NoInterior { attractor: String },
    Unresolved { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceRecord {
    pub face: Face,
    /// Bounds on the face's maximin margin, when it was computed.
    pub margin: Option<(f64, f64)>,
    #[serde(flatten)]
    pub status: FaceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryAnalysis {
    pub table: InvasionRateTable,
    pub faces: Vec<FaceRecord>,
}

impl BoundaryAnalysis {
    pub fn measures(&self) -> &[ErgodicMeasure] {
        &self.table.measures
    }

    pub fn unresolved(&self) -> Vec<&FaceRecord> {
        self.faces
            .iter()
            .filter(|f| matches!(f.status, FaceStatus::Unresolved { .. }))
            .collect()
    }
}

/// Proper faces of `{0..n-1}` ordered by size, then by bit pattern.
pub fn boundary_faces(n: usize) -> Vec<Face> {
    let full = Face::full(n).bits();
    let mut faces: Vec<Face> = (1..full).map(Face::from_bits).collect();
    faces.sort_by_key(|f| (f.len(), f.bits()));
    faces
}

fn face_seed(seed: u64, face: Face) -> u64 {
    seed ^ face.bits().wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn build_face_measure(
    model: &KolmogorovModel,
    face: Face,
    cfg: &AnalysisConfig,
) -> Result<ErgodicMeasure, String> {
    let label = measure_label(face);
    if model.is_lv() {
        let eq = lv_face_equilibrium(model, face).map_err(|e| e.to_string())?;
        return Ok(ErgodicMeasure {
            label,
            support: face,
            representation: Representation::LvMoments {
                moments: eq.moments,
                residual: eq.residual,
            },
            provenance: Provenance::Analytic,
        });
    }
    if face.len() == 1 {
        let d = edge_density(model, face.indices()[0], cfg).map_err(|e| e.to_string())?;
        return Ok(ErgodicMeasure {
            label,
            support: face,
            representation: Representation::Density1D(d),
            provenance: Provenance::Quadrature,
        });
    }
    let sub = model.restrict_to_face(face);
    let mc = SimConfig {
        seed: face_seed(cfg.mc.seed, face),
        ..cfg.mc.clone()
    };
    let opts = EnsembleOptions {
        grid: Some(LogGrid::with_cell_budget(face.len(), -12.0, 8.0, cfg.grid_cells)),
        segments: vec![mc.burn_in, mc.t_max],
        batches: 20,
        ambient: Some(Ambient {
            model: model.clone(),
            face,
        }),
    };
    let ens = simulate_ensemble(&sub, &vec![1.0; face.len()], &mc, &opts)
        .map_err(|e: SimError| e.to_string())?;
    if ens.blowup_count() > 0 {
        return Err(format!(
            "{} of {} face paths blew up",
            ens.blowup_count(),
            mc.n_paths
        ));
    }
    Ok(ErgodicMeasure {
        label,
        support: face,
        representation: Representation::Empirical(EmpiricalMeasure {
            mean_x: (0..face.len()).map(|i| ens.mean_x(i)).collect(),
            rates: ens.rate_estimates(),
            occupation: ens.occupation[0].clone(),
            config: mc,
            max_ci: cfg.max_ci,
        }),
        provenance: Provenance::MonteCarlo,
    })
}

/// Bottom-up walk of the face lattice.
pub fn find_boundary_measures(model: &KolmogorovModel, cfg: &AnalysisConfig) -> BoundaryAnalysis {
    let tol = cfg.decision_tol;
    let mut faces: Vec<FaceRecord> = Vec::new();
    let origin = ErgodicMeasure::dirac_origin();
    let mut table = match invasion_rates(model, std::slice::from_ref(&origin)) {
        Ok(t) => t,
        Err(e) => {
            // Without rates at the origin nothing above it can be decided.
            let mut t = InvasionRateTable::empty();
            t.measures.push(origin);
            t.lambda.push(vec![f64::NAN; model.n()]);
            t.ci.push(vec![f64::INFINITY; model.n()]);
            t.low_confidence.push(vec![true; model.n()]);
            for face in boundary_faces(model.n()) {
                faces.push(FaceRecord {
                    face,
                    margin: None,
                    status: FaceStatus::Unresolved {
                        reason: format!("rates at the origin: {e}"),
                    },
                });
            }
            return BoundaryAnalysis { table: t, faces };
        }
    };
    for face in boundary_faces(model.n()) {
        let blocked = faces.iter().find(|r| {
            r.face.is_proper_subset_of(face) && matches!(r.status, FaceStatus::Unresolved { .. })
        });
        if let Some(b) = blocked {
            faces.push(FaceRecord {
                face,
                margin: None,
                status: FaceStatus::Unresolved {
                    reason: format!("contains unresolved face {}", b.face),
                },
            });
            continue;
        }
        let sub: Vec<usize> = (0..table.len())
            .filter(|&mu| table.measures[mu].support.is_proper_subset_of(face))
            .collect();
        let margin = face_margin(&table, face, &sub, tol);
        let bounds = Some((margin.lower.t_star, margin.upper.t_star));
        let status = match margin.decision(tol) {
            Decision::Positive => match build_face_measure(model, face, cfg) {
                Ok(mu) => match invasion_rates(model, std::slice::from_ref(&mu)) {
                    Ok(rows) => {
                        let label = mu.label.clone();
                        table.append(rows);
                        FaceStatus::Measure { label }
                    }
                    Err(e) => FaceStatus::Unresolved {
                        reason: format!("invasion rates of {}: {e}", mu.label),
                    },
                },
                Err(reason) => FaceStatus::Unresolved {
                    reason: format!("face is persistent but its measure failed: {reason}"),
                },
            },
            Decision::Negative => {
                let mut undetermined = false;
                let mut attractor = None;
                for &mu in &sub {
                    match extinction_status(&table, mu, face, tol) {
                        Tri::True => {
                            attractor = Some(table.measures[mu].label.clone());
                            break;
                        }
                        Tri::Undetermined => undetermined = true,
                        Tri::False => {}
                    }
                }
                match (attractor, undetermined) {
                    (Some(a), _) => FaceStatus::NoInterior { attractor: a },
                    (None, true) => FaceStatus::Unresolved {
                        reason: "not persistent and attractor status undecidable".into(),
                    },
                    (None, false) => FaceStatus::Unresolved {
                        reason: "not persistent and no boundary measure attracts the face".into(),
                    },
                }
            }
            Decision::Undecided => FaceStatus::Unresolved {
                reason: format!(
                    "maximin margin undecidable: lies in [{:e}, {:e}]",
                    margin.lower.t_star, margin.upper.t_star
                ),
            },
        };
        faces.push(FaceRecord {
            face,
            margin: bounds,
            status,
        });
    }
    BoundaryAnalysis { table, faces }
}

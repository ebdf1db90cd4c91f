//! Checkable parts of the standing assumptions: nondegeneracy of the noise,
//! the tightness (dissipativity) condition at infinity, and the growth
//! condition that keeps `g²` slightly below `|f|`.
//!
//! Conditions that involve a limit `‖x‖ → ∞` cannot be decided from finitely
//! many evaluations. They are decided analytically where the structure of
//! the model allows it and otherwise sampled on rays at radii
//! `10, 10², 10³, 10⁴` (ℓ¹ norm); sampled outcomes are labeled heuristic.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::expr::EvalError;
use crate::linalg::{cholesky_factor, Matrix};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::model::{Dynamics, KolmogorovModel};

pub const RADII: [f64; 4] = [1e1, 1e2, 1e3, 1e4];
const RANDOM_RAYS: usize = 50;
/// Exponent δ1 used by the sampled growth check.
pub const GROWTH_EXPONENT: f64 = 0.5;
const GROWTH_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    HeuristicPass,
    HeuristicFail,
    Fail,
}

impl CheckStatus {
    pub fn is_pass(self) -> bool {
        matches!(self, CheckStatus::Pass | CheckStatus::HeuristicPass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMethod {
    Analytic,
    Sampled,
}

/// A point where the tested inequality fails, with the tested value there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    /// Tested quantity at `point`; absent when evaluation itself failed.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub status: CheckStatus,
    pub method: CheckMethod,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Weight vector `c` of the tightness condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    /// Sampled estimate of a feasible `γ_b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_b: Option<f64>,
}

impl CheckOutcome {
    fn new(status: CheckStatus, method: CheckMethod, reason: impl Into<String>) -> Self {
        CheckOutcome {
            status,
            method,
            reason: reason.into(),
            witness: None,
            c: None,
            gamma_b: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub nondegenerate: CheckOutcome,
    pub tightness: CheckOutcome,
    pub growth: CheckOutcome,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn run(model: &KolmogorovModel, sample: &SampleSpec) -> Self {
        let nondegenerate = match check_nondegeneracy(model, sample) {
            Ok(o) => o,
            Err(e) => {
                let mut o = CheckOutcome::new(
                    CheckStatus::Fail,
                    CheckMethod::Sampled,
                    format!("evaluation failed: {}", e.error),
                );
                o.witness = Some(Witness {
                    point: e.point,
                    value: None,
                });
                o
            }
        };
        let tightness = check_tightness(model);
        let growth = check_growth_condition(model);
        let mut notes = Vec::new();
        if nondegenerate.status == CheckStatus::Pass {
            notes.push(format!(
                "nondegeneracy verified on {} sample points in [0, {}]^{}, not proved",
                sample.points(model.n()).len(),
                sample.radius,
                model.n()
            ));
        }
        AssumptionReport {
            nondegenerate,
            tightness,
            growth,
            notes,
        }
    }
}

/// Sample grid for the nondegeneracy check: a tensor grid on `[0, R]^n`
/// with at least 100 points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub radius: f64,
    pub min_points: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            radius: 10.0,
            min_points: 100,
        }
    }
}

impl SampleSpec {
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let mut per_axis = 2usize;
        while per_axis.pow(n as u32) < self.min_points.max(100) {
            per_axis += 1;
        }
        let axis: Vec<f64> = (0..per_axis)
            .map(|k| self.radius * k as f64 / (per_axis - 1) as f64)
            .collect();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                (0..n)
                    .map(|_| {
                        let v = axis[idx % per_axis];
                        idx /= per_axis;
                        v
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointError {
    pub point: Vec<f64>,
    pub error: EvalError,
}

/// Verifies that `(g_i(x) g_j(x) σ_ij)` is positive definite on every
/// sample point. A pass is a sampled statement, not a proof.
pub fn check_nondegeneracy(
    model: &KolmogorovModel,
    sample: &SampleSpec,
) -> Result<CheckOutcome, PointError> {
    let n = model.n();
    let points = sample.points(n);
    let mut g = vec![0.0; n];
    for x in &points {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = model.noise(i, x).map_err(|error| PointError {
                point: x.clone(),
                error,
            })?;
        }
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = g[i] * g[j] * model.sigma()[(i, j)];
            }
        }
        if cholesky_factor(&m).is_err() {
            let eigenvalue = m.symmetric_eigenvalues()[0];
            let mut o = CheckOutcome::new(
                CheckStatus::Fail,
                CheckMethod::Sampled,
                format!("diffusion matrix not positive definite (smallest eigenvalue {eigenvalue})"),
            );
            o.witness = Some(Witness {
                point: x.clone(),
                value: Some(eigenvalue),
            });
            return Ok(o);
        }
    }
    Ok(CheckOutcome::new(
        CheckStatus::Pass,
        CheckMethod::Sampled,
        format!("positive definite at all {} sample points", points.len()),
    ))
}

/// Tightness condition with weight vector `c`.
pub fn check_tightness(model: &KolmogorovModel) -> CheckOutcome {
    let n = model.n();
    if let Dynamics::Lv { b, .. } = model.dynamics() {
        if (0..n).all(|i| b[(i, i)] < 0.0) {
            if let Some(o) = tightness_lv(b) {
                return o;
            }
        }
    }
    tightness_sampled(model, vec![1.0; n])
}

fn tightness_lv(b: &Matrix) -> Option<CheckOutcome> {
    let n = b.dim();
    let off_diag = || (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
    if off_diag().all(|(i, j)| b[(i, j)] <= 0.0) {
        let mut o = CheckOutcome::new(
            CheckStatus::Pass,
            CheckMethod::Analytic,
            "competitive Lotka-Volterra with negative self-regulation and constant noise",
        );
        o.c = Some(vec![1.0; n]);
        return Some(o);
    }
    if n != 2 {
        return None;
    }
    let (b1, b2) = (-b[(0, 0)], -b[(1, 1)]);
    let (c12, c21) = (b[(0, 1)], b[(1, 0)]);
    if c12 * c21 < 0.0 {
        let mut o = CheckOutcome::new(
            CheckStatus::Pass,
            CheckMethod::Analytic,
            "predator-prey Lotka-Volterra: cross terms cancel with weights (|B21|, |B12|)",
        );
        o.c = Some(vec![c21.abs(), c12.abs()]);
        return Some(o);
    }
    if c12 > 0.0 && c21 > 0.0 && b1 * b2 - c12 * c21 < 0.0 {
        // Along the Perron direction of the symmetrized interaction matrix
        // the quadratic part of Σ x_i f_i is positive.
        let off = 0.5 * (c12 + c21);
        let lambda = 0.5 * (-(b1 + b2) + ((b1 - b2).powi(2) + 4.0 * off * off).sqrt());
        let (v1, v2) = (off, lambda + b1);
        let r = RADII[3] / (v1 + v2);
        let x = vec![v1 * r, v2 * r];
        let q = x[0] * (b[(0, 0)] * x[0] + c12 * x[1]) + x[1] * (c21 * x[0] + b[(1, 1)] * x[1]);
        let mut o = CheckOutcome::new(
            CheckStatus::Fail,
            CheckMethod::Analytic,
            "cooperative Lotka-Volterra with b_1b_2−c_1c_2<0",
        );
        o.c = Some(vec![1.0, 1.0]);
        o.witness = Some(Witness {
            point: x,
            value: Some(q / (1.0 + RADII[3])),
        });
        return Some(o);
    }
    None
}

/// Rays in the nonnegative orthant with unit ℓ¹ norm: the n axes, the n
/// faces opposite each axis, and a fixed set of random directions.
pub fn sample_rays(n: usize) -> Vec<Vec<f64>> {
    let mut rays = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        rays.push(e);
    }
    if n == 1 {
        return rays;
    }
    for i in 0..n {
        let mut v = vec![1.0 / (n - 1) as f64; n];
        v[i] = 0.0;
        rays.push(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7469_6768_746e_6573);
    for _ in 0..RANDOM_RAYS {
        let v: Vec<f64> = (0..n)
            .map(|_| -((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 + 1e-300).ln())
            .collect();
        let s: f64 = v.iter().sum();
        rays.push(v.into_iter().map(|c| c / s).collect());
    }
    rays
}

fn tightness_sampled(model: &KolmogorovModel, c: Vec<f64>) -> CheckOutcome {
    let n = model.n();
    let rays = sample_rays(n);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut worst_per_radius = Vec::with_capacity(RADII.len());
    let mut worst_point = Vec::new();
    for &r in &RADII {
        let mut worst = f64::NEG_INFINITY;
        for ray in &rays {
            let x: Vec<f64> = ray.iter().map(|v| v * r).collect();
            if let Err(e) = model.eval_into(&x, &mut f, &mut g) {
                let mut o = CheckOutcome::new(
                    CheckStatus::HeuristicFail,
                    CheckMethod::Sampled,
                    format!("evaluation failed on a sample ray: {e}"),
                );
                o.witness = Some(Witness { point: x, value: None });
                o.c = Some(c);
                return o;
            }
            let denom = 1.0 + c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            let drift: f64 = (0..n).map(|i| c[i] * x[i] * f[i]).sum::<f64>() / denom;
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += model.sigma()[(i, j)] * c[i] * c[j] * x[i] * x[j] * g[i] * g[j];
                }
            }
            let bracket = drift - 0.5 * quad / (denom * denom);
            let scale = 1.0 + (0..n).map(|i| f[i].abs() + g[i] * g[i]).sum::<f64>();
            let ratio = bracket / scale;
            if ratio > worst {
                worst = ratio;
                if r == RADII[RADII.len() - 1] {
                    worst_point = x.clone();
                }
            }
        }
        worst_per_radius.push(worst);
    }
    let last = *worst_per_radius.last().expect("radii");
    let improving = worst_per_radius.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let mut o = if last < 0.0 && improving {
        let mut o = CheckOutcome::new(
            CheckStatus::HeuristicPass,
            CheckMethod::Sampled,
            format!("bracket/(1+Σ|f|+g²) negative and improving on sampled rays (worst {last:.3e} at radius 1e4)"),
        );
        o.gamma_b = Some(-0.5 * last);
        o
    } else {
        let mut o = CheckOutcome::new(
            CheckStatus::HeuristicFail,
            CheckMethod::Sampled,
            format!("bracket not eventually negative on sampled rays (worst ratios {worst_per_radius:?})"),
        );
        o.witness = Some(Witness {
            point: worst_point,
            value: Some(last),
        });
        o
    };
    o.c = Some(c);
    o
}

/// `lim ‖x‖^δ1 Σ g_i² / (1 + Σ(|f_i| + g_i²)) = 0`.
pub fn check_growth_condition(model: &KolmogorovModel) -> CheckOutcome {
    let n = model.n();
    if let Dynamics::Lv { b, .. } = model.dynamics() {
        // With constant g the ratio decays like ‖x‖^{δ1−1} as soon as Σ|f_i|
        // grows linearly in every direction, i.e. min over the simplex of
        // Σ_i |(Bx)_i| is positive. That minimum is a linear program.
        let min_growth = min_abs_linear_growth(b);
        if min_growth > 1e-12 {
            return CheckOutcome::new(
                CheckStatus::Pass,
                CheckMethod::Analytic,
                format!(
                    "constant noise and Σ|f_i| ≥ {min_growth:.3e}·‖x‖ at infinity; ratio decays like ‖x‖^(δ1−1)"
                ),
            );
        }
    }
    let rays = sample_rays(n);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut worst_per_radius = Vec::new();
    let mut worst_point = Vec::new();
    for &r in &RADII {
        let mut worst = f64::NEG_INFINITY;
        for ray in &rays {
            let x: Vec<f64> = ray.iter().map(|v| v * r).collect();
            if let Err(e) = model.eval_into(&x, &mut f, &mut g) {
                let mut o = CheckOutcome::new(
                    CheckStatus::HeuristicFail,
                    CheckMethod::Sampled,
                    format!("evaluation failed on a sample ray: {e}"),
                );
                o.witness = Some(Witness { point: x, value: None });
                return o;
            }
            let g2: f64 = g.iter().map(|v| v * v).sum();
            let denom = 1.0 + (0..n).map(|i| f[i].abs() + g[i] * g[i]).sum::<f64>();
            let ratio = r.powf(GROWTH_EXPONENT) * g2 / denom;
            if ratio > worst {
                worst = ratio;
                worst_point = x;
            }
        }
        worst_per_radius.push(worst);
    }
    let last = *worst_per_radius.last().expect("radii");
    let decreasing = worst_per_radius.windows(2).all(|w| w[1] <= w[0]);
    if decreasing && last < GROWTH_LIMIT {
        CheckOutcome::new(
            CheckStatus::HeuristicPass,
            CheckMethod::Sampled,
            format!("sampled ratio decreasing, {last:.3e} at radius 1e4"),
        )
    } else {
        let mut o = CheckOutcome::new(
            CheckStatus::HeuristicFail,
            CheckMethod::Sampled,
            format!("sampled ratio does not vanish (values {worst_per_radius:?})"),
        );
        o.witness = Some(Witness {
            point: worst_point,
            value: Some(last),
        });
        o
    }
}

/// `min { Σ_i |(Bx)_i| : x ≥ 0, Σ x = 1 }`.
fn min_abs_linear_growth(b: &Matrix) -> f64 {
    let n = b.dim();
    // Variables: x (n), t (n). Maximize −Σt.
    let mut objective = vec![0.0; 2 * n];
    for t in objective.iter_mut().skip(n) {
        *t = -1.0;
    }
    let mut lp = LinearProgram::maximize(objective);
    for i in 0..n {
        let mut up = vec![0.0; 2 * n];
        let mut down = vec![0.0; 2 * n];
        for j in 0..n {
            up[j] = b[(i, j)];
            down[j] = -b[(i, j)];
        }
        up[n + i] = -1.0;
        down[n + i] = -1.0;
        lp.constraint(up, Relation::Le, 0.0);
        lp.constraint(down, Relation::Le, 0.0);
    }
    let mut simplex = vec![0.0; 2 * n];
    for s in simplex.iter_mut().take(n) {
        *s = 1.0;
    }
    lp.constraint(simplex, Relation::Eq, 1.0);
    match lp.solve() {
        LpOutcome::Optimal { value, .. } => -value,
        _ => 0.0,
    }
}

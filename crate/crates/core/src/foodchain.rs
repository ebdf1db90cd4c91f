//! Simple food chains: a prey at the bottom and predators `2..n`, each
//! eating the level below and eaten by the level above.
//!
//! ```text
//! dX_1 = X_1 (a_10 − a_11 X_1 − a_12 X_2) dt + X_1 dE_1
//! dX_j = X_j (−a_j0 + a_{j,j−1} X_{j−1} − a_jj X_j − a_{j,j+1} X_{j+1}) dt + X_j dE_j
//! ```
//!
//! The sub-chain of the first `j` levels has a positive equilibrium of its
//! averaged system, and level `j+1` invades it at rate
//! `I_{j+1} = −ã_{j+1,0} + a_{j+1,j} x^{(j)}_j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve, Matrix};
use crate::model::{Dynamics, KolmogorovModel, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoodChainParams {
    pub n: usize,
    /// `a_10` (prey growth) followed by the predator death rates `a_j0`.
    pub a0: Vec<f64>,
    /// Intraspecific competition `a_jj`.
    #[serde(rename = "self")]
    pub self_limitation: Vec<f64>,
    /// `a_{j,j−1}` for `j = 2..n`.
    pub predation: Vec<f64>,
    /// `a_{j−1,j}` for `j = 2..n`.
    pub consumption: Vec<f64>,
    /// Noise variances `σ_jj`.
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FoodChainError {
    #[error("food chain needs n >= 2, got {0}")]
    TooShort(usize),
    #[error("field {field} has length {got}, expected {expected}")]
    Length { field: &'static str, got: usize, expected: usize },
    #[error("field {field}[{index}] = {value} must be {requirement}")]
    Coefficient { field: &'static str, index: usize, value: f64, requirement: &'static str },
    #[error("invalid chain JSON: {0}")]
    Json(String),
}

impl FoodChainParams {
    pub fn from_json_str(text: &str) -> Result<Self, FoodChainError> {
        let p: FoodChainParams = serde_json::from_str(text).map_err(|e| FoodChainError::Json(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FoodChainError> {
        let n = self.n;
        if n < 2 {
            return Err(FoodChainError::TooShort(n));
        }
        let lengths: [(&'static str, &Vec<f64>, usize); 5] = [
            ("a0", &self.a0, n),
            ("self", &self.self_limitation, n),
            ("predation", &self.predation, n - 1),
            ("consumption", &self.consumption, n - 1),
            ("sigma", &self.sigma, n),
        ];
        for (field, v, expected) in lengths {
            if v.len() != expected {
                return Err(FoodChainError::Length { field, got: v.len(), expected });
            }
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(FoodChainError::Coefficient { field, index, value, requirement: "finite" });
            }
        }
        let positive: [(&'static str, &Vec<f64>); 3] =
            [("self", &self.self_limitation), ("predation", &self.predation), ("sigma", &self.sigma)];
        for (field, v) in positive {
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x <= 0.0) {
                return Err(FoodChainError::Coefficient { field, index, value, requirement: "positive" });
            }
        }
        if let Some((index, &value)) = self.consumption.iter().enumerate().find(|(_, x)| **x < 0.0) {
            return Err(FoodChainError::Coefficient {
                field: "consumption",
                index,
                value,
                requirement: "nonnegative",
            });
        }
        Ok(())
    }

    /// `ã_10 = a_10 − σ_11/2` and `ã_j0 = a_j0 + σ_jj/2` for predators.
    pub fn stochastic_rates(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| if j == 0 { self.a0[0] - 0.5 * self.sigma[0] } else { self.a0[j] + 0.5 * self.sigma[j] })
            .collect()
    }

    /// Coefficient matrix and right-hand side of the averaged system of
    /// the first `j` levels.
    pub fn level_system(&self, j: usize) -> (Matrix, Vec<f64>) {
        let at = self.stochastic_rates();
        let mut m = Matrix::zeros(j);
        let mut rhs = vec![0.0; j];
        for k in 0..j {
            m[(k, k)] = -self.self_limitation[k];
            if k > 0 {
                m[(k, k - 1)] = self.predation[k - 1];
            }
            if k + 1 < j {
                m[(k, k + 1)] = -self.consumption[k];
            }
            rhs[k] = if k == 0 { -at[0] } else { at[k] };
        }
        (m, rhs)
    }

    /// The chain as a Lotka–Volterra model with unit noise amplitudes.
    pub fn to_model(&self) -> Result<KolmogorovModel, ModelError> {
        let n = self.n;
        let mut b = Matrix::zeros(n);
        let mut a = vec![0.0; n];
        for j in 0..n {
            a[j] = if j == 0 { self.a0[0] } else { -self.a0[j] };
            b[(j, j)] = -self.self_limitation[j];
            if j > 0 {
                b[(j, j - 1)] = self.predation[j - 1];
            }
            if j + 1 < n {
                b[(j, j + 1)] = -self.consumption[j];
            }
        }
        KolmogorovModel::new(Dynamics::Lv { a, b, g: vec![1.0; n] }, Matrix::from_diag(&self.sigma))
    }
}

/// Equilibrium of the first `level` species.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelEquilibrium {
    pub level: usize,
    pub x: Vec<f64>,
    /// Max-norm residual of the linear system.
    pub residual: f64,
}

/// Rate at which an absent level decays near the attracting sub-chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRate {
    /// 1-based level.
    pub level: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict")]
pub enum FoodChainOutcome {
    /// All `n` levels persist.
    Persistent,
    /// Levels above `j_star` go extinct at the listed rates.
    Extinction { extinct_rates: Vec<LevelRate> },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoodChainVerdict {
    /// `ã_j0` per level.
    pub stochastic_rates: Vec<f64>,
    /// `I_2, I_3, …` as far as they were computed.
    pub invasion_rates: Vec<f64>,
    pub equilibria: Vec<LevelEquilibrium>,
    /// Number of persisting levels.
    pub j_star: usize,
    #[serde(flatten)]
    pub outcome: FoodChainOutcome,
}

impl FoodChainVerdict {
    /// 0-based indices of the surviving levels.
    pub fn survivors(&self) -> Vec<usize> {
        (0..self.j_star).collect()
    }
}

pub fn classify_food_chain(params: &FoodChainParams, tol: f64) -> FoodChainVerdict {
    let n = params.n;
    let at = params.stochastic_rates();
    let mut verdict = FoodChainVerdict {
        stochastic_rates: at.clone(),
        invasion_rates: Vec::new(),
        equilibria: Vec::new(),
        j_star: 0,
        outcome: FoodChainOutcome::Persistent,
    };
    let inconclusive = |mut v: FoodChainVerdict, reason: String| {
        v.outcome = FoodChainOutcome::Inconclusive { reason };
        v
    };
    if at[0].abs() <= tol {
        return inconclusive(verdict, format!("prey growth rate ã_10 = {:e} is numerically zero", at[0]));
    }
    if at[0] < 0.0 {
        // Only the origin is invariant: every level decays at its own rate.
        let mut rates = vec![LevelRate { level: 1, lambda: at[0] }];
        rates.extend((1..n).map(|k| LevelRate { level: k + 1, lambda: -at[k] }));
        verdict.outcome = FoodChainOutcome::Extinction { extinct_rates: rates };
        return verdict;
    }
    for j in 1..=n {
        let (m, rhs) = params.level_system(j);
        let x = match solve(&m, &rhs) {
            Ok(x) => x,
            Err(e) => return inconclusive(verdict, format!("system for {j} levels: {e}")),
        };
        let residual = (0..j)
            .map(|r| (m.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() - rhs[r]).abs())
            .fold(0.0, f64::max);
        let positive = x.iter().all(|v| *v > 0.0);
        verdict.equilibria.push(LevelEquilibrium { level: j, x: x.clone(), residual });
        if !positive {
            return inconclusive(verdict, format!("equilibrium of {j} levels is not positive"));
        }
        verdict.j_star = j;
        if j == n {
            return verdict;
        }
        let invasion = -at[j] + params.predation[j - 1] * x[j - 1];
        verdict.invasion_rates.push(invasion);
        if invasion.abs() <= tol {
            return inconclusive(verdict, format!("invasion rate I_{} = {invasion:e} is numerically zero", j + 1));
        }
        if invasion < 0.0 {
            let mut rates = vec![LevelRate { level: j + 1, lambda: invasion }];
            rates.extend((j + 1..n).map(|k| LevelRate { level: k + 1, lambda: -at[k] }));
            verdict.outcome = FoodChainOutcome::Extinction { extinct_rates: rates };
            return verdict;
        }
    }
    unreachable!("loop returns at j = n")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain(a30: f64) -> FoodChainParams {
        FoodChainParams {
            n: 3,
            a0: vec![4.0, 1.0, a30],
            self_limitation: vec![1.0, 1.0, 1.0],
            predation: vec![2.0, 1.0],
            consumption: vec![1.0, 1.0],
            sigma: vec![1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn persistent_chain() {
        let v = classify_food_chain(&chain(1.0), 1e-9);
        assert_eq!(v.j_star, 3);
        assert_eq!(v.outcome, FoodChainOutcome::Persistent);
        assert!((v.invasion_rates[0] - 5.5).abs() < 1e-12);
        assert!((v.invasion_rates[1] - 1.0 / 3.0).abs() < 1e-12);
        let x2 = &v.equilibria[1].x;
        assert!((x2[0] - 5.0 / 3.0).abs() < 1e-12 && (x2[1] - 11.0 / 6.0).abs() < 1e-12);
        assert!(v.equilibria.iter().all(|e| e.residual < 1e-10));
    }

    #[test]
    fn apex_extinct_chain() {
        let v = classify_food_chain(&chain(2.5), 1e-9);
        assert_eq!(v.j_star, 2);
        let FoodChainOutcome::Extinction { extinct_rates } = &v.outcome else { panic!("{v:?}") };
        assert_eq!(extinct_rates.len(), 1);
        assert!((extinct_rates[0].lambda - (-3.0 + 11.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn prey_cannot_grow() {
        let mut p = chain(1.0);
        p.a0[0] = 0.2;
        let v = classify_food_chain(&p, 1e-9);
        assert_eq!(v.j_star, 0);
        let FoodChainOutcome::Extinction { extinct_rates } = &v.outcome else { panic!() };
        assert_eq!(extinct_rates.iter().map(|r| r.level).collect::<Vec<_>>(), [1, 2, 3]);
        assert!((extinct_rates[0].lambda + 0.3).abs() < 1e-12);
    }

    #[test]
    fn model_drift_matches_chain() {
        let p = chain(1.0);
        let m = p.to_model().unwrap();
        let x = [0.7, 1.3, 0.4];
        let mut f = [0.0; 3];
        let mut g = [0.0; 3];
        m.eval_into(&x, &mut f, &mut g).unwrap();
        assert!((f[0] - (4.0 - 0.7 - 1.3)).abs() < 1e-12);
        assert!((f[1] - (-1.0 + 2.0 * 0.7 - 1.3 - 0.4)).abs() < 1e-12);
        assert!((f[2] - (-1.0 + 1.3 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut p = chain(1.0);
        p.predation.pop();
        assert!(matches!(p.validate(), Err(FoodChainError::Length { field: "predation", .. })));
        assert!(FoodChainParams::from_json_str(r#"{"n":2,"a0":[1,1],"self":[1,1],"predation":[1],"consumption":[1],"sigma":[1,1],"x":1}"#).is_err());
    }
}

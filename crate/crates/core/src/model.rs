//! Stochastic Kolmogorov systems
//!
//! ```text
//! dX_i = X_i f_i(X) dt + X_i g_i(X) dE_i,   E = Γᵀ B,   ΓᵀΓ = Σ
//! ```
//!
//! The per-capita rates `f_i`, `g_i` are either a structured Lotka–Volterra
//! block (`f_i = a_i + Σ_j B_ij x_j`, constant `g_i`) or arbitrary
//! expressions over `x1..xn`. Models are immutable once built.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::expr::{BinOp, EvalError, Expr, VarSubst};
use crate::linalg::{cholesky_factor, LinalgError, Matrix};

/// A subset of species, stored as a bitmask over local indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Face(u64);

impl Face {
    pub const EMPTY: Face = Face(0);

    pub fn full(n: usize) -> Face {
        assert!(n < 64, "at most 63 species");
        Face((1u64 << n) - 1)
    }

    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Face {
        Face(idx.into_iter().fold(0, |m, i| {
            assert!(i < 64);
            m | (1 << i)
        }))
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn from_bits(bits: u64) -> Face {
        Face(bits)
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn indices(self) -> Vec<usize> {
        (0..64).filter(|&i| self.contains(i)).collect()
    }

    pub fn is_subset_of(self, other: Face) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_proper_subset_of(self, other: Face) -> bool {
        self.is_subset_of(other) && self != other
    }

    pub fn intersect(self, other: Face) -> Face {
        Face(self.0 & other.0)
    }

    /// Species of `0..n` not in the face.
    pub fn complement(self, n: usize) -> Face {
        Face(!self.0 & Face::full(n).0)
    }
}

/// `{1,2}` with 1-based species labels.
impl fmt::Display for Face {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.indices().iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", labels.join(","))
    }
}

impl Serialize for Face {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let labels: Vec<usize> = self.indices().iter().map(|i| i + 1).collect();
        labels.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Face {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        if labels.iter().any(|&l| l == 0 || l > 63) {
            return Err(serde::de::Error::custom("species labels must be in 1..=63"));
        }
        Ok(Face::from_indices(labels.into_iter().map(|l| l - 1)))
    }
}

/// Per-capita drift and noise amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `f_i(x) = a_i + Σ_j B_ij x_j`, `g_i` constant.
    Lv {
        a: Vec<f64>,
        b: Matrix,
        g: Vec<f64>,
    },
    General {
        f: Vec<Expr>,
        g: Vec<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovModel {
    n: usize,
    dynamics: Dynamics,
    sigma: Matrix,
    /// Lower Cholesky factor `L = Γᵀ` of `Σ`.
    noise_factor: Matrix,
    /// Species index in the originating model, per local species.
    origin: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Expr {
        path: String,
        source: crate::expr::ParseError,
    },
    #[error("sigma is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("sigma[{i}][{i}] must be positive")]
    NonPositiveDiagonal { i: usize },
    #[error("sigma is not positive semidefinite (eigenvalue {eigenvalue})")]
    NotPsd { eigenvalue: f64 },
    #[error("sigma is singular: {0}")]
    Degenerate(LinalgError),
}

impl KolmogorovModel {
    pub fn new(dynamics: Dynamics, sigma: Matrix) -> Result<Self, ModelError> {
        let n = sigma.dim();
        let ok = match &dynamics {
            Dynamics::Lv { a, b, g } => a.len() == n && b.dim() == n && g.len() == n,
            Dynamics::General { f, g } => {
                f.len() == n
                    && g.len() == n
                    && f.iter().chain(g).all(|e| e.max_var().map_or(true, |v| v < n))
            }
        };
        if !ok || n == 0 {
            return Err(ModelError::Schema {
                path: "$".into(),
                message: format!("dynamics do not match a {n}-species sigma"),
            });
        }
        let noise_factor = validate_sigma(&sigma)?;
        Ok(KolmogorovModel {
            n,
            dynamics,
            sigma,
            noise_factor,
            origin: (0..n).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// `Γ` with `ΓᵀΓ = Σ` (upper triangular).
    pub fn gamma(&self) -> Matrix {
        self.noise_factor.transpose()
    }

    /// `Γᵀ`, the lower factor applied to standard normals.
    pub fn noise_factor(&self) -> &Matrix {
        &self.noise_factor
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn is_lv(&self) -> bool {
        matches!(self.dynamics, Dynamics::Lv { .. })
    }

    pub fn drift(&self, i: usize, x: &[f64]) -> Result<f64, EvalError> {
        match &self.dynamics {
            Dynamics::Lv { a, b, .. } => Ok(a[i] + dot(b.row(i), x)),
            Dynamics::General { f, .. } => f[i].eval(x),
        }
    }

    pub fn noise(&self, i: usize, x: &[f64]) -> Result<f64, EvalError> {
        match &self.dynamics {
            Dynamics::Lv { g, .. } => Ok(g[i]),
            Dynamics::General { g, .. } => g[i].eval(x),
        }
    }

    /// Fills `f` and `g` at `x`.
    pub fn eval_into(&self, x: &[f64], f: &mut [f64], g: &mut [f64]) -> Result<(), EvalError> {
        match &self.dynamics {
            Dynamics::Lv { a, b, g: gc } => {
                for i in 0..self.n {
                    f[i] = a[i] + dot(b.row(i), x);
                }
                g.copy_from_slice(gc);
            }
            Dynamics::General { f: fe, g: ge } => {
                for i in 0..self.n {
                    f[i] = fe[i].eval(x)?;
                    g[i] = ge[i].eval(x)?;
                }
            }
        }
        Ok(())
    }

    /// `f_i(x) − σ_ii g_i(x)²/2`, the integrand of the invasion rate.
    pub fn log_growth(&self, i: usize, x: &[f64]) -> Result<f64, EvalError> {
        let g = self.noise(i, x)?;
        Ok(self.drift(i, x)? - 0.5 * self.sigma[(i, i)] * g * g)
    }

    /// The same model with every structured row rewritten as an expression.
    pub fn to_general(&self) -> KolmogorovModel {
        let dynamics = match &self.dynamics {
            Dynamics::Lv { a, b, g } => Dynamics::General {
                f: (0..self.n).map(|i| lv_row_expr(a[i], b.row(i))).collect(),
                g: g.iter().map(|v| Expr::Num(*v)).collect(),
            },
            d @ Dynamics::General { .. } => d.clone(),
        };
        KolmogorovModel {
            dynamics,
            ..self.clone()
        }
    }

    /// Subsystem on the face `R^I_+`: species outside `face` are pinned at
    /// zero and the rest are renumbered in increasing order.
    pub fn restrict_to_face(&self, face: Face) -> KolmogorovModel {
        let idx = face.indices();
        assert!(
            !idx.is_empty() && idx.iter().all(|&i| i < self.n),
            "face {face} is not a nonempty subset of 1..{}",
            self.n
        );
        let dynamics = match &self.dynamics {
            Dynamics::Lv { a, b, g } => Dynamics::Lv {
                a: idx.iter().map(|&i| a[i]).collect(),
                b: b.select(&idx),
                g: idx.iter().map(|&i| g[i]).collect(),
            },
            Dynamics::General { f, g } => {
                let local: Vec<Option<usize>> = (0..self.n)
                    .map(|i| idx.iter().position(|&k| k == i))
                    .collect();
                let map = |i: usize| match local[i] {
                    Some(j) => VarSubst::Var(j),
                    None => VarSubst::Const(0.0),
                };
                Dynamics::General {
                    f: idx.iter().map(|&i| f[i].substitute(&map)).collect(),
                    g: idx.iter().map(|&i| g[i].substitute(&map)).collect(),
                }
            }
        };
        let sigma = self.sigma.select(&idx);
        let noise_factor =
            cholesky_factor(&sigma).expect("principal submatrix of an SPD matrix is SPD");
        KolmogorovModel {
            n: idx.len(),
            dynamics,
            sigma,
            noise_factor,
            origin: idx.iter().map(|&i| self.origin[i]).collect(),
        }
    }

    /// Embeds a point of a face model into this model's coordinates.
    pub fn embed(&self, face: Face, local: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (k, i) in face.indices().into_iter().enumerate() {
            x[i] = local[k];
        }
        x
    }

    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        Self::from_json(&v)
    }

    /// Builds a model from the interchange format
    /// `{"n", "lv": {"a","B","g"} | "general": {"f","g"}, "sigma"}`.
    pub fn from_json(v: &Value) -> Result<Self, ModelError> {
        let obj = as_object(v, "$")?;
        check_keys(obj, "$", &["n", "lv", "general", "sigma"])?;
        let n = get(obj, "$", "n")?
            .as_u64()
            .filter(|&n| (1..64).contains(&n))
            .ok_or_else(|| schema("$.n", "expected an integer in 1..=63"))? as usize;
        let dynamics = match (obj.get("lv"), obj.get("general")) {
            (Some(lv), None) => {
                let o = as_object(lv, "$.lv")?;
                check_keys(o, "$.lv", &["a", "B", "g"])?;
                Dynamics::Lv {
                    a: number_vec(get(o, "$.lv", "a")?, "$.lv.a", n)?,
                    b: number_matrix(get(o, "$.lv", "B")?, "$.lv.B", n)?,
                    g: number_vec(get(o, "$.lv", "g")?, "$.lv.g", n)?,
                }
            }
            (None, Some(general)) => {
                let o = as_object(general, "$.general")?;
                check_keys(o, "$.general", &["f", "g"])?;
                Dynamics::General {
                    f: expr_vec(get(o, "$.general", "f")?, "$.general.f", n)?,
                    g: expr_vec(get(o, "$.general", "g")?, "$.general.g", n)?,
                }
            }
            (Some(_), Some(_)) => return Err(schema("$", "exactly one of \"lv\" and \"general\" allowed")),
            (None, None) => return Err(schema("$", "missing \"lv\" or \"general\" block")),
        };
        let sigma = number_matrix(get(obj, "$", "sigma")?, "$.sigma", n)?;
        Self::new(dynamics, sigma)
    }

    /// Normalized interchange form.
    pub fn to_json(&self) -> Value {
        let block = match &self.dynamics {
            Dynamics::Lv { a, b, g } => ("lv", json!({ "a": a, "B": b.rows(), "g": g })),
            Dynamics::General { f, g } => {
                let show = |v: &[Expr]| v.iter().map(Expr::to_string).collect::<Vec<_>>();
                ("general", json!({ "f": show(f), "g": show(g) }))
            }
        };
        let mut obj = Map::new();
        obj.insert("n".into(), json!(self.n));
        obj.insert(block.0.into(), block.1);
        obj.insert("sigma".into(), json!(self.sigma.rows()));
        Value::Object(obj)
    }
}

fn validate_sigma(sigma: &Matrix) -> Result<Matrix, ModelError> {
    let n = sigma.dim();
    if !(0..n).flat_map(|i| sigma.row(i)).all(|v| v.is_finite()) {
        return Err(schema("$.sigma", "entries must be finite"));
    }
    let scale = sigma.max_abs();
    for i in 0..n {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(ModelError::NotSymmetric { i, j });
            }
        }
    }
    if let Some(i) = (0..n).find(|&i| sigma[(i, i)] <= 0.0) {
        return Err(ModelError::NonPositiveDiagonal { i });
    }
    let min_ev = sigma.symmetric_eigenvalues()[0];
    if min_ev < -1e-12 * scale {
        return Err(ModelError::NotPsd { eigenvalue: min_ev });
    }
    let l = cholesky_factor(sigma).map_err(ModelError::Degenerate)?;
    let back = l.matmul(&l.transpose());
    debug_assert!(back.max_abs_diff(sigma) <= 1e-12 * scale);
    Ok(l)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn lv_row_expr(a: f64, row: &[f64]) -> Expr {
    row.iter().enumerate().fold(Expr::Num(a), |acc, (j, &c)| {
        Expr::Bin(
            BinOp::Add,
            Box::new(acc),
            Box::new(Expr::Bin(BinOp::Mul, Box::new(Expr::Num(c)), Box::new(Expr::Var(j)))),
        )
    })
}

fn schema(path: &str, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub(crate) fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ModelError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

pub(crate) fn check_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<(), ModelError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(&format!("{path}.{k}"), "unknown field")),
        None => Ok(()),
    }
}

pub(crate) fn get<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, ModelError> {
    obj.get(key)
        .ok_or_else(|| schema(&format!("{path}.{key}"), "missing field"))
}

pub(crate) fn number_vec(v: &Value, path: &str, n: usize) -> Result<Vec<f64>, ModelError> {
    let arr = v.as_array().ok_or_else(|| schema(path, "expected an array"))?;
    if arr.len() != n {
        return Err(schema(path, format!("expected {n} entries, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| schema(&format!("{path}[{i}]"), "expected a number"))
        })
        .collect()
}

fn number_matrix(v: &Value, path: &str, n: usize) -> Result<Matrix, ModelError> {
    let arr = v.as_array().ok_or_else(|| schema(path, "expected an array of rows"))?;
    if arr.len() != n {
        return Err(schema(path, format!("expected {n} rows, found {}", arr.len())));
    }
    let rows = arr
        .iter()
        .enumerate()
        .map(|(i, r)| number_vec(r, &format!("{path}[{i}]"), n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_rows(&rows).expect("validated square"))
}

fn expr_vec(v: &Value, path: &str, n: usize) -> Result<Vec<Expr>, ModelError> {
    let arr = v.as_array().ok_or_else(|| schema(path, "expected an array of strings"))?;
    if arr.len() != n {
        return Err(schema(path, format!("expected {n} entries, found {}", arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, e)| {
            let p = format!("{path}[{i}]");
            let text = e.as_str().ok_or_else(|| schema(&p, "expected a string"))?;
            Expr::parse(text, n).map_err(|source| ModelError::Expr { path: p, source })
        })
        .collect()
}

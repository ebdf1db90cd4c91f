//! Stationary densities of one-dimensional Kolmogorov diffusions
//! `dU = U f(U) dt + U g(U) √σ dB`.
//!
//! With `s = ln u` the speed-measure construction gives the density of `s`
//!
//! ```text
//! q(s) ∝ exp(Ψ(s) − s − ln(σ g²(eˢ))),   Ψ(s) = ∫_{s₀}^{s} 2 f(eʳ) / (σ g²(eʳ)) dr,
//! ```
//!
//! and `p(u) = q(ln u) / u`. Near `u = 0`, `q(s) ~ exp((2f(0)/(σg(0)²) − 1) s)`, so
//! the density is integrable at zero exactly when `f(0) − σ g(0)²/2 > 0`.

use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::quad::{adaptive_simpson, simpson_uniform};

pub type Scalar<'a> = &'a dyn Fn(f64) -> Result<f64, EvalError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOptions {
    /// Anchor of `Ψ`; only affects floating-point scaling.
    pub u0: f64,
    /// Initial upper end of the grid, doubled until the tail is negligible.
    pub u_max: f64,
    /// Grid points, rounded up to the form `4k + 1`.
    pub grid_size: usize,
    pub rtol: f64,
    /// Admissible probability mass outside the grid.
    pub tail_mass: f64,
    /// `f(0) − σ g(0)²/2` at or below this counts as non-integrable.
    pub zero_tol: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions {
            u0: 1.0,
            u_max: 10.0,
            grid_size: 4001,
            rtol: 1e-9,
            tail_mass: 1e-6,
            zero_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("no invariant measure on this edge: density is not integrable at {end} ({detail})")]
    NotNormalizable { end: &'static str, detail: String },
    #[error("noise vanishes at u = {0}")]
    Degenerate(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDensity1D {
    /// Log-spaced grid on `(0, u_max]`.
    pub u: Vec<f64>,
    /// Normalized density `p(u)`.
    pub density: Vec<f64>,
    /// `p(u)` divided by `exp(shift)`, before normalization.
    #[serde(skip)]
    pub unnormalized: Vec<f64>,
    /// `ln ∫ p(u) du` for `p` built with `Ψ(s₀) = 0`.
    pub log_normalizer: f64,
    pub u_max: f64,
    pub mean: f64,
    /// Estimated probability outside the grid.
    pub tail_mass: f64,
    /// Largest relative mismatch between the numerically differentiated
    /// `Ψ` and its closed-form derivative on interior nodes.
    pub fp_residual: f64,
    #[serde(skip)]
    s_step: f64,
    /// Normalized density of `ln U` on the grid.
    #[serde(skip)]
    q: Vec<f64>,
}

impl StationaryDensity1D {
    /// `∫ h(u) p(u) du` by composite Simpson on the grid, together with an
    /// error estimate (grid halving plus out-of-grid mass).
    pub fn expectation(&self, h: &dyn Fn(f64) -> Result<f64, EvalError>) -> Result<(f64, f64), EvalError> {
        let vals: Vec<f64> = self
            .u
            .iter()
            .zip(&self.q)
            .map(|(u, q)| Ok(h(*u)? * q))
            .collect::<Result<_, EvalError>>()?;
        let fine = simpson_uniform(&vals, self.s_step);
        let coarse_vals: Vec<f64> = vals.iter().step_by(2).copied().collect();
        let coarse = simpson_uniform(&coarse_vals, 2.0 * self.s_step);
        let edge = h(self.u[0])?.abs().max(h(*self.u.last().expect("grid"))?.abs());
        Ok((fine, (fine - coarse).abs() + self.tail_mass * edge))
    }

    /// `(u, p(u))` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,p\n");
        for (u, p) in self.u.iter().zip(&self.density) {
            out.push_str(&format!(
                "{},{}\n",
                crate::numfmt::format_g(*u, 12),
                crate::numfmt::format_g(*p, 12)
            ));
        }
        out
    }
}

struct Drift<'a> {
    f: Scalar<'a>,
    g: Scalar<'a>,
    sigma: f64,
}

impl Drift<'_> {
    fn sigma_g2(&self, u: f64) -> Result<f64, DensityError> {
        let g = (self.g)(u)?;
        let v = self.sigma * g * g;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(DensityError::Degenerate(u))
        }
    }

    fn psi_prime(&self, s: f64) -> Result<f64, DensityError> {
        let u = s.exp();
        Ok(2.0 * (self.f)(u)? / self.sigma_g2(u)?)
    }

    fn psi_increment(&self, a: f64, b: f64) -> Result<f64, DensityError> {
        adaptive_simpson(&mut |s| self.psi_prime(s), a, b, 1e-12, 1e-14)
    }

    fn log_q(&self, s: f64, psi: f64) -> Result<f64, DensityError> {
        Ok(psi - s - self.sigma_g2(s.exp())?.ln())
    }

    /// `d ln q / ds` at `s`.
    fn log_q_slope(&self, s: f64) -> Result<f64, DensityError> {
        let h = 1e-5;
        let d = (self.sigma_g2((s + h).exp())?.ln() - self.sigma_g2((s - h).exp())?.ln()) / (2.0 * h);
        Ok(self.psi_prime(s)? - 1.0 - d)
    }
}

struct Grid {
    s: Vec<f64>,
    psi: Vec<f64>,
    log_q: Vec<f64>,
    step: f64,
}

fn build_grid(d: &Drift, s_lo: f64, s_hi: f64, size: usize, s0: f64) -> Result<Grid, DensityError> {
    let step = (s_hi - s_lo) / (size - 1) as f64;
    let s: Vec<f64> = (0..size).map(|k| s_lo + k as f64 * step).collect();
    let mut psi = vec![0.0; size];
    for k in 1..size {
        psi[k] = psi[k - 1] + d.psi_increment(s[k - 1], s[k])?;
    }
    // Re-anchor at the node nearest to s0.
    let k0 = (((s0 - s_lo) / step).round().max(0.0) as usize).min(size - 1);
    let base = psi[k0] + d.psi_increment(s[k0], s0)?;
    for v in psi.iter_mut() {
        *v -= base;
    }
    let log_q = s
        .iter()
        .zip(&psi)
        .map(|(s, p)| d.log_q(*s, *p))
        .collect::<Result<_, _>>()?;
    Ok(Grid { s, psi, log_q, step })
}

const S_FLOOR: f64 = -740.0;
const S_CEIL: f64 = 700.0;
const MAX_ROUNDS: usize = 200;

pub fn stationary_density_1d(
    f: Scalar,
    g: Scalar,
    sigma: f64,
    opts: &DensityOptions,
) -> Result<StationaryDensity1D, DensityError> {
    let d = Drift { f, g, sigma };
    let rate0 = f(0.0)? - 0.5 * d.sigma_g2(0.0)?;
    if rate0 <= opts.zero_tol {
        return Err(DensityError::NotNormalizable {
            end: "0",
            detail: format!("f(0) − σg(0)²/2 = {rate0} is not positive"),
        });
    }
    let size = {
        let k = opts.grid_size.max(9).saturating_sub(1).div_ceil(4);
        4 * k + 1
    };
    let s0 = opts.u0.ln();
    let mut s_hi = opts.u_max.ln().max(s0 + 2.0);
    let mut s_lo = s0 - 10.0;
    let mut rounds = 0;
    let (grid, tail) = loop {
        rounds += 1;
        let grid = build_grid(&d, s_lo, s_hi, size, s0)?;
        let shift = grid.log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = grid.log_q.iter().map(|l| (l - shift).exp()).collect();
        let z = simpson_uniform(&w, grid.step);
        let edge = size / 20;
        let slope_hi = d.log_q_slope(s_hi)?;
        let slope_lo = d.log_q_slope(s_lo)?;
        let falls = grid.log_q[size - 1 - edge..].windows(2).all(|p| p[1] < p[0]);
        let rises = grid.log_q[..=edge].windows(2).all(|p| p[1] > p[0]);
        // The first moment has the heavier upper tail, so both are bounded.
        let tail_hi = if falls && slope_hi + 1.0 < 0.0 {
            let wu: Vec<f64> = w.iter().zip(&grid.s).map(|(w, s)| w * s.exp()).collect();
            let zm = simpson_uniform(&wu, grid.step);
            let mass = w[size - 1] / -slope_hi / z;
            let moment = wu[size - 1] / -(slope_hi + 1.0) / zm;
            mass.max(moment)
        } else {
            f64::INFINITY
        };
        let tail_lo = if rises && slope_lo > 0.0 {
            w[0] / slope_lo / z
        } else {
            f64::INFINITY
        };
        let hi_ok = tail_hi < 0.5 * opts.tail_mass;
        let lo_ok = tail_lo < 0.5 * opts.tail_mass;
        if hi_ok && lo_ok {
            break (grid, tail_hi + tail_lo);
        }
        if rounds >= MAX_ROUNDS {
            return Err(DensityError::NotNormalizable {
                end: if hi_ok { "0" } else { "infinity" },
                detail: "tail mass did not fall below tolerance".into(),
            });
        }
        if !hi_ok {
            s_hi += std::f64::consts::LN_2;
            if s_hi > S_CEIL {
                return Err(DensityError::NotNormalizable {
                    end: "infinity",
                    detail: format!("tail mass {tail_hi:e} beyond u = {:e}", s_hi.exp()),
                });
            }
        }
        if !lo_ok {
            s_lo -= 2.0;
            if s_lo < S_FLOOR {
                return Err(DensityError::NotNormalizable {
                    end: "0",
                    detail: format!("mass {tail_lo:e} below u = 1e-321"),
                });
            }
        }
    };

    // Accurate normalization by adaptive quadrature between grid nodes.
    let shift = grid.log_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_q_at = |s: f64| -> Result<f64, DensityError> {
        let k = (((s - grid.s[0]) / grid.step).floor().max(0.0) as usize).min(size - 2);
        let psi = grid.psi[k] + d.psi_increment(grid.s[k], s)?;
        d.log_q(s, psi)
    };
    let block = 8;
    let mut z_parts = Vec::new();
    let mut m_parts = Vec::new();
    let mut k = 0;
    while k < size - 1 {
        let (a, b) = (grid.s[k], grid.s[(k + block).min(size - 1)]);
        z_parts.push(adaptive_simpson(&mut |s| Ok::<f64, DensityError>((log_q_at(s)? - shift).exp()), a, b, opts.rtol, 1e-14)?);
        m_parts.push(adaptive_simpson(&mut |s| Ok::<f64, DensityError>((log_q_at(s)? - shift + s).exp()), a, b, opts.rtol, 1e-14)?);
        k += block;
    }
    let z = crate::stats::pairwise_sum(&z_parts);
    let mean = crate::stats::pairwise_sum(&m_parts) / z;

    let q: Vec<f64> = grid.log_q.iter().map(|l| (l - shift).exp() / z).collect();
    let u: Vec<f64> = grid.s.iter().map(|s| s.exp()).collect();
    let unnormalized: Vec<f64> = grid
        .log_q
        .iter()
        .zip(&u)
        .map(|(l, u)| (l - shift).exp() / u)
        .collect();
    let density = q.iter().zip(&u).map(|(q, u)| q / u).collect();

    let mut fp_residual: f64 = 0.0;
    let h = grid.step;
    for k in 2..size - 2 {
        let p = &grid.psi;
        let fd = (-p[k + 2] + 8.0 * p[k + 1] - 8.0 * p[k - 1] + p[k - 2]) / (12.0 * h);
        let exact = d.psi_prime(grid.s[k])?;
        fp_residual = fp_residual.max((fd - exact).abs() / (1.0 + exact.abs()));
    }

    Ok(StationaryDensity1D {
        u_max: *u.last().expect("grid"),
        u,
        density,
        unnormalized,
        log_normalizer: z.ln() + shift,
        mean,
        tail_mass: tail,
        fp_residual,
        s_step: h,
        q,
    })
}

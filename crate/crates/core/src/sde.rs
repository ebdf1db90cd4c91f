//! Positivity-preserving Euler–Maruyama integration in log coordinates,
//! ensemble simulation, and path statistics.
//!
//! With `Y_i = ln X_i` the Itô transform gives
//! `dY_i = (f_i(X) − σ_ii g_i(X)²/2) dt + g_i(X) dE_i`, which is stepped
//! directly, so `X = exp(Y)` can never leave the open orthant.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::model::{Face, KolmogorovModel};
use crate::numfmt::{format_exp, format_g};
use crate::rng::NormalStream;
use crate::stats::{pairwise_sum, MeanSe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub burn_in: f64,
    pub blowup_log_threshold: f64,
    pub extinct_log_threshold: f64,
    /// Stored trajectories keep every `record_every`-th step.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_max: 500.0,
            seed: 1,
            n_paths: 200,
            burn_in: 50.0,
            blowup_log_threshold: 30.0,
            extinct_log_threshold: -20.0,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return bad("t_max must be finite and at least dt");
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_max) {
            return bad("burn_in must lie in [0, t_max)");
        }
        if !(self.blowup_log_threshold.is_finite() && self.extinct_log_threshold.is_finite()) {
            return bad("thresholds must be finite");
        }
        if self.extinct_log_threshold >= self.blowup_log_threshold {
            return bad("extinct_log_threshold must be below blowup_log_threshold");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be positive");
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_max / self.dt).round() as u64
    }

    pub fn burn_in_step(&self) -> u64 {
        ((self.burn_in / self.dt).round() as u64).min(self.n_steps() - 1)
    }

    fn time(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid initial state: {0}")]
    InvalidStart(String),
    #[error("path {path_id}: {source} at t = {time} (state {state:?})")]
    Eval {
        path_id: u64,
        time: f64,
        state: Vec<f64>,
        source: EvalError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub time: f64,
    /// First species (0-based) above the threshold.
    pub species: usize,
}

/// Threshold events along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlags {
    pub blowup: Option<BlowUp>,
    /// First time each species' log-state fell below the extinction threshold.
    pub extinct: Vec<Option<f64>>,
}

impl PathFlags {
    fn new(n: usize) -> Self {
        PathFlags {
            blowup: None,
            extinct: vec![None; n],
        }
    }

    /// Semicolon-joined event tokens active at time `t`.
    pub fn tokens_at(&self, t: f64) -> String {
        let mut out: Vec<String> = self
            .extinct
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_some_and(|te| te <= t))
            .map(|(i, _)| format!("extinct:x{}", i + 1))
            .collect();
        if self.blowup.is_some_and(|b| b.time <= t) {
            out.push("blowup".into());
        }
        out.join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub burn_in: f64,
    pub times: Vec<f64>,
    /// `log_states[k][i] = ln X_i(times[k])`.
    pub log_states: Vec<Vec<f64>>,
    pub flags: PathFlags,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.flags.extinct.len()
    }

    pub fn final_log_state(&self) -> &[f64] {
        self.log_states.last().expect("trajectory holds the initial state")
    }

    /// CSV with header `t,x1,…,xn,flags`, states in linear space.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.n()).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{},flags", header.join(","))?;
        for (t, y) in self.times.iter().zip(&self.log_states) {
            let xs: Vec<String> = y.iter().map(|&v| format_exp(v)).collect();
            writeln!(w, "{},{},{}", format_g(*t, 12), xs.join(","), self.flags.tokens_at(*t))?;
        }
        Ok(())
    }
}

/// Callbacks fired by [`integrate`]. `interval` sees the left end point of
/// each step `[t_k, t_k + dt)`; `state` sees every visited state.
trait Observer {
    fn interval(&mut self, k: u64, y: &[f64], x: &[f64], f: &[f64], g: &[f64]) -> Result<(), EvalError>;
    fn state(&mut self, k: u64, y: &[f64]);
}

fn initial_log_state(model: &KolmogorovModel, x0: &[f64]) -> Result<Vec<f64>, SimError> {
    if x0.len() != model.n() {
        return Err(SimError::InvalidStart(format!(
            "expected {} coordinates, got {}",
            model.n(),
            x0.len()
        )));
    }
    if let Some(v) = x0.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(SimError::InvalidStart(format!(
            "coordinates must be positive and finite, got {v}"
        )));
    }
    Ok(x0.iter().map(|v| v.ln()).collect())
}

/// Runs one path, returning its flags and the last step index reached.
fn integrate<O: Observer>(
    model: &KolmogorovModel,
    x0: &[f64],
    cfg: &SimConfig,
    path_id: u64,
    obs: &mut O,
) -> Result<(PathFlags, u64), SimError> {
    cfg.validate()?;
    let n = model.n();
    let mut y = initial_log_state(model, x0)?;
    let lf = model.noise_factor();
    let half_sigma: Vec<f64> = (0..n).map(|i| 0.5 * model.sigma()[(i, i)]).collect();
    let sqrt_dt = cfg.dt.sqrt();
    let mut normals = NormalStream::new(cfg.seed, path_id, n);
    let (mut x, mut f, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut xi, mut de) = (vec![0.0; n], vec![0.0; n]);
    let mut flags = PathFlags::new(n);
    for (i, yi) in y.iter().enumerate() {
        if *yi < cfg.extinct_log_threshold {
            flags.extinct[i] = Some(0.0);
        }
    }
    obs.state(0, &y);
    let n_steps = cfg.n_steps();
    for k in 0..n_steps {
        for i in 0..n {
            x[i] = y[i].exp();
        }
        let fail = |source| SimError::Eval {
            path_id,
            time: cfg.time(k),
            state: x.clone(),
            source,
        };
        model.eval_into(&x, &mut f, &mut g).map_err(fail)?;
        obs.interval(k, &y, &x, &f, &g).map_err(fail)?;
        normals.next_step(&mut xi);
        for i in 0..n {
            let row = lf.row(i);
            let mut s = 0.0;
            for j in 0..=i {
                s += row[j] * xi[j];
            }
            de[i] = s * sqrt_dt;
        }
        for i in 0..n {
            y[i] += (f[i] - half_sigma[i] * g[i] * g[i]) * cfg.dt + g[i] * de[i];
        }
        let t = cfg.time(k + 1);
        if let Some(i) = y.iter().position(|v| v.is_nan()) {
            return Err(SimError::Eval {
                path_id,
                time: t,
                state: x.clone(),
                source: EvalError::NonFinite(format!("log-state of x{}", i + 1)),
            });
        }
        for i in 0..n {
            if y[i] < cfg.extinct_log_threshold && flags.extinct[i].is_none() {
                flags.extinct[i] = Some(t);
            }
        }
        obs.state(k + 1, &y);
        if let Some(i) = y.iter().position(|v| *v > cfg.blowup_log_threshold) {
            flags.blowup = Some(BlowUp { time: t, species: i });
            return Ok((flags, k + 1));
        }
    }
    Ok((flags, n_steps))
}

struct Recorder {
    stride: u64,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    dt: f64,
    last: (u64, Vec<f64>),
}

impl Observer for Recorder {
    fn interval(&mut self, _: u64, _: &[f64], _: &[f64], _: &[f64], _: &[f64]) -> Result<(), EvalError> {
        Ok(())
    }

    fn state(&mut self, k: u64, y: &[f64]) {
        if k % self.stride == 0 {
            self.times.push(k as f64 * self.dt);
            self.states.push(y.to_vec());
        }
        self.last = (k, y.to_vec());
    }
}

/// Integrates one path. The result is a pure function of
/// `(model, x0, cfg, path_id)`.
pub fn simulate_path(
    model: &KolmogorovModel,
    x0: &[f64],
    cfg: &SimConfig,
    path_id: u64,
) -> Result<Trajectory, SimError> {
    let mut rec = Recorder {
        stride: cfg.record_every.max(1) as u64,
        times: Vec::new(),
        states: Vec::new(),
        dt: cfg.dt,
        last: (0, Vec::new()),
    };
    let (flags, last) = integrate(model, x0, cfg, path_id, &mut rec)?;
    // A halting step off the recording stride is still kept.
    if last % rec.stride != 0 {
        rec.times.push(last as f64 * cfg.dt);
        rec.states.push(rec.last.1.clone());
    }
    Ok(Trajectory {
        dt: cfg.dt * rec.stride as f64,
        burn_in: cfg.burn_in,
        times: rec.times,
        log_states: rec.states,
        flags,
    })
}

/// Empirical exponent `(Y_i(T) − Y_i(burn_in)) / (T − burn_in)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub rate: f64,
    /// The path was halted by the blow-up threshold; `rate` covers the
    /// truncated window.
    pub blowup: bool,
}

pub fn empirical_lyapunov(traj: &Trajectory, i: usize) -> Exponent {
    let t_end = *traj.times.last().expect("trajectory holds the initial state");
    let last = traj.times.len() - 1;
    let k0 = ((traj.burn_in / traj.dt).round() as usize).min(last);
    let k0 = if k0 < last { k0 } else { 0 };
    let (t0, y0) = (traj.times[k0], traj.log_states[k0][i]);
    Exponent {
        rate: (traj.final_log_state()[i] - y0) / (t_end - t0),
        blowup: traj.flags.blowup.is_some(),
    }
}

/// Product grid in log coordinates. Each axis has `bins` regular cells on
/// `[lo, hi)` plus one underflow and one overflow cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
}

impl LogGrid {
    pub fn uniform(n: usize, lo: f64, hi: f64, bins: usize) -> Self {
        assert!(lo < hi && bins > 0);
        LogGrid {
            lo: vec![lo; n],
            hi: vec![hi; n],
            bins: vec![bins; n],
        }
    }

    /// Uniform grid whose total cell count (overflow cells included) does
    /// not exceed `max_cells`.
    pub fn with_cell_budget(n: usize, lo: f64, hi: f64, max_cells: usize) -> Self {
        let per_axis = (max_cells as f64).powf(1.0 / n as f64).floor() as usize;
        LogGrid::uniform(n, lo, hi, per_axis.saturating_sub(2).max(1))
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn n_cells(&self) -> usize {
        self.bins.iter().map(|b| b + 2).product()
    }

    fn axis_index(&self, a: usize, y: f64) -> usize {
        if y < self.lo[a] {
            0
        } else if y >= self.hi[a] {
            self.bins[a] + 1
        } else {
            let w = (self.hi[a] - self.lo[a]) / self.bins[a] as f64;
            1 + (((y - self.lo[a]) / w) as usize).min(self.bins[a] - 1)
        }
    }

    pub fn cell(&self, y: &[f64]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim() {
            idx = idx * (self.bins[a] + 2) + self.axis_index(a, y[a]);
        }
        idx
    }

    /// Per-axis indices of a flat cell index.
    pub fn unravel(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            let m = self.bins[a] + 2;
            out[a] = cell % m;
            cell /= m;
        }
        out
    }

    /// Log-space centre of axis cell `j`, or `None` for under/overflow.
    pub fn centre(&self, a: usize, j: usize) -> Option<f64> {
        if j == 0 || j > self.bins[a] {
            return None;
        }
        let w = (self.hi[a] - self.lo[a]) / self.bins[a] as f64;
        Some(self.lo[a] + (j as f64 - 0.5) * w)
    }

    fn is_overflow(&self, cell: usize) -> bool {
        self.unravel(cell)
            .iter()
            .zip(&self.bins)
            .any(|(&j, &b)| j == 0 || j == b + 1)
    }
}

/// Time-weighted occupation of a [`LogGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub grid: LogGrid,
    /// Occupation time per cell.
    weights: Vec<f64>,
}

impl OccupationHistogram {
    pub fn empty(grid: LogGrid) -> Self {
        let cells = grid.n_cells();
        OccupationHistogram {
            grid,
            weights: vec![0.0; cells],
        }
    }

    pub fn add(&mut self, y: &[f64], dt: f64) {
        let c = self.grid.cell(y);
        self.weights[c] += dt;
    }

    pub fn total_time(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Probability per cell.
    pub fn masses(&self) -> Vec<f64> {
        let total = self.total_time();
        if total <= 0.0 {
            return vec![0.0; self.weights.len()];
        }
        self.weights.iter().map(|w| w / total).collect()
    }

    /// Probability in under/overflow cells.
    pub fn overflow_mass(&self) -> f64 {
        let m = self.masses();
        let v: Vec<f64> = (0..m.len())
            .filter(|&c| self.grid.is_overflow(c))
            .map(|c| m[c])
            .collect();
        pairwise_sum(&v)
    }

    /// Mean of `X_a` over in-grid cells, using geometric cell centres.
    pub fn mean_x(&self, a: usize) -> f64 {
        let m = self.masses();
        let (mut num, mut den) = (Vec::new(), Vec::new());
        for (c, &p) in m.iter().enumerate() {
            if p > 0.0 && !self.grid.is_overflow(c) {
                let j = self.grid.unravel(c)[a];
                let y = self.grid.centre(a, j).expect("in-grid cell");
                num.push(p * y.exp());
                den.push(p);
            }
        }
        pairwise_sum(&num) / pairwise_sum(&den)
    }

    /// Sum of histograms on one grid, cell by cell in slice order.
    pub fn pool(parts: &[&OccupationHistogram]) -> Option<OccupationHistogram> {
        let first = parts.first()?;
        assert!(parts.iter().all(|h| h.grid == first.grid), "grid mismatch");
        let weights = (0..first.weights.len())
            .map(|c| {
                let v: Vec<f64> = parts.iter().map(|h| h.weights[c]).collect();
                pairwise_sum(&v)
            })
            .collect();
        Some(OccupationHistogram {
            grid: first.grid.clone(),
            weights,
        })
    }
}

/// Occupation of a stored trajectory: each sample holds its state until the
/// next sample.
pub fn occupation_histogram(traj: &Trajectory, grid: &LogGrid) -> OccupationHistogram {
    let mut h = OccupationHistogram::empty(grid.clone());
    for k in 0..traj.times.len().saturating_sub(1) {
        h.add(&traj.log_states[k], traj.times[k + 1] - traj.times[k]);
    }
    h
}

/// Log-growth integrands of an enclosing model, evaluated along paths of a
/// face restriction.
#[derive(Debug, Clone)]
pub struct Ambient {
    pub model: KolmogorovModel,
    pub face: Face,
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Occupation grid; `None` disables histograms.
    pub grid: Option<LogGrid>,
    /// Increasing segment boundaries in time; segment `s` covers
    /// `[segments[s], segments[s+1])`.
    pub segments: Vec<f64>,
    /// Number of batches after burn-in for batch-means statistics.
    pub batches: usize,
    pub ambient: Option<Ambient>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            grid: None,
            segments: Vec::new(),
            batches: 20,
            ambient: None,
        }
    }
}

/// Streaming statistics of a single path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub path_id: u64,
    pub y_burn: Vec<f64>,
    pub t_burn: f64,
    pub y_end: Vec<f64>,
    pub t_end: f64,
    /// Last state below the blow-up threshold; the halting step itself can
    /// overshoot by orders of magnitude.
    pub y_pre_halt: Vec<f64>,
    pub t_pre_halt: f64,
    pub flags: PathFlags,
    /// Time average of `X_i` over `[t_burn, t_end)`.
    pub mean_x: Vec<f64>,
    /// `∫ (f_i − σ_ii g_i²/2) dt` per post-burn-in batch, per species.
    pub growth_integrals: Vec<Vec<f64>>,
    pub batch_time: Vec<f64>,
    pub occupation: Vec<OccupationHistogram>,
}

impl PathSummary {
    pub fn exponent(&self, i: usize) -> Exponent {
        let (t0, y0) = if self.t_burn < self.t_end {
            (self.t_burn, self.y_burn[i])
        } else {
            (0.0, f64::NAN)
        };
        Exponent {
            rate: (self.y_end[i] - y0) / (self.t_end - t0),
            blowup: self.flags.blowup.is_some(),
        }
    }
}

struct Summarizer<'a> {
    cfg: &'a SimConfig,
    opts: &'a EnsembleOptions,
    sigma_half: Vec<f64>,
    n_rates: usize,
    burn_step: u64,
    batch_len: f64,
    y_start: Vec<f64>,
    y_burn: Option<Vec<f64>>,
    y_last: Vec<f64>,
    y_prev: Vec<f64>,
    x_sum: Vec<f64>,
    x_time: f64,
    growth: Vec<Vec<f64>>,
    batch_time: Vec<f64>,
    occupation: Vec<OccupationHistogram>,
    embedded: Vec<f64>,
}

impl Observer for Summarizer<'_> {
    fn interval(&mut self, k: u64, y: &[f64], x: &[f64], f: &[f64], g: &[f64]) -> Result<(), EvalError> {
        let dt = self.cfg.dt;
        let t = self.cfg.time(k);
        if let Some(grid) = &self.opts.grid {
            let segs = &self.opts.segments;
            if segs.len() >= 2 && t >= segs[0] {
                let s = segs.partition_point(|b| *b <= t);
                if s < segs.len() {
                    let h = &mut self.occupation[s - 1];
                    debug_assert_eq!(&h.grid, grid);
                    h.add(y, dt);
                }
            }
        }
        if k < self.burn_step {
            return Ok(());
        }
        for (s, xi) in self.x_sum.iter_mut().zip(x) {
            *s += xi * dt;
        }
        self.x_time += dt;
        let b = (((k - self.burn_step) as f64 / self.batch_len) as usize).min(self.growth.len() - 1);
        self.batch_time[b] += dt;
        match &self.opts.ambient {
            None => {
                for i in 0..self.n_rates {
                    self.growth[b][i] += (f[i] - self.sigma_half[i] * g[i] * g[i]) * dt;
                }
            }
            Some(amb) => {
                for (local, &global) in amb.face.indices().iter().enumerate() {
                    self.embedded[global] = x[local];
                }
                for i in 0..self.n_rates {
                    self.growth[b][i] += amb.model.log_growth(i, &self.embedded)? * dt;
                }
            }
        }
        Ok(())
    }

    fn state(&mut self, k: u64, y: &[f64]) {
        if k == 0 {
            self.y_start = y.to_vec();
        }
        if k == self.burn_step {
            self.y_burn = Some(y.to_vec());
        }
        self.y_prev.copy_from_slice(&self.y_last);
        self.y_last.copy_from_slice(y);
    }
}

fn summarize_path(
    model: &KolmogorovModel,
    x0: &[f64],
    cfg: &SimConfig,
    opts: &EnsembleOptions,
    path_id: u64,
) -> Result<PathSummary, SimError> {
    let n = model.n();
    let n_rates = opts.ambient.as_ref().map_or(n, |a| a.model.n());
    let burn_step = cfg.burn_in_step();
    let batches = opts.batches.max(1);
    let n_seg = opts.segments.len().saturating_sub(1);
    let mut s = Summarizer {
        cfg,
        opts,
        sigma_half: (0..n).map(|i| 0.5 * model.sigma()[(i, i)]).collect(),
        n_rates,
        burn_step,
        batch_len: (cfg.n_steps() - burn_step) as f64 / batches as f64,
        y_start: Vec::new(),
        y_burn: None,
        y_last: vec![0.0; n],
        y_prev: vec![0.0; n],
        x_sum: vec![0.0; n],
        x_time: 0.0,
        growth: vec![vec![0.0; n_rates]; batches],
        batch_time: vec![0.0; batches],
        occupation: match &opts.grid {
            Some(g) => vec![OccupationHistogram::empty(g.clone()); n_seg],
            None => Vec::new(),
        },
        embedded: vec![0.0; n_rates],
    };
    let (flags, last) = integrate(model, x0, cfg, path_id, &mut s)?;
    let t_end = cfg.time(last);
    let (t_burn, y_burn) = match s.y_burn.take() {
        Some(y) => (cfg.time(burn_step), y),
        None => (0.0, s.y_start.clone()),
    };
    let (y_pre_halt, t_pre_halt) = if flags.blowup.is_some() {
        (s.y_prev.clone(), cfg.time(last.saturating_sub(1)))
    } else {
        (s.y_last.clone(), t_end)
    };
    let mean_x = if s.x_time > 0.0 {
        s.x_sum.iter().map(|v| v / s.x_time).collect()
    } else {
        vec![f64::NAN; n]
    };
    Ok(PathSummary {
        path_id,
        y_burn,
        t_burn,
        y_end: s.y_last,
        t_end,
        y_pre_halt,
        t_pre_halt,
        flags,
        mean_x,
        growth_integrals: s.growth,
        batch_time: s.batch_time,
        occupation: s.occupation,
    })
}

/// Mean rate with a batch-means confidence half-width (3 standard errors).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub ci: f64,
}

/// Ensemble of independent paths with `path_id = 0..n_paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub config: SimConfig,
    pub x0: Vec<f64>,
    pub paths: Vec<PathSummary>,
    /// Pooled occupation per segment.
    pub occupation: Vec<OccupationHistogram>,
}

/// Runs `cfg.n_paths` paths in parallel. Aggregates are reduced in path
/// order, so results do not depend on the thread count.
pub fn simulate_ensemble(
    model: &KolmogorovModel,
    x0: &[f64],
    cfg: &SimConfig,
    opts: &EnsembleOptions,
) -> Result<Ensemble, SimError> {
    cfg.validate()?;
    initial_log_state(model, x0)?;
    if let Some(g) = &opts.grid {
        if g.dim() != model.n() {
            return Err(SimError::InvalidConfig(format!(
                "occupation grid has {} axes for a {}-species model",
                g.dim(),
                model.n()
            )));
        }
    }
    if opts.segments.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::InvalidConfig("segments must increase".into()));
    }
    let results: Vec<Result<PathSummary, SimError>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|id| summarize_path(model, x0, cfg, opts, id))
        .collect();
    let paths = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n_seg = paths.first().map_or(0, |p| p.occupation.len());
    let occupation = (0..n_seg)
        .map(|s| {
            let parts: Vec<&OccupationHistogram> = paths.iter().map(|p| &p.occupation[s]).collect();
            OccupationHistogram::pool(&parts).expect("at least one path")
        })
        .collect();
    Ok(Ensemble {
        config: cfg.clone(),
        x0: x0.to_vec(),
        paths,
        occupation,
    })
}

impl Ensemble {
    fn completed(&self) -> impl Iterator<Item = &PathSummary> {
        self.paths.iter().filter(|p| p.flags.blowup.is_none())
    }

    pub fn blowup_count(&self) -> usize {
        self.paths.iter().filter(|p| p.flags.blowup.is_some()).count()
    }

    /// Across-path distribution of the exponent of species `i` over paths
    /// that did not blow up.
    pub fn exponent(&self, i: usize) -> MeanSe {
        let v: Vec<f64> = self.completed().map(|p| p.exponent(i).rate).collect();
        MeanSe::of(&v)
    }

    /// Time average of `X_i` after burn-in pooled over completed paths.
    pub fn mean_x(&self, i: usize) -> MeanSe {
        let v: Vec<f64> = self.completed().map(|p| p.mean_x[i]).collect();
        MeanSe::of(&v)
    }

    /// Batch means of the log-growth integrands pooled across completed
    /// paths, `[batch][species]`.
    pub fn batch_means(&self) -> Vec<Vec<f64>> {
        let done: Vec<&PathSummary> = self.completed().collect();
        let Some(first) = done.first() else {
            return Vec::new();
        };
        let (nb, nr) = (first.batch_time.len(), first.growth_integrals[0].len());
        (0..nb)
            .map(|b| {
                let times: Vec<f64> = done.iter().map(|p| p.batch_time[b]).collect();
                let t = pairwise_sum(&times);
                (0..nr)
                    .map(|i| {
                        let v: Vec<f64> = done.iter().map(|p| p.growth_integrals[b][i]).collect();
                        pairwise_sum(&v) / t
                    })
                    .collect()
            })
            .collect()
    }

    /// Invasion-rate estimates from pooled batch means.
    pub fn rate_estimates(&self) -> Vec<RateEstimate> {
        let bm = self.batch_means();
        let Some(first) = bm.first() else {
            return Vec::new();
        };
        (0..first.len())
            .map(|i| {
                let v: Vec<f64> = bm.iter().map(|row| row[i]).collect();
                let s = MeanSe::of(&v);
                RateEstimate {
                    mean: s.mean,
                    ci: 3.0 * s.se,
                }
            })
            .collect()
    }

    /// Occupation pooled over all segments.
    pub fn pooled_occupation(&self) -> Option<OccupationHistogram> {
        let parts: Vec<&OccupationHistogram> = self.occupation.iter().collect();
        OccupationHistogram::pool(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::Dynamics;

    fn logistic(a: f64, b: f64, g: f64) -> KolmogorovModel {
        KolmogorovModel::new(
            Dynamics::Lv {
                a: vec![a],
                b: Matrix::from_diag(&[-b]),
                g: vec![g],
            },
            Matrix::identity(1),
        )
        .unwrap()
    }

    fn short(t_max: f64) -> SimConfig {
        SimConfig {
            t_max,
            burn_in: 0.0,
            n_paths: 4,
            ..SimConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = [
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { burn_in: 500.0, ..SimConfig::default() },
            SimConfig { blowup_log_threshold: f64::INFINITY, ..SimConfig::default() },
            SimConfig { record_every: 0, ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(SimError::InvalidConfig(_))));
        }
    }

    #[test]
    fn rejects_nonpositive_start() {
        let m = logistic(2.0, 1.0, 1.0);
        assert!(matches!(
            simulate_path(&m, &[0.0], &short(1.0), 0),
            Err(SimError::InvalidStart(_))
        ));
        assert!(matches!(
            simulate_path(&m, &[1.0, 1.0], &short(1.0), 0),
            Err(SimError::InvalidStart(_))
        ));
    }

    #[test]
    fn grid_is_uniform_in_time() {
        let m = logistic(2.0, 1.0, 1.0);
        let cfg = SimConfig { record_every: 10, ..short(2.0) };
        let tr = simulate_path(&m, &[1.0], &cfg, 0).unwrap();
        assert_eq!(tr.times.len(), 201);
        for w in tr.times.windows(2) {
            assert!((w[1] - w[0] - 0.01).abs() < 1e-12);
        }
        assert!(tr.log_states.iter().all(|y| y[0].exp() > 0.0));
    }

    #[test]
    fn noiseless_logistic_follows_ode() {
        let m = logistic(2.0, 1.0, 0.0);
        let cfg = short(5.0);
        let tr = simulate_path(&m, &[0.1], &cfg, 0).unwrap();
        let exact = |t: f64| {
            let (k, x0) = (2.0, 0.1);
            k / (1.0 + (k / x0 - 1.0) * (-2.0 * t).exp())
        };
        let worst = tr
            .times
            .iter()
            .zip(&tr.log_states)
            .map(|(t, y)| (y[0].exp() - exact(*t)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "worst deviation {worst}");
        let half = simulate_path(&m, &[0.1], &SimConfig { dt: 5e-4, ..cfg }, 0).unwrap();
        let worst_half = half
            .times
            .iter()
            .zip(&half.log_states)
            .map(|(t, y)| (y[0].exp() - exact(*t)).abs())
            .fold(0.0, f64::max);
        assert!(worst_half < 0.6 * worst, "first-order convergence");
    }

    #[test]
    fn same_seed_same_path() {
        let m = logistic(2.0, 1.0, 1.0);
        let cfg = short(3.0);
        let a = simulate_path(&m, &[1.0], &cfg, 5).unwrap();
        let b = simulate_path(&m, &[1.0], &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&m, &[1.0], &cfg, 6).unwrap();
        assert_ne!(a.final_log_state(), c.final_log_state());
    }

    #[test]
    fn constant_drift_exponent() {
        let m = KolmogorovModel::new(
            Dynamics::Lv {
                a: vec![-1.0],
                b: Matrix::zeros(1),
                g: vec![0.0],
            },
            Matrix::identity(1),
        )
        .unwrap();
        let cfg = SimConfig { t_max: 10.0, burn_in: 2.0, ..SimConfig::default() };
        let tr = simulate_path(&m, &[3.0], &cfg, 0).unwrap();
        let e = empirical_lyapunov(&tr, 0);
        assert!((e.rate + 1.0).abs() < 1e-9);
        assert!(!e.blowup);
    }

    #[test]
    fn blowup_halts_and_flags() {
        let m = logistic(5.0, 0.0, 0.0);
        let tr = simulate_path(&m, &[1.0], &short(20.0), 0).unwrap();
        let b = tr.flags.blowup.expect("flagged");
        // ln X = 5t crosses 30 at t = 6.
        assert!((b.time - 6.0).abs() < 2e-3);
        assert_eq!(*tr.times.last().unwrap(), b.time);
        assert!(empirical_lyapunov(&tr, 0).blowup);
    }

    #[test]
    fn extinction_is_flagged_but_not_halted() {
        let m = logistic(-5.0, 0.0, 0.0);
        let tr = simulate_path(&m, &[1.0], &short(10.0), 0).unwrap();
        let te = tr.flags.extinct[0].expect("flagged");
        assert!((te - 4.0).abs() < 2e-3);
        assert_eq!(*tr.times.last().unwrap(), 10.0);
        assert_eq!(tr.flags.tokens_at(3.0), "");
        assert_eq!(tr.flags.tokens_at(5.0), "extinct:x1");
    }

    #[test]
    fn csv_never_prints_zero() {
        let m = logistic(-300.0, 0.0, 0.0);
        let cfg = SimConfig { record_every: 1000, ..short(5.0) };
        let tr = simulate_path(&m, &[1.0], &cfg, 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,flags"));
        for line in lines {
            let field = line.split(',').nth(1).unwrap();
            assert!(!field.starts_with('0'), "{line}");
        }
        assert!(text.lines().last().unwrap().ends_with("extinct:x1"));
    }

    #[test]
    fn constant_trajectory_occupies_one_cell() {
        let m = logistic(0.0, 0.0, 0.0);
        let tr = simulate_path(&m, &[1.0], &short(1.0), 0).unwrap();
        let h = occupation_histogram(&tr, &LogGrid::uniform(1, -5.0, 5.0, 10));
        let masses = h.masses();
        assert_eq!(masses.iter().filter(|m| **m > 0.0).count(), 1);
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h.total_time() - 1.0).abs() < 1e-9);
        assert_eq!(h.overflow_mass(), 0.0);
    }

    #[test]
    fn grid_cells_and_overflow() {
        let g = LogGrid::uniform(2, 0.0, 1.0, 4);
        assert_eq!(g.n_cells(), 36);
        assert_eq!(g.unravel(g.cell(&[-1.0, 0.3])), vec![0, 2]);
        assert_eq!(g.unravel(g.cell(&[1.0, 0.99])), vec![5, 4]);
        assert!(g.is_overflow(g.cell(&[2.0, 0.5])));
        assert!(!g.is_overflow(g.cell(&[0.5, 0.5])));
        assert_eq!(g.centre(0, 1), Some(0.125));
        assert_eq!(g.centre(0, 0), None);
        assert!(LogGrid::with_cell_budget(3, 0.0, 1.0, 4096).n_cells() <= 4096);
    }

    #[test]
    fn single_path_ensemble_matches_simulate_path() {
        let m = logistic(2.0, 1.0, 1.0);
        let cfg = SimConfig { n_paths: 1, t_max: 5.0, burn_in: 1.0, ..SimConfig::default() };
        let ens = simulate_ensemble(&m, &[1.0], &cfg, &EnsembleOptions::default()).unwrap();
        let tr = simulate_path(&m, &[1.0], &cfg, 0).unwrap();
        let p = &ens.paths[0];
        assert_eq!(p.y_end.as_slice(), tr.final_log_state());
        assert_eq!(p.flags, tr.flags);
        assert_eq!(p.exponent(0), empirical_lyapunov(&tr, 0));
    }

    #[test]
    fn correlated_noise_increments() {
        let rho = 0.6;
        let sigma = Matrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]).unwrap();
        let m = KolmogorovModel::new(
            Dynamics::Lv { a: vec![0.5, 0.5], b: Matrix::zeros(2), g: vec![1.0, 1.0] },
            sigma,
        )
        .unwrap();
        let cfg = SimConfig {
            t_max: 1e3,
            burn_in: 0.0,
            blowup_log_threshold: 1e300,
            extinct_log_threshold: -1e300,
            ..SimConfig::default()
        };
        let tr = simulate_path(&m, &[1.0, 1.0], &cfg, 0).unwrap();
        let inc: Vec<(f64, f64)> = tr
            .log_states
            .windows(2)
            .map(|w| (w[1][0] - w[0][0], w[1][1] - w[0][1]))
            .collect();
        let n = inc.len() as f64;
        let (sx, sy) = inc.iter().fold((0.0, 0.0), |a, d| (a.0 + d.0, a.1 + d.1));
        let (mx, my) = (sx / n, sy / n);
        let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
        for (dx, dy) in &inc {
            cxx += (dx - mx) * (dx - mx);
            cyy += (dy - my) * (dy - my);
            cxy += (dx - mx) * (dy - my);
        }
        let r = cxy / (cxx * cyy).sqrt();
        let se = (1.0 - rho * rho) / n.sqrt();
        assert!((r - rho).abs() < 3.0 * se, "r = {r}, se = {se}");
    }
}

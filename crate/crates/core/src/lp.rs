//! Dense two-phase simplex for small linear programs.
//!
//! Problems are stated as `maximize cᵀx` subject to linear rows with
//! `≤`, `≥` or `=` relations and `x ≥ 0`. Pivoting follows Bland's rule
//! (lowest eligible index for both entering and leaving variables), which
//! rules out cycling on degenerate vertices.

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    rel: Relation,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    /// `maximize objective · x` over `x ≥ 0`.
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram {
            n_vars: objective.len(),
            objective,
            rows: Vec::new(),
        }
    }

    pub fn constraint(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.n_vars, "constraint width");
        self.rows.push(Row { coeffs, rel, rhs });
        self
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    /// m rows of `width + 1` entries; the last entry is the right-hand side.
    a: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_vars: usize,
    width: usize,
    artificial_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        // Normalize to nonnegative right-hand sides.
        let rows: Vec<Row> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    Row {
                        coeffs: r.coeffs.iter().map(|c| -c).collect(),
                        rel: match r.rel {
                            Relation::Le => Relation::Ge,
                            Relation::Ge => Relation::Le,
                            Relation::Eq => Relation::Eq,
                        },
                        rhs: -r.rhs,
                    }
                } else {
                    r.clone()
                }
            })
            .collect();
        let n_slack = rows.iter().filter(|r| r.rel != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.rel != Relation::Le).count();
        let artificial_start = lp.n_vars + n_slack;
        let width = artificial_start + n_art;
        let mut a = vec![vec![0.0; width + 1]; m];
        let mut basis = vec![0; m];
        let (mut s, mut art) = (lp.n_vars, artificial_start);
        for (i, r) in rows.iter().enumerate() {
            a[i][..lp.n_vars].copy_from_slice(&r.coeffs);
            a[i][width] = r.rhs;
            match r.rel {
                Relation::Le => {
                    a[i][s] = 1.0;
                    basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    a[i][s] = -1.0;
                    s += 1;
                    a[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    a[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            a,
            basis,
            n_vars: lp.n_vars,
            width,
            artificial_start,
        }
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        if self.artificial_start < self.width {
            let mut phase1 = vec![0.0; self.width];
            for c in phase1.iter_mut().skip(self.artificial_start) {
                *c = -1.0;
            }
            if self.optimize(&phase1, self.width).is_err() {
                unreachable!("phase one is bounded");
            }
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.a)
                .filter(|(b, _)| **b >= self.artificial_start)
                .map(|(_, row)| row[self.width])
                .sum();
            let scale = 1.0 + self.a.iter().map(|r| r[self.width].abs()).fold(0.0, f64::max);
            if infeasibility > 1e-9 * scale {
                return LpOutcome::Infeasible;
            }
            self.evict_artificials();
        }
        let mut full = vec![0.0; self.width];
        full[..self.n_vars].copy_from_slice(objective);
        if self.optimize(&full, self.artificial_start).is_err() {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.n_vars];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_vars {
                x[b] = self.a[i][self.width].max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { x, value }
    }

    /// Primal simplex on columns `0..allowed`. `Err` means unbounded.
    fn optimize(&mut self, c: &[f64], allowed: usize) -> Result<(), ()> {
        loop {
            let reduced = |j: usize, t: &Tableau| -> f64 {
                c[j] - t
                    .basis
                    .iter()
                    .zip(&t.a)
                    .map(|(&b, row)| c[b] * row[j])
                    .sum::<f64>()
            };
            let Some(enter) = (0..allowed)
                .filter(|j| !self.basis.contains(j))
                .find(|&j| reduced(j, self) > EPS)
            else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                if row[enter] > EPS {
                    let ratio = row[self.width] / row[enter];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - EPS
                                || (ratio <= lr + EPS && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(());
            };
            self.pivot(row, enter);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[row][col];
        for v in self.a[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.a[row].clone();
        for (i, r) in self.a.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[row] = col;
    }

    /// After phase one, replaces artificial basics (at zero level) by real
    /// columns, dropping rows that turn out to be redundant.
    fn evict_artificials(&mut self) {
        let mut i = 0;
        while i < self.basis.len() {
            if self.basis[i] >= self.artificial_start {
                match (0..self.artificial_start).find(|&j| self.a[i][j].abs() > 1e-9) {
                    Some(j) => self.pivot(i, j),
                    None => {
                        self.a.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(o: LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0)
            .constraint(vec![0.0, 2.0], Relation::Le, 12.0)
            .constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(lp.solve());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max -x - y, x + y = 1, x ≥ 0.25 → value -1 with x ≥ 0.25.
        let mut lp = LinearProgram::maximize(vec![-1.0, -1.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constraint(vec![1.0, 0.0], Relation::Ge, 0.25);
        let (x, v) = optimal(lp.solve());
        assert!((v + 1.0).abs() < 1e-12);
        assert!(x[0] >= 0.25 - 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // max x, -x ≥ -3  (i.e. x ≤ 3).
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constraint(vec![-1.0], Relation::Ge, -3.0);
        assert!((optimal(lp.solve()).1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constraint(vec![1.0], Relation::Le, 1.0)
            .constraint(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.constraint(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, v) = optimal(lp.solve());
        assert!((v - 2.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Beale's classic cycling example; Bland's rule must terminate.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        lp.constraint(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constraint(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constraint(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, v) = optimal(lp.solve());
        assert!((v - 0.05).abs() < 1e-9);
    }
}

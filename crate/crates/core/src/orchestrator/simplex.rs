//! Dense two-phase simplex with Bland's pivoting rule.

use crate::error::{Error, Result};

const EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// `maximize c·x subject to constraints, x >= 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram { objective, constraints: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n_vars());
        self.constraints.push(Constraint { coeffs, cmp, rhs });
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau {
    /// Row-major, `rows x (cols + 1)`; the last column is the right-hand side.
    a: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    n_vars: usize,
    /// Columns at or past this index are artificial.
    first_artificial: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let rows = lp.constraints.len();
        let normalized: Vec<(Vec<f64>, Cmp, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.cmp {
                        Cmp::Le => Cmp::Ge,
                        Cmp::Ge => Cmp::Le,
                        Cmp::Eq => Cmp::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.cmp, c.rhs)
                }
            })
            .collect();
        let n_slack = normalized.iter().filter(|c| c.1 != Cmp::Eq).count();
        let n_art = normalized.iter().filter(|c| c.1 != Cmp::Le).count();
        let cols = n + n_slack + n_art;
        let width = cols + 1;
        let mut a = vec![0.0; rows * width];
        let mut basis = vec![0; rows];
        let mut slack = n;
        let mut art = n + n_slack;
        for (r, (coeffs, cmp, rhs)) in normalized.iter().enumerate() {
            a[r * width..r * width + n].copy_from_slice(coeffs);
            a[r * width + cols] = *rhs;
            match cmp {
                Cmp::Le => {
                    a[r * width + slack] = 1.0;
                    basis[r] = slack;
                    slack += 1;
                }
                Cmp::Ge => {
                    a[r * width + slack] = -1.0;
                    slack += 1;
                    a[r * width + art] = 1.0;
                    basis[r] = art;
                    art += 1;
                }
                Cmp::Eq => {
                    a[r * width + art] = 1.0;
                    basis[r] = art;
                    art += 1;
                }
            }
        }
        Tableau { a, rows, cols, basis, n_vars: n, first_artificial: n + n_slack }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let width = self.cols + 1;
        let p = self.a[pr * width + pc];
        for v in &mut self.a[pr * width..(pr + 1) * width] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.a[pr * width..(pr + 1) * width].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * width + pc];
            if f != 0.0 {
                for (v, pv) in self.a[r * width..(r + 1) * width].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[pr] = pc;
    }

    /// Maximizes `cost` over the current basis, never letting columns at or
    /// past `limit` enter. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], limit: usize) -> bool {
        loop {
            // Bland: first column with a positive reduced cost enters.
            let mut entering = None;
            for j in 0..limit {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut reduced = cost[j];
                for r in 0..self.rows {
                    reduced -= cost[self.basis[r]] * self.at(r, j);
                }
                if reduced > EPS {
                    entering = Some(j);
                    break;
                }
            }
            let Some(pc) = entering else { return true };
            // Minimum ratio; ties go to the smallest basic column index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v > EPS {
                    let ratio = self.rhs(r) / v;
                    let take = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - EPS || (ratio <= best + EPS && self.basis[r] < self.basis[lr])
                        }
                    };
                    if take {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, _)) = leave else { return false };
            self.pivot(pr, pc);
        }
    }

    fn solve(mut self, objective: &[f64]) -> Result<LpSolution> {
        if self.first_artificial < self.cols {
            let mut phase1 = vec![0.0; self.cols];
            for v in &mut phase1[self.first_artificial..] {
                *v = -1.0;
            }
            self.optimize(&phase1, self.cols);
            let infeasibility: f64 = (0..self.rows)
                .filter(|&r| self.basis[r] >= self.first_artificial)
                .map(|r| self.rhs(r))
                .sum();
            let scale = 1.0 + (0..self.rows).map(|r| self.rhs(r).abs()).fold(0.0, f64::max);
            if infeasibility > 1e-9 * scale {
                return Err(Error::InfeasibleRouting("constraints admit no solution".into()));
            }
            // Drive zero-valued artificials out of the basis; rows where
            // that is impossible are redundant and dropped.
            let mut r = 0;
            while r < self.rows {
                if self.basis[r] >= self.first_artificial {
                    if let Some(c) = (0..self.first_artificial).find(|&c| self.at(r, c).abs() > EPS) {
                        self.pivot(r, c);
                    } else {
                        self.drop_row(r);
                        continue;
                    }
                }
                r += 1;
            }
        }
        let mut cost = vec![0.0; self.cols];
        cost[..self.n_vars].copy_from_slice(objective);
        if !self.optimize(&cost, self.first_artificial) {
            return Err(Error::InfeasibleRouting("objective is unbounded".into()));
        }
        let mut x = vec![0.0; self.n_vars];
        for r in 0..self.rows {
            if self.basis[r] < self.n_vars {
                x[self.basis[r]] = self.rhs(r).max(0.0);
            }
        }
        let objective = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective })
    }

    fn drop_row(&mut self, r: usize) {
        let width = self.cols + 1;
        self.a.drain(r * width..(r + 1) * width);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

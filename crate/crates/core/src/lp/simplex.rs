//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Solves `min c·x  s.t.  A x = b, x ≥ 0`.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const FEASIBILITY_TOL: f64 = 1e-7;
pub const MAX_PIVOTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct StandardSolution {
    pub status: Status,
    pub objective: f64,
    pub x: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    cells: Vec<Vec<f64>>,
    /// Reduced-cost row, same width.
    cost: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.cells[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<()> {
        self.pivots += 1;
        if self.pivots > MAX_PIVOTS {
            return Err(Error::Numerical(format!("simplex exceeded {MAX_PIVOTS} pivots")));
        }
        let p = self.cells[row][col];
        for v in self.cells[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.cells[row].clone();
        for (r, line) in self.cells.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                line[col] = 0.0;
            }
        }
        let f = self.cost[col];
        if f != 0.0 {
            for (v, pv) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.cost[col] = 0.0;
        }
        self.basis[row] = col;
        Ok(())
    }

    /// Runs Bland's rule over the columns allowed by `eligible`.
    /// Returns `false` if the problem is unbounded along some column.
    fn optimize(&mut self, eligible: &dyn Fn(usize) -> bool) -> Result<bool> {
        loop {
            let Some(col) = (0..self.cols).find(|&j| eligible(j) && self.cost[j] < -PIVOT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.cells.len() {
                let a = self.cells[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - PIVOT_TOL
                                || (ratio <= bratio + PIVOT_TOL && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, col)?,
            }
        }
    }
}

/// Minimises `c·x` subject to `a x = b`, `x ≥ 0`.
pub fn solve_standard(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<StandardSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::Usage("constraint matrix, rhs and objective sizes disagree".into()));
    }

    // columns: originals 0..n, artificials n..n+m
    let cols = n + m;
    let mut cells = Vec::with_capacity(m);
    for (i, row) in a.iter().enumerate() {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut line = vec![0.0; cols + 1];
        for (j, v) in row.iter().enumerate() {
            line[j] = sign * v;
        }
        line[n + i] = 1.0;
        line[cols] = sign * b[i];
        cells.push(line);
    }

    // phase one: minimise the sum of artificials
    let mut cost = vec![0.0; cols + 1];
    for line in &cells {
        for j in 0..n {
            cost[j] -= line[j];
        }
        cost[cols] -= line[cols];
    }
    let mut t = Tableau { cells, cost, basis: (n..n + m).collect(), cols, pivots: 0 };
    t.optimize(&|_| true)?;
    let infeasibility = -t.cost[cols];
    if infeasibility > FEASIBILITY_TOL {
        return Ok(StandardSolution { status: Status::Infeasible, objective: f64::NAN, x: vec![], pivots: t.pivots });
    }

    // drive artificials out of the basis; rows where that is impossible are redundant
    let mut r = 0;
    while r < t.cells.len() {
        if t.basis[r] >= n {
            if let Some(col) = (0..n).find(|&j| t.cells[r][j].abs() > PIVOT_TOL) {
                t.pivot(r, col)?;
                r += 1;
            } else {
                t.cells.remove(r);
                t.basis.remove(r);
            }
        } else {
            r += 1;
        }
    }

    // phase two: original objective, artificials barred from entering
    let mut cost = vec![0.0; cols + 1];
    cost[..n].copy_from_slice(c);
    for (r, &bv) in t.basis.iter().enumerate() {
        let f = cost[bv];
        if f != 0.0 {
            for (v, tv) in cost.iter_mut().zip(&t.cells[r]) {
                *v -= f * tv;
            }
        }
    }
    t.cost = cost;
    if !t.optimize(&|j| j < n)? {
        return Ok(StandardSolution {
            status: Status::Unbounded,
            objective: f64::NEG_INFINITY,
            x: vec![],
            pivots: t.pivots,
        });
    }

    let mut x = vec![0.0; n];
    for (r, &bv) in t.basis.iter().enumerate() {
        if bv < n {
            x[bv] = t.rhs(r).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(StandardSolution { status: Status::Optimal, objective, x, pivots: t.pivots })
}

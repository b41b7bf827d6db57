//! Query-design linear programs and the solver behind them.
//!
//! Variables are `p(q, x | u)` for every query set `q`, request `x ∈ q` and
//! context `u`; decodability is built into the column map. Constraints pin
//! the `(u, x)` marginals to the law and force `Σ_x p(q, x | u)` to be equal
//! across contexts for every `q`.

mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use simplex::{solve_standard, StandardSolution, Status, MAX_PIVOTS};

use crate::error::{Error, Result};
use crate::model::ConditionalLaw;
use crate::scheme::QuerySet;

/// Largest `n` accepted for the unrestricted LP.
pub const MAX_FULL_SOURCES: usize = 12;
/// Largest `n` accepted with a cardinality cap.
pub const MAX_CAPPED_SOURCES: usize = 20;
/// Dense tableau size guard, in cells.
pub const MAX_TABLEAU_CELLS: usize = 50_000_000;

/// One LP column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub q: QuerySet,
    pub x: usize,
    pub u: usize,
}

#[derive(Debug, Clone)]
pub struct LpProblem {
    pub n: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: Status,
    pub optimum: f64,
    /// Nonzero `(column, value)` pairs.
    pub assignment: Vec<(Column, f64)>,
}

/// Query sets allowed under an optional cardinality cap `c`: all nonempty
/// sets, or those with `|q| ∈ {1..c, n}`.
fn candidate_queries(n: usize, cap: Option<usize>) -> Vec<QuerySet> {
    match cap {
        None => (1..(1u64 << n)).map(QuerySet::from_bits).collect(),
        Some(c) => {
            let mut out = Vec::new();
            for size in 1..=c.min(n) {
                push_subsets(n, size, 0, 0, &mut out);
            }
            if c < n {
                out.push(QuerySet::full(n));
            }
            out
        }
    }
}

fn push_subsets(n: usize, size: usize, start: usize, acc: u64, out: &mut Vec<QuerySet>) {
    if size == 0 {
        out.push(QuerySet::from_bits(acc));
        return;
    }
    for i in start..=n - size {
        push_subsets(n, size - 1, i + 1, acc | 1 << i, out);
    }
}

/// Builds the query-design LP for `law`, optionally restricted to
/// `|q| ∈ {1..cap, n}`. `prior` weights contexts in the objective
/// (uniform when `None`).
pub fn build_lp(law: &ConditionalLaw, cap: Option<usize>, prior: Option<&[f64]>) -> Result<LpProblem> {
    let n = law.n();
    match cap {
        None if n > MAX_FULL_SOURCES => {
            return Err(Error::Capacity(format!("full LP limited to n ≤ {MAX_FULL_SOURCES}, got {n}")))
        }
        Some(_) if n > MAX_CAPPED_SOURCES => {
            return Err(Error::Capacity(format!("capped LP limited to n ≤ {MAX_CAPPED_SOURCES}, got {n}")))
        }
        Some(0) => return Err(Error::Usage("cardinality cap must be at least 1".into())),
        _ => {}
    }
    let uniform = vec![1.0 / n as f64; n];
    let prior = prior.unwrap_or(&uniform);
    if prior.len() != n {
        return Err(Error::Usage(format!("prior has {} entries, expected {n}", prior.len())));
    }

    let queries = candidate_queries(n, cap);
    let mut columns = Vec::new();
    for &q in &queries {
        for u in 0..n {
            for x in q.members() {
                columns.push(Column { q, x, u });
            }
        }
    }
    let rows = n * n + queries.len() * (n - 1);
    if rows.saturating_mul(columns.len() + rows) > MAX_TABLEAU_CELLS {
        return Err(Error::Capacity(format!(
            "LP with {} columns and {rows} rows exceeds the dense tableau limit",
            columns.len()
        )));
    }

    let objective = columns.iter().map(|c| c.q.len() as f64 * prior[c.u]).collect();
    let mut constraints = Vec::with_capacity(rows);
    let mut rhs = Vec::with_capacity(rows);

    // Σ_q p(q, x | u) = p(x | u)
    for u in 0..n {
        for x in 0..n {
            constraints.push(columns.iter().map(|c| f64::from(u8::from(c.u == u && c.x == x))).collect());
            rhs.push(law.get(u, x));
        }
    }
    // Σ_x p(q, x | u) = Σ_x p(q, x | 0) for u ≥ 1
    for &q in &queries {
        for u in 1..n {
            constraints.push(
                columns
                    .iter()
                    .map(|c| match (c.q == q, c.u) {
                        (true, cu) if cu == u => 1.0,
                        (true, 0) => -1.0,
                        _ => 0.0,
                    })
                    .collect(),
            );
            rhs.push(0.0);
        }
    }

    Ok(LpProblem { n, objective, constraints, rhs, columns })
}

pub fn solve(problem: &LpProblem) -> Result<LpSolution> {
    let s = solve_standard(&problem.objective, &problem.constraints, &problem.rhs)?;
    let assignment = match s.status {
        Status::Optimal => {
            problem.columns.iter().zip(&s.x).filter(|(_, v)| **v > 0.0).map(|(c, v)| (*c, *v)).collect()
        }
        _ => Vec::new(),
    };
    Ok(LpSolution { status: s.status, optimum: s.objective, assignment })
}

/// Optimal `E[|Q|]` for `law`, unrestricted or capped.
pub fn optimal_expected_cardinality(law: &ConditionalLaw, cap: Option<usize>) -> Result<f64> {
    let sol = solve(&build_lp(law, cap, None)?)?;
    match sol.status {
        Status::Optimal => Ok(sol.optimum),
        other => Err(Error::Numerical(format!("query-design LP ended {other:?}"))),
    }
}

impl LpProblem {
    /// Largest constraint residual of `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: objective, constraint rows, then the column legend.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let terms = |row: &[f64]| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| format!("{v:+}*c{j}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "min {}", terms(&self.objective));
        for (row, b) in self.constraints.iter().zip(&self.rhs) {
            let _ = writeln!(out, "{} = {b}", terms(row));
        }
        for (j, c) in self.columns.iter().enumerate() {
            let _ = writeln!(out, "({},{},{}) -> c{j}", c.q, c.x, c.u);
        }
        out
    }
}

impl LpSolution {
    pub fn dense(&self, problem: &LpProblem) -> Vec<f64> {
        problem
            .columns
            .iter()
            .map(|c| self.assignment.iter().find(|(k, _)| k == c).map_or(0.0, |(_, v)| *v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarkovModel;

    fn eq20() -> ConditionalLaw {
        ConditionalLaw::new(vec![vec![0.1, 0.3, 0.6], vec![0.5, 0.4, 0.1], vec![0.2, 0.5, 0.3]]).unwrap()
    }

    #[test]
    fn column_counts() {
        let two = MarkovModel::two_state(0.2, 0.2).unwrap().transition();
        assert_eq!(build_lp(&two, None, None).unwrap().columns.len(), 8);
        assert_eq!(build_lp(&eq20(), None, None).unwrap().columns.len(), 36);
        let capped = build_lp(&eq20(), Some(1), None).unwrap();
        let qs: std::collections::BTreeSet<QuerySet> = capped.columns.iter().map(|c| c.q).collect();
        let want = [QuerySet::singleton(0), QuerySet::singleton(1), QuerySet::singleton(2), QuerySet::full(3)];
        assert_eq!(qs, want.into_iter().collect());
    }

    #[test]
    fn optimum_examples() {
        let two = MarkovModel::two_state(0.2, 0.2).unwrap().transition();
        assert!((optimal_expected_cardinality(&two, None).unwrap() - 1.6).abs() < 1e-9);
        assert!((optimal_expected_cardinality(&eq20(), None).unwrap() - 1.6).abs() < 1e-9);
        let sym = MarkovModel::symmetric(3, 0.1).unwrap().transition();
        let opt = optimal_expected_cardinality(&sym, None).unwrap();
        assert!((1.35 - 1e-9..=1.7 + 1e-9).contains(&opt), "{opt}");
        assert!((optimal_expected_cardinality(&eq20(), Some(1)).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn solution_satisfies_constraints() {
        let p = build_lp(&eq20(), None, None).unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Optimal);
        let x = s.dense(&p);
        assert!(p.max_residual(&x) < 1e-7);
        let obj: f64 = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        assert!((obj - s.optimum).abs() < 1e-7);
    }

    #[test]
    fn guards() {
        assert!(matches!(build_lp(&ConditionalLaw::identity(13), None, None), Err(Error::Capacity(_))));
        assert!(matches!(build_lp(&ConditionalLaw::identity(21), Some(1), None), Err(Error::Capacity(_))));
        assert!(build_lp(&eq20(), Some(0), None).is_err());
    }

    #[test]
    fn dump_lists_every_column() {
        let two = MarkovModel::two_state(0.2, 0.2).unwrap().transition();
        let p = build_lp(&two, None, None).unwrap();
        let text = p.dump();
        assert!(text.starts_with("min "));
        assert_eq!(text.lines().filter(|l| l.contains(") -> c")).count(), 8);
        assert!(text.contains("({0,1},1,0) -> c"));
    }
}

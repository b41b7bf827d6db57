//! Polynomial-time construction of a private, decodable multiset query law
//! whose cardinality law is exactly `θ`.
//!
//! Stage `ℓ = 1..=σ+1` places the mass that queries of cardinality `ℓ` carry.
//! For each request `x`, the contexts `u^(x,1..ℓ-1)` (the ones whose budget
//! for `x` is already used up) borrow mass from other requests through the
//! residual matrix, and the borrowed pieces are zipped together into
//! multisets by a buffer merge.

use crate::error::{Error, Result};
use crate::model::{ConditionalLaw, OrderStats};
use crate::scheme::{Multiset, QueryDistribution};
use crate::verify::audit_distribution;

/// Cells and targets at or below this are treated as exactly zero.
const PRUNE: f64 = 1e-14;

/// One lane of the buffer merge: the `(request, mass)` pieces borrowed from a
/// single context row.
type Lane = Vec<(usize, f64)>;

/// Builds `p(z, x | u)` for `law` following the precomputed `stats`.
///
/// The output is audited before it is returned; an audit failure is reported
/// as [`Error::Internal`].
pub fn build_query_distribution(law: &ConditionalLaw, stats: &OrderStats) -> Result<QueryDistribution> {
    let dist = build_unchecked(law, stats)?;
    let report = audit_distribution(&dist, law, stats);
    if !report.passed {
        return Err(Error::Internal(format!("built distribution failed its audit: {}", report.summary())));
    }
    Ok(dist)
}

pub(crate) fn build_unchecked(law: &ConditionalLaw, stats: &OrderStats) -> Result<QueryDistribution> {
    let n = law.n();
    if stats.n() != n {
        return Err(Error::Usage(format!("order stats for {} sources, law has {n}", stats.n())));
    }
    let deltas = &stats.deltas;

    // residual[u][k]: mass of p(k|u) above the budget δ_k, still unassigned
    let mut residual: Vec<f64> = (0..n * n)
        .map(|idx| {
            let v = law.get(idx / n, idx % n) - deltas[idx % n];
            if v > PRUNE {
                v
            } else {
                0.0
            }
        })
        .collect();

    let mut cells: Vec<(Multiset, usize, usize, f64)> = Vec::new();
    let last_stage = (stats.sigma + 1).min(n);
    let mut in_prefix = vec![false; n];

    for stage in 1..=last_stage {
        for (x, order) in stats.orderings.iter().enumerate() {
            let upper = deltas[x].min(law.get(order[stage - 1], x));
            let lower = if stage > 1 { law.get(order[stage - 2], x) } else { 0.0 };
            let target = upper - lower;
            if target <= PRUNE {
                continue;
            }

            let prefix = &order[..stage - 1];
            let lanes: Vec<Lane> = prefix
                .iter()
                .map(|&u| borrow_from_row(&mut residual[u * n..(u + 1) * n], target))
                .collect();

            in_prefix.iter_mut().for_each(|f| *f = false);
            for &u in prefix {
                in_prefix[u] = true;
            }

            for (picks, mass) in merge_lanes(&lanes, target) {
                let z = Multiset::from_elements(n, picks.iter().copied().chain(std::iter::once(x)));
                for (i, &u) in prefix.iter().enumerate() {
                    cells.push((z.clone(), picks[i], u, mass));
                }
                for u in (0..n).filter(|&u| !in_prefix[u]) {
                    cells.push((z.clone(), x, u, mass));
                }
            }
        }
    }

    Ok(QueryDistribution::from_cells(n, cells))
}

/// Takes `target` mass from a residual row, scanning left to right and
/// truncating the final cell.
fn borrow_from_row(row: &mut [f64], target: f64) -> Lane {
    let mut lane = Vec::new();
    let mut taken = 0.0;
    for (k, cell) in row.iter_mut().enumerate() {
        if *cell <= 0.0 {
            continue;
        }
        if taken + *cell < target {
            lane.push((k, *cell));
            taken += *cell;
            *cell = 0.0;
        } else {
            let piece = target - taken;
            lane.push((k, piece));
            *cell -= piece;
            if *cell <= PRUNE {
                *cell = 0.0;
            }
            return lane;
        }
    }
    // Row ran dry from rounding: push the shortfall onto the last piece.
    if let Some(last) = lane.last_mut() {
        last.1 += target - taken;
    }
    lane
}

/// Zips lanes of equal total into `(one pick per lane, mass)` groups: the
/// smallest head is emitted, subtracted from every head, and its lane
/// advances. Ties go to the lowest lane index.
fn merge_lanes(lanes: &[Lane], target: f64) -> Vec<(Vec<usize>, f64)> {
    if lanes.is_empty() {
        return vec![(Vec::new(), target)];
    }
    let mut pos = vec![0usize; lanes.len()];
    if lanes.iter().any(Vec::is_empty) {
        return Vec::new();
    }
    let mut heads: Vec<f64> = lanes.iter().map(|l| l[0].1).collect();
    let mut groups = Vec::new();
    loop {
        let mut m = 0;
        for i in 1..heads.len() {
            if heads[i] < heads[m] {
                m = i;
            }
        }
        let mass = heads[m];
        if mass > PRUNE {
            let picks = lanes.iter().zip(&pos).map(|(lane, &p)| lane[p].0).collect();
            groups.push((picks, mass));
        }
        for h in heads.iter_mut() {
            *h -= mass;
        }
        pos[m] += 1;
        if pos[m] == lanes[m].len() {
            break;
        }
        heads[m] = lanes[m][pos[m]].1;
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::order_stats;

    fn eq20() -> ConditionalLaw {
        ConditionalLaw::new(vec![vec![0.1, 0.3, 0.6], vec![0.5, 0.4, 0.1], vec![0.2, 0.5, 0.3]]).unwrap()
    }

    #[test]
    fn borrow_truncates_last_cell() {
        let mut row = vec![0.0, 0.2, 0.1, 0.4];
        let lane = borrow_from_row(&mut row, 0.25);
        assert_eq!(lane.len(), 2);
        assert_eq!(lane[0], (1, 0.2));
        assert_eq!(lane[1].0, 2);
        assert!((lane[1].1 - 0.05).abs() < 1e-15);
        assert!((row[2] - 0.05).abs() < 1e-15);
        assert_eq!(row[1], 0.0);
        assert_eq!(row[3], 0.4);
    }

    #[test]
    fn merge_splits_at_every_boundary() {
        // lanes 0.5 = 0.2 + 0.3 and 0.5 = 0.4 + 0.1
        let lanes = vec![vec![(0, 0.2), (1, 0.3)], vec![(2, 0.4), (3, 0.1)]];
        let groups = merge_lanes(&lanes, 0.5);
        let picks: Vec<Vec<usize>> = groups.iter().map(|g| g.0.clone()).collect();
        assert_eq!(picks, vec![vec![0, 2], vec![1, 2], vec![1, 3]]);
        let masses: Vec<f64> = groups.iter().map(|g| g.1).collect();
        for (m, want) in masses.iter().zip([0.2, 0.2, 0.1]) {
            assert!((m - want).abs() < 1e-15);
        }
    }

    #[test]
    fn merge_tie_breaks_to_lowest_lane() {
        let lanes = vec![vec![(0, 0.3), (1, 0.2)], vec![(2, 0.3), (3, 0.2)]];
        let groups = merge_lanes(&lanes, 0.5);
        let picks: Vec<Vec<usize>> = groups.iter().map(|g| g.0.clone()).collect();
        assert_eq!(picks, vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn worked_example_table() {
        let law = eq20();
        let stats = order_stats(&law);
        let d = build_query_distribution(&law, &stats).unwrap();
        assert!((d.expected_cardinality() - 1.6).abs() < 1e-12);
        assert!(d.is_set_valued());
        // cells from the worked N = 3 table, 0-based: (query, x1, x0) -> p
        let cell = |q: &[usize], x: usize, u: usize| {
            let z = Multiset::from_elements(3, q.iter().copied());
            d.entries.iter().filter(|e| e.z == z && e.x == x && e.u == u).map(|e| e.p).sum::<f64>()
        };
        let expect = [
            (&[0][..], 0, 0, 0.1),
            (&[1], 1, 0, 0.3),
            (&[2], 2, 0, 0.1),
            (&[0, 2], 2, 0, 0.3),
            (&[0, 2], 0, 1, 0.3),
            (&[0, 2], 0, 2, 0.1),
            (&[0, 2], 2, 2, 0.2),
            (&[1, 2], 2, 0, 0.1),
            (&[1, 2], 1, 1, 0.1),
            (&[1, 2], 1, 2, 0.1),
        ];
        for (q, x, u, p) in expect {
            assert!((cell(q, x, u) - p).abs() < 1e-12, "cell {q:?} x={x} u={u}: {} vs {p}", cell(q, x, u));
        }
        // the full set absorbs the remaining 0.1 in every block
        for u in 0..3 {
            let full: f64 = (0..3).map(|x| cell(&[0, 1, 2], x, u)).sum();
            assert!((full - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_rows_give_singletons() {
        let law = ConditionalLaw::independent(&[0.2, 0.5, 0.3]).unwrap();
        let d = build_query_distribution(&law, &order_stats(&law)).unwrap();
        assert!(d.entries.iter().all(|e| e.z.cardinality() == 1 && e.z.contains(e.x)));
        assert!((d.expected_set_cardinality() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_law_downloads_everything() {
        let law = ConditionalLaw::identity(4);
        let d = build_query_distribution(&law, &order_stats(&law)).unwrap();
        assert!(d.entries.iter().all(|e| e.z.to_set().len() == 4));
        assert!((d.expected_set_cardinality() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_first_off_step() {
        let law = ConditionalLaw::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let stats = order_stats(&law);
        let d = build_query_distribution(&law, &stats).unwrap();
        assert!((d.expected_cardinality() - 1.6).abs() < 1e-12);
        assert!((1.0 / d.expected_set_cardinality() - 0.625).abs() < 1e-12);
    }
}

//! Rate bounds in inverse-rate form (expected download in message lengths).

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::optimal_expected_cardinality;
use crate::model::{order_stats, ConditionalLaw, MarkovModel, OrderStats, PrivacyPattern};
use crate::sim::{enumerate_histories, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Outer1,
    Outer2,
    Inner,
    ExactN2,
    LpC1,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::Outer1 => "outer1",
            BoundKind::Outer2 => "outer2",
            BoundKind::Inner => "inner",
            BoundKind::ExactN2 => "exact_n2",
            BoundKind::LpC1 => "lp_c1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    /// `1 / R_t`.
    pub inverse_rate: f64,
    pub kind: BoundKind,
}

impl RateBound {
    pub fn rate(&self) -> f64 {
        1.0 / self.inverse_rate
    }
}

/// Converse that ignores the history: `Σ_x max_u p(x | u)`.
pub fn outer_bound_2(law: &ConditionalLaw) -> RateBound {
    RateBound { inverse_rate: law.sum_of_column_max(), kind: BoundKind::Outer2 }
}

/// Achievable download right after an ON step: `Σ_i i θ_i`.
pub fn inner_bound_first_off_step(law: &ConditionalLaw) -> RateBound {
    RateBound { inverse_rate: order_stats(law).expected_cardinality(), kind: BoundKind::Inner }
}

/// Optimal download for two sources, `gap = t - τ` steps after an ON step.
pub fn exact_rate_n2(alpha: f64, beta: f64, gap: usize) -> RateBound {
    let inverse_rate = if gap == 0 { 2.0 } else { 1.0 + (1.0 - alpha - beta).abs().powi(gap as i32) };
    RateBound { inverse_rate, kind: BoundKind::ExactN2 }
}

/// Optimum when queries are singletons or the full set.
pub fn lp_c1_closed_form(stats: &OrderStats) -> RateBound {
    let theta1 = stats.thetas.first().copied().unwrap_or(1.0);
    RateBound { inverse_rate: theta1 + stats.n() as f64 * (1.0 - theta1), kind: BoundKind::LpC1 }
}

/// History-averaged bounds for one time step under the order-statistics scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub t: usize,
    pub on: bool,
    pub gap: usize,
    pub outer2: f64,
    pub outer1: f64,
    pub inner: f64,
    /// `E[|Y_t|]` actually downloaded by the scheme.
    pub achieved: f64,
    pub lp_c1: f64,
    pub exact_n2: Option<f64>,
    pub lp_opt: Option<f64>,
    pub histories: usize,
    /// Probability of the histories kept after pruning.
    pub coverage: f64,
}

/// Bounds at `t = 0..=horizon`, averaging over query histories the scheme
/// itself induces. With `with_lp`, also the LP optimum per history.
pub fn bounds_over_horizon(
    model: &MarkovModel,
    pattern: &PrivacyPattern,
    horizon: usize,
    with_lp: bool,
) -> Result<Vec<HorizonRow>> {
    let n = model.n();
    let full = n as f64;
    let mut rows: Vec<HorizonRow> = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon.min(pattern.len().saturating_sub(1)) {
        let tau = pattern.tau_of(t)?;
        let gap = t - tau;
        let on = gap == 0;
        let exact_n2 = (n == 2).then(|| exact_rate_n2(model.p(0, 1), model.p(1, 0), gap).inverse_rate);
        rows.push(HorizonRow {
            t,
            on,
            gap,
            outer2: if on { full } else { outer_bound_2(&model.step_law(gap)).inverse_rate },
            outer1: if on { full } else { 0.0 },
            inner: if on { full } else { 0.0 },
            achieved: if on { full } else { 0.0 },
            lp_c1: if on { full } else { 0.0 },
            exact_n2,
            lp_opt: (with_lp && on).then_some(full),
            histories: 0,
            coverage: 0.0,
        });
    }

    let mut lp_error = None;
    enumerate_histories(model, pattern, Policy::Algorithm1, horizon, |t, branch, plan| {
        let row = &mut rows[t];
        row.histories += 1;
        row.coverage += branch.prob;
        let Some(plan) = plan else { return Ok(()) };
        let w = branch.prob;
        row.outer1 += w * plan.law.sum_of_column_max();
        row.inner += w * plan.stats.expected_cardinality();
        row.lp_c1 += w * lp_c1_closed_form(&plan.stats).inverse_rate;
        row.achieved += w * plan.expected_set_cardinality(&branch.belief.tau_marginal());
        if with_lp && lp_error.is_none() {
            match optimal_expected_cardinality(&plan.law, None) {
                Ok(v) => *row.lp_opt.get_or_insert(0.0) += w * v,
                Err(e) => lp_error = Some(e),
            }
        }
        Ok(())
    })?;
    if let Some(e) = lp_error {
        return Err(e);
    }

    for row in rows.iter_mut().filter(|r| !r.on) {
        let c = row.coverage;
        row.outer1 /= c;
        row.inner /= c;
        row.lp_c1 /= c;
        row.achieved /= c;
        if let Some(v) = row.lp_opt.as_mut() {
            *v /= c;
        }
    }
    Ok(rows)
}

/// CSV with header `t,F_t,outer2,outer1,inner,achieved,lp_c1[,exact_n2][,lp_opt]`.
pub fn write_bounds_csv<W: Write>(out: &mut W, rows: &[HorizonRow]) -> Result<()> {
    let with_n2 = rows.iter().any(|r| r.exact_n2.is_some());
    let with_lp = rows.iter().any(|r| r.lp_opt.is_some());
    write!(out, "t,F_t,outer2,outer1,inner,achieved,lp_c1")?;
    if with_n2 {
        write!(out, ",exact_n2")?;
    }
    if with_lp {
        write!(out, ",lp_opt")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            u8::from(r.on),
            r.outer2,
            r.outer1,
            r.inner,
            r.achieved,
            r.lp_c1
        )?;
        if with_n2 {
            write!(out, ",{}", r.exact_n2.unwrap_or(f64::NAN))?;
        }
        if with_lp {
            write!(out, ",{}", r.lp_opt.unwrap_or(f64::NAN))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One point of the two-source rate curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct N2Point {
    pub sum: f64,
    pub gap: usize,
    pub rate: f64,
}

/// Optimal rate `R = 1 / (1 + |1 - α - β|^gap)` for each `α + β` in `sums`
/// and `gap = 0..=max_gap`. The rate depends on the chain only through the sum.
pub fn n2_rate_curves(sums: &[f64], max_gap: usize) -> Result<Vec<N2Point>> {
    let mut out = Vec::with_capacity(sums.len() * (max_gap + 1));
    for &sum in sums {
        if !(0.0..=2.0).contains(&sum) {
            return Err(Error::InvalidModel(format!("alpha + beta = {sum} must lie in [0, 2]")));
        }
        for gap in 0..=max_gap {
            out.push(N2Point { sum, gap, rate: exact_rate_n2(sum / 2.0, sum / 2.0, gap).rate() });
        }
    }
    Ok(out)
}

/// First-OFF-step rates for the symmetric chain that stays put with
/// probability `α` and otherwise moves to a uniformly chosen other source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricPoint {
    pub alpha: f64,
    pub inner_rate: f64,
    pub outer_rate: f64,
}

/// Rates on `points` evenly spaced values of `α` in `[0, 1]`.
pub fn symmetric_rate_curves(n: usize, points: usize) -> Result<Vec<SymmetricPoint>> {
    if n < 2 || points < 2 {
        return Err(Error::Usage("need at least two sources and two grid points".into()));
    }
    (0..points)
        .map(|i| {
            let alpha = i as f64 / (points - 1) as f64;
            let law = MarkovModel::symmetric(n, alpha)?.transition();
            Ok(SymmetricPoint {
                alpha,
                inner_rate: inner_bound_first_off_step(&law).rate(),
                outer_rate: outer_bound_2(&law).rate(),
            })
        })
        .collect()
}

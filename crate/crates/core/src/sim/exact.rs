//! Exact enumeration of query histories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::belief::{condition, law_from_joint, BeliefState};
use super::{plan_step, Policy, StepPlan};
use crate::error::{Error, Result};
use crate::model::{MarkovModel, PrivacyPattern};
use crate::scheme::{on_step_query, QuerySet};
use crate::verify::mutual_information_bits;

/// Histories less likely than this are dropped.
pub const BRANCH_PRUNE: f64 = 1e-12;
/// Upper limit on the number of branches visited in one enumeration.
pub const MAX_BRANCHES: usize = 10_000_000;

/// One query history `q_0..q_{t-1}` with its probability and the belief it
/// induces.
#[derive(Debug, Clone)]
pub struct Branch {
    pub prob: f64,
    pub belief: BeliefState,
    pub history: Vec<QuerySet>,
}

fn check_horizon(pattern: &PrivacyPattern, horizon: usize) -> Result<()> {
    if pattern.len() <= horizon {
        return Err(Error::Usage(format!(
            "pattern covers steps 0..{} but the horizon is {horizon}",
            pattern.len() - 1
        )));
    }
    Ok(())
}

fn capacity() -> Error {
    Error::Capacity(format!("more than {MAX_BRANCHES} query histories; use the Monte Carlo simulator instead"))
}

/// Walks every query history up to `horizon` with probability at least
/// [`BRANCH_PRUNE`]. `visit(t, branch, plan)` sees each branch at time `t`
/// before `q_t` is drawn; `plan` is `None` on ON steps.
pub fn enumerate_histories(
    model: &MarkovModel,
    pattern: &PrivacyPattern,
    policy: Policy,
    horizon: usize,
    mut visit: impl FnMut(usize, &Branch, Option<&StepPlan>) -> Result<()>,
) -> Result<()> {
    check_horizon(pattern, horizon)?;
    let n = model.n();
    let root = Branch { prob: 1.0, belief: BeliefState::collapsed(model.pi0()), history: vec![on_step_query(n)] };
    visit(0, &root, None)?;
    let mut live = vec![root];
    let mut visited = 1usize;

    for t in 1..=horizon {
        let mut next = Vec::new();
        for b in &live {
            if pattern.flags()[t].is_on() {
                visit(t, b, None)?;
                let mut history = b.history.clone();
                history.push(on_step_query(n));
                next.push(Branch { prob: b.prob, belief: b.belief.on_step(model), history });
                continue;
            }
            let gap = t - pattern.tau_of(t)?;
            let prev = *b.history.last().expect("history starts with q_0");
            let plan = plan_step(policy, model, b.belief.conditional_law(model), gap, prev)?;
            visit(t, b, Some(&plan))?;
            if t == horizon {
                continue;
            }
            let pred = b.belief.predict(model);
            for q in plan.kernel.support() {
                let Some((belief, mass)) = condition(n, &pred, &plan.kernel, q) else { continue };
                let prob = b.prob * mass / b.belief.total();
                if prob < BRANCH_PRUNE {
                    continue;
                }
                let mut history = b.history.clone();
                history.push(q);
                next.push(Branch { prob, belief, history });
            }
        }
        visited += next.len();
        if visited > MAX_BRANCHES {
            return Err(capacity());
        }
        live = next;
    }
    Ok(())
}

/// Exact `E[|Q_t|]` for `t = 0..=horizon` under `policy`.
pub fn expected_download(
    model: &MarkovModel,
    pattern: &PrivacyPattern,
    policy: Policy,
    horizon: usize,
) -> Result<Vec<f64>> {
    let n = model.n() as f64;
    let mut sums = vec![0.0; horizon + 1];
    let mut mass = vec![0.0; horizon + 1];
    enumerate_histories(model, pattern, policy, horizon, |t, b, plan| {
        mass[t] += b.prob;
        sums[t] += b.prob * plan.map_or(n, |p| p.expected_set_cardinality(&b.belief.tau_marginal()));
        Ok(())
    })?;
    Ok(sums.iter().zip(&mass).map(|(s, m)| s / m).collect())
}

/// Leakage of `Q_t` about the protected requests at one step, averaged over
/// histories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLeakage {
    pub t: usize,
    pub on: bool,
    /// `I(X_τ; Q_t | q_[t-1])` in bits.
    pub last_on: f64,
    /// `I(X_B; Q_t | q_[t-1])` over every ON time `B` up to `t`, in bits.
    pub all_on: f64,
    /// Largest per-history `I(X_B; Q_t | q_[t-1] = h)`.
    pub worst_history: f64,
    pub histories: usize,
}

/// Joint weight of `(ON requests so far, previous request)` within one history.
type PathTable = HashMap<(Vec<u8>, u8), f64>;

/// Exact conditional leakage per step, computed from the request paths
/// themselves rather than from the belief filter. The OFF-step law is
/// rebuilt from the path weights and handed to the same planner the
/// simulator uses.
pub fn exact_leakage(
    model: &MarkovModel,
    pattern: &PrivacyPattern,
    policy: Policy,
    horizon: usize,
) -> Result<Vec<StepLeakage>> {
    check_horizon(pattern, horizon)?;
    let n = model.n();
    if n > u8::MAX as usize {
        return Err(Error::Capacity(format!("path enumeration supports up to 255 sources, got {n}")));
    }
    let mut root: PathTable = HashMap::new();
    for (x, &p) in model.pi0().iter().enumerate() {
        if p > 0.0 {
            root.insert((vec![x as u8], x as u8), p);
        }
    }
    let mut live: Vec<(Vec<QuerySet>, PathTable)> = vec![(vec![on_step_query(n)], root)];
    let mut out = vec![StepLeakage { t: 0, on: true, last_on: 0.0, all_on: 0.0, worst_history: 0.0, histories: 1 }];
    let mut visited = 1usize;

    for t in 1..=horizon {
        let on = pattern.flags()[t].is_on();
        let mut row = StepLeakage { t, on, last_on: 0.0, all_on: 0.0, worst_history: 0.0, histories: live.len() };
        let mut next = Vec::new();
        for (history, paths) in &live {
            let mass: f64 = paths.values().sum();
            if on {
                let mut grown: PathTable = HashMap::new();
                for ((ons, prev), w) in paths {
                    for (x, &p) in model.row(*prev as usize).iter().enumerate() {
                        if p > 0.0 {
                            let mut ons = ons.clone();
                            ons.push(x as u8);
                            *grown.entry((ons, x as u8)).or_default() += w * p;
                        }
                    }
                }
                let mut h = history.clone();
                h.push(on_step_query(n));
                next.push((h, grown));
                continue;
            }

            // (x_τ, x_t) joint, then the plan the scheme would use
            let mut joint = vec![0.0; n * n];
            for ((ons, prev), w) in paths {
                let u = *ons.last().expect("at least one ON request") as usize;
                for (x, &p) in model.row(*prev as usize).iter().enumerate() {
                    joint[u * n + x] += w * p;
                }
            }
            let gap = t - pattern.tau_of(t)?;
            let prev_q = *history.last().expect("history starts with q_0");
            let plan = plan_step(policy, model, law_from_joint(n, &joint), gap, prev_q)?;
            let support = plan.kernel.support();
            let col: HashMap<QuerySet, usize> = support.iter().enumerate().map(|(i, q)| (*q, i)).collect();

            let mut by_tau = vec![vec![0.0; support.len()]; n];
            let mut by_ons: HashMap<Vec<u8>, Vec<f64>> = HashMap::new();
            let mut children: Vec<PathTable> = vec![HashMap::new(); support.len()];
            for ((ons, prev), w) in paths {
                let u = *ons.last().expect("at least one ON request") as usize;
                for (x, &p) in model.row(*prev as usize).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for &(q, wq) in plan.kernel.cell(u, x) {
                        let v = w * p * wq;
                        let j = col[&q];
                        by_tau[u][j] += v;
                        by_ons.entry(ons.clone()).or_insert_with(|| vec![0.0; support.len()])[j] += v;
                        *children[j].entry((ons.clone(), x as u8)).or_default() += v;
                    }
                }
            }
            let weight = mass;
            let all_rows: Vec<Vec<f64>> = by_ons.into_values().collect();
            let mi_tau = mutual_information_bits(&by_tau);
            let mi_all = mutual_information_bits(&all_rows);
            row.last_on += weight * mi_tau;
            row.all_on += weight * mi_all;
            row.worst_history = row.worst_history.max(mi_all);

            for (j, child) in children.into_iter().enumerate() {
                if t == horizon || child.values().sum::<f64>() < BRANCH_PRUNE {
                    continue;
                }
                let mut h = history.clone();
                h.push(support[j]);
                next.push((h, child));
            }
        }
        let covered: f64 = live.iter().map(|(_, p)| p.values().sum::<f64>()).sum();
        if !on {
            row.last_on /= covered;
            row.all_on /= covered;
        }
        out.push(row);
        visited += next.len();
        if visited > MAX_BRANCHES {
            return Err(capacity());
        }
        live = next;
    }
    Ok(out)
}

//! Exact Bayes filter over the server's view.
//!
//! The state is the joint law of the last ON request `X_τ` and the previous
//! request `X_{t-1}` given every query seen so far. It is a sufficient
//! statistic for the conditional law the next query is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionalLaw, MarkovModel};
use crate::scheme::{Kernel, QuerySet};
use crate::EPS;

/// Posterior mass below which a context is treated as unreachable.
const NEGLIGIBLE: f64 = 1e-15;

/// `joint[u * n + v] = p(X_τ = u, X_{t-1} = v | q_[t-1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    n: usize,
    joint: Vec<f64>,
}

impl BeliefState {
    /// Belief right after an ON step whose request has law `marginal`.
    pub fn collapsed(marginal: &[f64]) -> Self {
        let n = marginal.len();
        let mut joint = vec![0.0; n * n];
        for (i, m) in marginal.iter().enumerate() {
            joint[i * n + i] = *m;
        }
        Self { n, joint }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, tau: usize, prev: usize) -> f64 {
        self.joint[tau * self.n + prev]
    }

    pub fn total(&self) -> f64 {
        self.joint.iter().sum()
    }

    /// Law of `X_τ` given the history.
    pub fn tau_marginal(&self) -> Vec<f64> {
        self.joint.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    /// Joint `p(X_τ = u, X_t = x | q_[t-1])` one step ahead.
    pub fn predict(&self, model: &MarkovModel) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for u in 0..n {
            for v in 0..n {
                let w = self.joint[u * n + v];
                if w == 0.0 {
                    continue;
                }
                for (x, p) in model.row(v).iter().enumerate() {
                    out[u * n + x] += w * p;
                }
            }
        }
        out
    }

    /// `p(x_t | x_τ, q_[t-1])` for the next step.
    pub fn conditional_law(&self, model: &MarkovModel) -> ConditionalLaw {
        law_from_joint(self.n, &self.predict(model))
    }

    /// Belief after an ON step at the next time: `τ` moves there and the
    /// query carries no information.
    pub fn on_step(&self, model: &MarkovModel) -> Self {
        let n = self.n;
        let pred = self.predict(model);
        let marginal: Vec<f64> = (0..n).map(|x| (0..n).map(|u| pred[u * n + x]).sum()).collect();
        Self::collapsed(&marginal)
    }
}

/// Normalises the rows of a joint `p(u, x)` into `p(x | u)`. Rows without
/// mass are filled with the mixture `p(x)`; such contexts never occur, and
/// the mixture lies between the column minima and maxima of the real rows.
pub(crate) fn law_from_joint(n: usize, joint: &[f64]) -> ConditionalLaw {
    let total: f64 = joint.iter().sum();
    let mixture: Vec<f64> = (0..n).map(|x| (0..n).map(|u| joint[u * n + x]).sum::<f64>() / total).collect();
    let mut table = Vec::with_capacity(n * n);
    for row in joint.chunks(n) {
        let mass: f64 = row.iter().sum();
        if mass > NEGLIGIBLE * total.max(1.0) {
            table.extend(row.iter().map(|v| v / mass));
        } else {
            table.extend_from_slice(&mixture);
        }
    }
    ConditionalLaw::from_table(n, table)
}

/// Bayes update after observing query `q` at an OFF step.
///
/// Returns the posterior and the predictive probability `p(q | q_[t-1])`.
pub fn belief_update(
    belief: &BeliefState,
    model: &MarkovModel,
    kernel: &Kernel,
    q: QuerySet,
) -> Result<(BeliefState, f64)> {
    let pred = belief.predict(model);
    condition(belief.n, &pred, kernel, q)
        .map(|(post, mass)| (post, mass / belief.total()))
        .ok_or_else(|| Error::Numerical(format!("query {q} has no posterior mass")))
}

/// Weighs a predicted joint by `w(q | u, x)`. `None` when nothing is left.
pub(crate) fn condition(n: usize, pred: &[f64], kernel: &Kernel, q: QuerySet) -> Option<(BeliefState, f64)> {
    let mut joint = pred.to_vec();
    for u in 0..n {
        for x in 0..n {
            joint[u * n + x] *= kernel.weight(u, x, q);
        }
    }
    let mass: f64 = joint.iter().sum();
    if !(mass > 1e-300 && mass.is_finite()) {
        return None;
    }
    joint.iter_mut().for_each(|v| *v /= mass);
    let posterior = BeliefState { n, joint };
    debug_assert!((posterior.total() - 1.0).abs() < EPS);
    Some((posterior, mass))
}

//! Closed-form optimal policy for two sources `A = 0`, `B = 1` with transition
//! matrix `[[1-α, α], [β, 1-β]]`.
//!
//! A singleton query is absorbing: once the previous query had cardinality
//! one, the current request is asked for directly. After a two-element query
//! the policy mixes `{x_t}` with `{A, B}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::QuerySet;
use crate::EPS;

/// Parity of `t - τ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(gap: usize) -> Self {
        if gap.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Law over the three admissible two-source queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct N2Query {
    pub a: f64,
    pub b: f64,
    pub ab: f64,
}

impl N2Query {
    fn only(x: usize) -> Self {
        if x == 0 {
            Self { a: 1.0, b: 0.0, ab: 0.0 }
        } else {
            Self { a: 0.0, b: 1.0, ab: 0.0 }
        }
    }

    /// `{x}` with probability `single`, both sources otherwise.
    fn mix(x: usize, single: f64) -> Self {
        let mut q = Self::only(x);
        if x == 0 {
            q.a = single;
        } else {
            q.b = single;
        }
        q.ab = 1.0 - single;
        q
    }

    const BOTH: Self = Self { a: 0.0, b: 0.0, ab: 1.0 };

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.ab]
    }

    /// Nonzero `(query, probability)` pairs.
    pub fn to_pairs(&self) -> Vec<(QuerySet, f64)> {
        [(QuerySet::singleton(0), self.a), (QuerySet::singleton(1), self.b), (QuerySet::full(2), self.ab)]
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }
}

/// `p(q_t | x_τ, x_t, |q_{t-1}|)` for the two-source chain.
pub fn policy_n2(
    alpha: f64,
    beta: f64,
    x_tau: usize,
    x_t: usize,
    prev_card: usize,
    parity: Parity,
) -> Result<N2Query> {
    if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidModel(format!("alpha={alpha}, beta={beta} must lie in [0, 1]")));
    }
    if x_tau > 1 || x_t > 1 {
        return Err(Error::Usage(format!("sources must be 0 or 1, got x_tau={x_tau}, x_t={x_t}")));
    }
    if !(1..=2).contains(&prev_card) {
        return Err(Error::Usage(format!("previous query cardinality must be 1 or 2, got {prev_card}")));
    }
    if prev_card == 1 {
        return Ok(N2Query::only(x_t));
    }
    let sum = alpha + beta;
    if sum <= EPS || sum >= 2.0 - EPS {
        // non-ergodic chain: nothing short of both messages hides x_τ
        return Ok(N2Query::BOTH);
    }
    if (sum - 1.0).abs() <= EPS {
        return Ok(N2Query::only(x_t));
    }

    // Whether the mixing rows are the ones with x_t = x_τ.
    let mix_on_equal = sum < 1.0 || parity == Parity::Even;
    let q = match (x_tau == x_t, mix_on_equal, x_t) {
        // the contexts where x_t is least likely query it alone
        (true, false, _) | (false, true, _) => N2Query::only(x_t),
        (true, true, 0) if sum < 1.0 => N2Query::mix(0, beta / (1.0 - alpha)),
        (true, true, _) if sum < 1.0 => N2Query::mix(1, alpha / (1.0 - beta)),
        // α + β > 1: mixing rows of the even / odd tables
        (true, true, 0) | (false, false, 0) => N2Query::mix(0, (1.0 - alpha) / beta),
        (true, true, _) | (false, false, _) => N2Query::mix(1, (1.0 - beta) / alpha),
    };
    Ok(q)
}

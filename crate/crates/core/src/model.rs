//! Request model: the Markov chain over sources, privacy patterns, two-argument
//! conditional laws and their order statistics.
//!
//! Sources are indexed `0..n` throughout the crate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::EPS;

/// Tolerance on row sums of stochastic matrices and distributions.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest supported number of sources (query sets are `u64` bitmasks).
pub const MAX_SOURCES: usize = 64;

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidModel(format!("{what}: entry {v} outside [0, 1]")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{what}: sums to {total}, expected 1")));
    }
    Ok(())
}

/// Row-major `n x n` product.
pub(crate) fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// A time-homogeneous Markov chain over `n` sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MarkovModel {
    n: usize,
    p: Vec<f64>,
    pi0: Vec<f64>,
}

/// On-disk shape of a model: `{"n": 3, "p": [[...], ...], "pi0": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    p: Vec<Vec<f64>>,
    pi0: Vec<f64>,
}

impl TryFrom<ModelFile> for MarkovModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.p.len() != file.n {
            return Err(Error::InvalidModel(format!(
                "n = {} but p has {} rows",
                file.n,
                file.p.len()
            )));
        }
        MarkovModel::new(file.p, file.pi0)
    }
}

impl From<MarkovModel> for ModelFile {
    fn from(m: MarkovModel) -> Self {
        ModelFile { n: m.n, p: m.p.chunks(m.n).map(<[f64]>::to_vec).collect(), pi0: m.pi0 }
    }
}

impl MarkovModel {
    pub fn new(p: Vec<Vec<f64>>, pi0: Vec<f64>) -> Result<Self> {
        let n = p.len();
        if n < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 sources, got {n}")));
        }
        if n > MAX_SOURCES {
            return Err(Error::InvalidModel(format!("at most {MAX_SOURCES} sources supported, got {n}")));
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!("row {i} has length {}, expected {n}", row.len())));
            }
            check_distribution(row, &format!("row {i} of p"))?;
        }
        if pi0.len() != n {
            return Err(Error::InvalidModel(format!("pi0 has length {}, expected {n}", pi0.len())));
        }
        check_distribution(&pi0, "pi0")?;
        Ok(Self { n, p: p.concat(), pi0 })
    }

    /// Chain with a uniform initial distribution.
    pub fn with_uniform_start(p: Vec<Vec<f64>>) -> Result<Self> {
        let n = p.len().max(1);
        Self::new(p, vec![1.0 / n as f64; n])
    }

    /// Two-state chain `[[1-α, α], [β, 1-β]]`, uniform start.
    pub fn two_state(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_uniform_start(vec![vec![1.0 - alpha, alpha], vec![beta, 1.0 - beta]])
    }

    /// Symmetric chain: stay with probability `alpha`, otherwise move uniformly.
    pub fn symmetric(n: usize, alpha: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 sources, got {n}")));
        }
        let off = (1.0 - alpha) / (n - 1) as f64;
        let p = (0..n)
            .map(|i| (0..n).map(|j| if i == j { alpha } else { off }).collect())
            .collect();
        Self::with_uniform_start(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Transition probability `P[from][to]`.
    pub fn p(&self, from: usize, to: usize) -> f64 {
        self.p[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from * self.n..(from + 1) * self.n]
    }

    pub fn pi0(&self) -> &[f64] {
        &self.pi0
    }

    /// The one-step transition matrix as a conditional law.
    pub fn transition(&self) -> ConditionalLaw {
        ConditionalLaw { n: self.n, table: self.p.clone() }
    }

    /// `k`-step law `P^k`, by repeated squaring. `k = 0` gives the identity.
    pub fn step_law(&self, k: usize) -> ConditionalLaw {
        let n = self.n;
        let mut result = ConditionalLaw::identity(n).table;
        let mut base = self.p.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = mat_mul(&result, &base, n);
            }
            e >>= 1;
            if e > 0 {
                base = mat_mul(&base, &base, n);
            }
        }
        ConditionalLaw { n, table: result }
    }

    /// Marginal distribution of `X_t`.
    pub fn marginal_at(&self, t: usize) -> Vec<f64> {
        let law = self.step_law(t);
        (0..self.n).map(|x| (0..self.n).map(|u| self.pi0[u] * law.get(u, x)).sum()).collect()
    }
}

/// Privacy status of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Privacy {
    On,
    Off,
}

impl Privacy {
    pub fn is_on(self) -> bool {
        self == Privacy::On
    }
}

/// Privacy flags `F_0..F_T`; `F_0` is always ON.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PrivacyPattern {
    flags: Vec<Privacy>,
}

impl PrivacyPattern {
    pub fn new(flags: Vec<Privacy>) -> Result<Self> {
        match flags.first() {
            None => Err(Error::InvalidPattern("pattern is empty".into())),
            Some(Privacy::Off) => Err(Error::InvalidPattern("F_0 must be ON".into())),
            Some(Privacy::On) => Ok(Self { flags }),
        }
    }

    /// ON at `t = 0`, OFF for the following `off_steps` steps.
    pub fn on_then_off(off_steps: usize) -> Self {
        let mut flags = vec![Privacy::Off; off_steps + 1];
        flags[0] = Privacy::On;
        Self { flags }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[Privacy] {
        &self.flags
    }

    pub fn get(&self, t: usize) -> Result<Privacy> {
        self.flags.get(t).copied().ok_or(Error::OutOfRange { index: t, len: self.flags.len() })
    }

    /// Last time at or before `t` when privacy was ON.
    pub fn tau_of(&self, t: usize) -> Result<usize> {
        if t >= self.flags.len() {
            return Err(Error::OutOfRange { index: t, len: self.flags.len() });
        }
        Ok((0..=t).rev().find(|&i| self.flags[i].is_on()).unwrap_or(0))
    }

    /// All ON times at or before `t`.
    pub fn on_times(&self, t: usize) -> Vec<usize> {
        (0..=t.min(self.flags.len().saturating_sub(1))).filter(|&i| self.flags[i].is_on()).collect()
    }
}

impl FromStr for PrivacyPattern {
    type Err = Error;

    /// Parses `'1'` (ON) / `'0'` (OFF) characters, index 0 first.
    fn from_str(s: &str) -> Result<Self> {
        let flags = s
            .trim()
            .chars()
            .map(|c| match c {
                '1' => Ok(Privacy::On),
                '0' => Ok(Privacy::Off),
                other => Err(Error::InvalidPattern(format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(flags)
    }
}

impl fmt::Display for PrivacyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for flag in &self.flags {
            f.write_str(if flag.is_on() { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// A two-argument law `p(X = x | U = u)` over `n` sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConditionalLaw {
    n: usize,
    table: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for ConditionalLaw {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ConditionalLaw> for Vec<Vec<f64>> {
    fn from(law: ConditionalLaw) -> Self {
        law.rows().map(<[f64]>::to_vec).collect()
    }
}

impl ConditionalLaw {
    /// Builds a law from rows indexed by `u`; each row must be a distribution.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > MAX_SOURCES {
            return Err(Error::InvalidModel(format!("law must have 1..={MAX_SOURCES} rows, got {n}")));
        }
        for (u, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!("row {u} has length {}, expected {n}", row.len())));
            }
            check_distribution(row, &format!("row {u} of law"))?;
        }
        Ok(Self { n, table: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut table = vec![0.0; n * n];
        for i in 0..n {
            table[i * n + i] = 1.0;
        }
        Self { n, table }
    }

    /// Every row equal to `p` (independent requests).
    pub fn independent(p: &[f64]) -> Result<Self> {
        Self::new(vec![p.to_vec(); p.len()])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `p(X = x | U = u)`.
    pub fn get(&self, u: usize, x: usize) -> f64 {
        self.table[u * self.n + x]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.table[u * self.n..(u + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.table.chunks(self.n)
    }

    /// Law of the composed step `self` then `next`.
    pub fn compose(&self, next: &ConditionalLaw) -> ConditionalLaw {
        ConditionalLaw { n: self.n, table: mat_mul(&self.table, &next.table, self.n) }
    }

    pub fn max_abs_diff(&self, other: &ConditionalLaw) -> f64 {
        self.table.iter().zip(&other.table).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Column maxima summed: `Σ_x max_u p(x|u)`.
    pub fn sum_of_column_max(&self) -> f64 {
        (0..self.n).map(|x| (0..self.n).map(|u| self.get(u, x)).fold(f64::MIN, f64::max)).sum()
    }

    /// Column minima summed: `Σ_x min_u p(x|u)`.
    pub fn sum_of_column_min(&self) -> f64 {
        (0..self.n).map(|x| (0..self.n).map(|u| self.get(u, x)).fold(f64::MAX, f64::min)).sum()
    }

    pub(crate) fn from_table(n: usize, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), n * n);
        Self { n, table }
    }
}

/// Per-column orderings of a [`ConditionalLaw`] and the quantities derived
/// from them.
///
/// Index conventions: `orderings[x][i]` is the context `u` holding the
/// `(i+1)`-th smallest value of column `x`; `lambdas[i]` and `thetas[i]` are
/// 0-based in the same way; `sigma` is a count in `1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub orderings: Vec<Vec<usize>>,
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub sigma: usize,
    pub deltas: Vec<f64>,
}

impl OrderStats {
    pub fn n(&self) -> usize {
        self.orderings.len()
    }

    /// `Σ_i i·θ_i`, the expected multiset cardinality of the built scheme.
    pub fn expected_cardinality(&self) -> f64 {
        self.thetas.iter().enumerate().map(|(i, t)| (i + 1) as f64 * t).sum()
    }
}

/// Snaps values within `EPS` of one to exactly one, then clips at one.
fn clip_one(v: f64) -> f64 {
    if (v - 1.0).abs() <= EPS {
        1.0
    } else {
        v.min(1.0)
    }
}

/// Orders each column of `law`, then derives `λ`, `θ`, `σ` and the greedy
/// budget vector `δ`.
pub fn order_stats(law: &ConditionalLaw) -> OrderStats {
    let n = law.n();
    let orderings: Vec<Vec<usize>> = (0..n)
        .map(|x| {
            let mut us: Vec<usize> = (0..n).collect();
            // stable: equal values keep lower u first
            us.sort_by(|&a, &b| law.get(a, x).total_cmp(&law.get(b, x)));
            us
        })
        .collect();
    let value = |x: usize, i: usize| law.get(orderings[x][i], x);

    let lambdas: Vec<f64> = (0..n).map(|i| (0..n).map(|x| value(x, i)).sum()).collect();

    let mut thetas = Vec::with_capacity(n);
    let mut prev = 0.0;
    for &l in &lambdas {
        let c = clip_one(l);
        thetas.push((c - prev).max(0.0));
        prev = c;
    }

    let sigma = lambdas.iter().rposition(|&l| l <= 1.0 + EPS).map_or(0, |i| i + 1);

    let deltas = if sigma >= n {
        (0..n).map(|x| value(x, n - 1)).collect()
    } else if sigma == 0 {
        // only reachable for malformed input; fall back to column minima
        (0..n).map(|x| value(x, 0)).collect()
    } else {
        let a: Vec<f64> = (0..n).map(|x| value(x, sigma - 1)).collect();
        let b: Vec<f64> = (0..n).map(|x| value(x, sigma)).collect();
        greedy_budget(&a, &b)
    };

    OrderStats { orderings, lambdas, thetas, sigma, deltas }
}

/// Picks `δ` with `a ≤ δ ≤ b` and `Σδ = 1`, raising entries to their upper
/// bound in index order until the slack is used up.
fn greedy_budget(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let sum_a: f64 = a.iter().sum();
    let mut deltas = a.to_vec();
    let mut spent = 0.0;
    for j in 0..n {
        spent += b[j] - a[j];
        if spent <= 1.0 - sum_a {
            deltas[j] = b[j];
        } else {
            let below: f64 = b[..j].iter().sum();
            let above: f64 = a[j + 1..].iter().sum();
            deltas[j] = 1.0 - below - above;
            break;
        }
    }
    deltas
}

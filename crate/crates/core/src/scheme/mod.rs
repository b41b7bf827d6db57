//! Query types and per-step query distributions.
//!
//! A scheme for one time step is a joint law `p(z, x | u)` where `u` is the
//! last private request, `x` the current request and `z` the query. The
//! builder works with multiset queries; what goes over the wire is always the
//! set projection.

mod builder;
mod n2;

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use builder::build_query_distribution;
pub use n2::{policy_n2, N2Query, Parity};

use crate::error::{Error, Result};
use crate::model::{ConditionalLaw, MAX_SOURCES};

/// A set of sources, stored as a bitmask (bit `i` = source `i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuerySet(u64);

impl QuerySet {
    pub fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(x: usize) -> Self {
        Self(1 << x)
    }

    /// All `n` sources.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            Self(u64::MAX)
        } else {
            Self((1u64 << n) - 1)
        }
    }

    pub fn from_members(members: impl IntoIterator<Item = usize>) -> Self {
        Self(members.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    pub fn contains(self, x: usize) -> bool {
        x < 64 && self.0 >> x & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in increasing order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.0 >> i & 1 == 1)
    }

    /// Position of `x` among the members, i.e. where its message sits in the
    /// concatenated answer.
    pub fn rank_of(self, x: usize) -> Option<usize> {
        self.contains(x).then(|| (self.0 & ((1u64 << x) - 1)).count_ones() as usize)
    }
}

impl fmt::Display for QuerySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, m) in self.members().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("}")
    }
}

/// The query for a step where privacy is ON: every source.
pub fn on_step_query(n: usize) -> QuerySet {
    QuerySet::full(n)
}

/// A multiset over `0..n`, stored as multiplicities.
///
/// Ordered by cardinality first, then lexicographically on the counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Multiset {
    counts: Vec<u8>,
}

impl Multiset {
    pub fn empty(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn from_counts(counts: Vec<u8>) -> Self {
        Self { counts }
    }

    pub fn from_elements(n: usize, elements: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(n);
        for e in elements {
            m.counts[e] += 1;
        }
        m
    }

    pub fn from_set(n: usize, set: QuerySet) -> Self {
        Self::from_elements(n, set.members())
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    pub fn multiplicity(&self, x: usize) -> u8 {
        self.counts.get(x).copied().unwrap_or(0)
    }

    pub fn contains(&self, x: usize) -> bool {
        self.multiplicity(x) > 0
    }

    /// Sum of multiplicities.
    pub fn cardinality(&self) -> usize {
        let mut total = 0;
        for &c in &self.counts {
            total += c as usize;
        }
        total
    }

    /// Support of the multiset.
    pub fn to_set(&self) -> QuerySet {
        let mut bits = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > 0 {
                bits |= 1 << i;
            }
        }
        QuerySet(bits)
    }

    pub fn is_set(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }
}

impl Ord for Multiset {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cardinality().cmp(&other.cardinality()).then_with(|| self.counts.cmp(&other.counts))
    }
}

impl PartialOrd for Multiset {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One nonzero cell `p(z, x | u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub z: Multiset,
    pub x: usize,
    pub u: usize,
    pub p: f64,
}

/// Sparse joint law `p(z, x | u)` for one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDistribution {
    pub n: usize,
    pub entries: Vec<Entry>,
}

impl QueryDistribution {
    /// Merges duplicate `(z, x, u)` cells, drops nonpositive ones and sorts
    /// entries by `(|z|, z, x, u)`.
    pub fn from_cells(n: usize, cells: impl IntoIterator<Item = (Multiset, usize, usize, f64)>) -> Self {
        // cardinality computed once per cell rather than per comparison
        let mut cells: Vec<(usize, Entry)> =
            cells.into_iter().map(|(z, x, u, p)| (z.cardinality(), Entry { z, x, u, p })).collect();
        cells.sort_by(|(ca, a), (cb, b)| (ca, &a.z.counts, a.x, a.u).cmp(&(cb, &b.z.counts, b.x, b.u)));
        let mut entries: Vec<Entry> = Vec::with_capacity(cells.len());
        for (_, cell) in cells {
            match entries.last_mut() {
                Some(last) if last.z == cell.z && last.x == cell.x && last.u == cell.u => last.p += cell.p,
                _ => entries.push(cell),
            }
        }
        entries.retain(|e| e.p > 0.0);
        Self { n, entries }
    }

    /// `p(y, x | u) = p(x | u) w(y | u, x)`.
    pub fn from_kernel(law: &ConditionalLaw, kernel: &Kernel) -> Self {
        let n = law.n();
        let mut cells = Vec::new();
        for u in 0..n {
            for x in 0..n {
                for &(q, w) in kernel.cell(u, x) {
                    cells.push((Multiset::from_set(n, q), x, u, law.get(u, x) * w));
                }
            }
        }
        Self::from_cells(n, cells)
    }

    pub fn validate_shape(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_SOURCES {
            return Err(Error::InvalidModel(format!("distribution over {} sources", self.n)));
        }
        for e in &self.entries {
            if e.z.counts.len() != self.n || e.x >= self.n || e.u >= self.n {
                return Err(Error::InvalidModel(format!(
                    "entry (z={:?}, x={}, u={}) does not fit n={}",
                    e.z.counts, e.x, e.u, self.n
                )));
            }
            if !(e.p.is_finite() && e.p >= 0.0) {
                return Err(Error::InvalidModel(format!("entry probability {} is not a probability", e.p)));
            }
        }
        Ok(())
    }

    /// `E[|Z|]` averaged uniformly over `u` (equal for every `u` when the
    /// distribution is private).
    pub fn expected_cardinality(&self) -> f64 {
        let total: f64 = self.entries.iter().map(|e| e.z.cardinality() as f64 * e.p).sum();
        total / self.n as f64
    }

    /// `E[|Set(Z)|]` averaged uniformly over `u`.
    pub fn expected_set_cardinality(&self) -> f64 {
        let total: f64 = self.entries.iter().map(|e| e.z.to_set().len() as f64 * e.p).sum();
        total / self.n as f64
    }

    /// `P(|Z| = i)` for `i = 1..=n` (index `i - 1`), averaged uniformly over `u`.
    pub fn cardinality_law(&self) -> Vec<f64> {
        let mut law = vec![0.0; self.n];
        for e in &self.entries {
            let c = e.z.cardinality();
            if (1..=self.n).contains(&c) {
                law[c - 1] += e.p;
            }
        }
        law.iter_mut().for_each(|v| *v /= self.n as f64);
        law
    }

    /// Merges multisets with equal support.
    pub fn project_to_sets(&self) -> QueryDistribution {
        let n = self.n;
        QueryDistribution::from_cells(
            n,
            self.entries.iter().map(|e| (Multiset::from_set(n, e.z.to_set()), e.x, e.u, e.p)),
        )
    }

    pub fn is_set_valued(&self) -> bool {
        self.entries.iter().all(|e| e.z.is_set())
    }

    /// Number of distinct set-valued queries in the support.
    pub fn set_support(&self) -> Vec<QuerySet> {
        let mut sets: Vec<QuerySet> = self.entries.iter().map(|e| e.z.to_set()).collect();
        sets.sort_unstable();
        sets.dedup();
        sets
    }

    /// Per-`(u, x)` conditional query law `w(y | u, x)` of the set projection.
    pub fn kernel(&self) -> Kernel {
        let n = self.n;
        let mut mass = vec![0.0; n * n];
        let mut cells: Vec<BTreeMap<QuerySet, f64>> = vec![BTreeMap::new(); n * n];
        for e in &self.entries {
            mass[e.u * n + e.x] += e.p;
            *cells[e.u * n + e.x].entry(e.z.to_set()).or_insert(0.0) += e.p;
        }
        let cells = cells
            .into_iter()
            .zip(mass)
            .map(|(m, total)| m.into_iter().map(|(y, p)| (y, p / total)).collect())
            .collect();
        Kernel { n, cells }
    }
}

/// Conditional query law `w(y | u, x)` for every context `u` and request `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    cells: Vec<Vec<(QuerySet, f64)>>,
}

impl Kernel {
    /// Builds a kernel from a per-`(u, x)` rule.
    pub fn from_fn(n: usize, mut rule: impl FnMut(usize, usize) -> Vec<(QuerySet, f64)>) -> Self {
        let cells = (0..n * n)
            .map(|idx| rule(idx / n, idx % n).into_iter().filter(|(_, w)| *w > 0.0).collect())
            .collect();
        Self { n, cells }
    }

    /// Query `{x}` whatever the context: leaks the current request directly.
    pub fn naive(n: usize) -> Self {
        Self::from_fn(n, |_, x| vec![(QuerySet::singleton(x), 1.0)])
    }

    pub fn full_download(n: usize) -> Self {
        Self::from_fn(n, |_, _| vec![(QuerySet::full(n), 1.0)])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self, u: usize, x: usize) -> &[(QuerySet, f64)] {
        &self.cells[u * self.n + x]
    }

    /// `w(y | u, x)`, zero when `y` is outside the cell's support.
    pub fn weight(&self, u: usize, x: usize, y: QuerySet) -> f64 {
        self.cell(u, x).iter().find(|(q, _)| *q == y).map_or(0.0, |(_, w)| *w)
    }

    /// All queries with positive weight somewhere, sorted.
    pub fn support(&self) -> Vec<QuerySet> {
        let mut all: Vec<QuerySet> = self.cells.iter().flatten().map(|(q, _)| *q).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn sample<R: Rng + ?Sized>(&self, u: usize, x: usize, rng: &mut R) -> Result<QuerySet> {
        let cell = self.cell(u, x);
        let total: f64 = cell.iter().map(|(_, w)| w).sum();
        if cell.is_empty() || total <= 0.0 {
            return Err(Error::Numerical(format!("no query mass for context u={u}, request x={x}")));
        }
        let mut draw = rng.gen::<f64>() * total;
        for &(q, w) in cell {
            if draw < w {
                return Ok(q);
            }
            draw -= w;
        }
        Ok(cell[cell.len() - 1].0)
    }
}

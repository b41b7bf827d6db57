//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use onoff_privacy::{ConditionalLaw, MarkovModel, PrivacyPattern};
use rand::Rng;

/// Row-stochastic matrix with uniform random entries; with `sparse`, about
/// a quarter of the entries are zeroed first.
pub fn random_rows<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let row: Vec<f64> =
                (0..n).map(|_| if sparse && rng.gen_bool(0.25) { 0.0 } else { rng.gen::<f64>() }).collect();
            let total: f64 = row.iter().sum();
            if total > 1e-3 {
                break row.iter().map(|v| v / total).collect();
            }
        })
        .collect()
}

pub fn random_law<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> ConditionalLaw {
    ConditionalLaw::new(random_rows(rng, n, sparse)).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R, n: usize) -> MarkovModel {
    let pi0 = random_rows(rng, n, false).remove(0);
    MarkovModel::new(random_rows(rng, n, false), pi0).unwrap()
}

/// `1` followed by random flags, `len` in total.
pub fn random_pattern<R: Rng>(rng: &mut R, len: usize) -> PrivacyPattern {
    let s: String = (0..len).map(|t| if t == 0 || rng.gen_bool(0.3) { '1' } else { '0' }).collect();
    s.parse().unwrap()
}

/// `θ_i` straight from the definition: sort each column, add up the `i`-th
/// smallest entries, clip at one and take increments.
pub fn oracle_thetas(law: &ConditionalLaw) -> Vec<f64> {
    let n = law.n();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|x| (0..n).map(|u| law.get(u, x)).collect()).collect();
    for c in &mut cols {
        c.sort_by(f64::total_cmp);
    }
    let mut out = Vec::with_capacity(n);
    let mut prev = 0.0f64;
    for i in 0..n {
        let lambda: f64 = cols.iter().map(|c| c[i]).sum();
        let clipped = if lambda > 1.0 - 1e-12 { 1.0 } else { lambda };
        out.push((clipped - prev).max(0.0));
        prev = clipped;
    }
    out
}

/// `Σ_x max_u p(x | u)`.
pub fn oracle_column_max_sum(law: &ConditionalLaw) -> f64 {
    let n = law.n();
    (0..n).map(|x| (0..n).map(|u| law.get(u, x)).fold(0.0, f64::max)).sum()
}

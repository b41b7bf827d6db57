//! Exact checks on a per-step query law: privacy, decodability, marginal
//! consistency, the cardinality law, and the converse bound on `E[|Y|]`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionalLaw, OrderStats};
use crate::scheme::{Multiset, QueryDistribution, QuerySet};
use crate::EPS;

/// Where the worst privacy gap was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyOffender {
    pub z: Multiset,
    pub u_low: usize,
    pub u_high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `max_z max_{u,u'} |p(z|u) - p(z|u')|`.
    pub privacy_gap: f64,
    /// `I(U; Set(Z))` in bits under the audit prior on `u`.
    pub mutual_information: f64,
    pub decodability_violations: usize,
    /// `max_{x,u} |Σ_z p(z,x|u) - p(x|u)|`.
    pub marginal_gap: f64,
    /// `max_{u,i} |P(|Z| = i | u) - θ_i|`.
    pub cardinality_gap: f64,
    pub expected_cardinality: f64,
    pub expected_set_cardinality: f64,
    pub worst_privacy: Option<PrivacyOffender>,
    /// `(x, u)` of the worst marginal mismatch.
    pub worst_marginal: Option<(usize, usize)>,
    pub passed: bool,
}

impl AuditReport {
    pub fn summary(&self) -> String {
        format!(
            "privacy_gap={:.3e} mi={:.3e} bits decodability_violations={} marginal_gap={:.3e} cardinality_gap={:.3e}",
            self.privacy_gap,
            self.mutual_information,
            self.decodability_violations,
            self.marginal_gap,
            self.cardinality_gap
        )
    }
}

/// Audits `dist` against the law it was built for, with a uniform prior on `u`.
pub fn audit_distribution(dist: &QueryDistribution, law: &ConditionalLaw, stats: &OrderStats) -> AuditReport {
    let n = dist.n;
    audit_with_prior(dist, law, stats, &vec![1.0 / n as f64; n])
}

/// Audits `dist`, using `prior` over `u` for the mutual information.
pub fn audit_with_prior(
    dist: &QueryDistribution,
    law: &ConditionalLaw,
    stats: &OrderStats,
    prior: &[f64],
) -> AuditReport {
    let n = dist.n;

    let decodability_violations = dist.entries.iter().filter(|e| !e.z.contains(e.x)).count();

    let mut marginal = vec![0.0; n * n];
    let mut by_query: HashMap<&Multiset, Vec<f64>> = HashMap::new();
    for e in &dist.entries {
        marginal[e.u * n + e.x] += e.p;
        by_query.entry(&e.z).or_insert_with(|| vec![0.0; n])[e.u] += e.p;
    }

    // sorted so that sums, and therefore reports, are reproducible
    let mut groups: Vec<(&Multiset, Vec<f64>)> = by_query.into_iter().collect();
    groups.sort_unstable_by(|a, b| a.0.cmp(b.0));

    // everything else only depends on p(z | u), one pass per distinct query
    let mut card = vec![0.0; n * n];
    let mut sets: Vec<(QuerySet, &[f64])> = Vec::with_capacity(groups.len());
    let mut expected_cardinality = 0.0;
    let mut expected_set_cardinality = 0.0;
    for (z, per_u) in &groups {
        let c = z.cardinality();
        let set = z.to_set();
        let mass: f64 = per_u.iter().sum::<f64>() / n as f64;
        expected_cardinality += c as f64 * mass;
        expected_set_cardinality += set.len() as f64 * mass;
        if (1..=n).contains(&c) {
            for (u, p) in per_u.iter().enumerate() {
                card[u * n + c - 1] += p;
            }
        }
        sets.push((set, per_u.as_slice()));
    }

    let mut marginal_gap = 0.0;
    let mut worst_marginal = None;
    for u in 0..n {
        for x in 0..n {
            let gap = (marginal[u * n + x] - law.get(u, x)).abs();
            if gap > marginal_gap {
                marginal_gap = gap;
                worst_marginal = Some((x, u));
            }
        }
    }

    let mut privacy_gap = 0.0;
    let mut worst_privacy = None;
    for (z, per_u) in &groups {
        let (lo, hi) = argmin_argmax(per_u);
        let gap = per_u[hi] - per_u[lo];
        if gap > privacy_gap {
            privacy_gap = gap;
            worst_privacy = Some(PrivacyOffender { z: (*z).clone(), u_low: lo, u_high: hi });
        }
    }

    let mut cardinality_gap: f64 = 0.0;
    for u in 0..n {
        for i in 0..n {
            let theta = stats.thetas.get(i).copied().unwrap_or(0.0);
            cardinality_gap = cardinality_gap.max((card[u * n + i] - theta).abs());
        }
    }

    let mutual_information = mutual_information_bits(&set_joint(n, &sets, prior));

    let passed = decodability_violations == 0
        && privacy_gap <= EPS
        && marginal_gap <= EPS
        && cardinality_gap <= EPS;

    AuditReport {
        privacy_gap,
        mutual_information,
        decodability_violations,
        marginal_gap,
        cardinality_gap,
        expected_cardinality,
        expected_set_cardinality,
        worst_privacy,
        worst_marginal,
        passed,
    }
}

fn argmin_argmax(values: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Joint `p(u, y)` of the context and the set-valued query, rows indexed by
/// `u`, columns by set in increasing order. `groups` holds `p(z | u)` per
/// multiset query.
fn set_joint(n: usize, groups: &[(QuerySet, &[f64])], prior: &[f64]) -> Vec<Vec<f64>> {
    let mut support: Vec<QuerySet> = groups.iter().map(|(y, _)| *y).collect();
    support.sort_unstable();
    support.dedup();
    let column: HashMap<QuerySet, usize> = support.iter().enumerate().map(|(i, q)| (*q, i)).collect();
    let mut joint = vec![vec![0.0; support.len()]; n];
    for (y, per_u) in groups {
        let j = column[y];
        for (u, p) in per_u.iter().enumerate() {
            joint[u][j] += prior[u] * p;
        }
    }
    joint
}

fn entropy_bits(p: impl IntoIterator<Item = f64>) -> f64 {
    -p.into_iter().filter(|&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}

/// `I(A; B)` in bits as `KL(p(a,b) || p(a)p(b))`. Rows index `A`, columns `B`;
/// the table need not be normalised.
pub fn mutual_information_bits(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let cols = joint.first().map_or(0, Vec::len);
    let row_m: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let col_m: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / total).collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let p = v / total;
            if p > 0.0 {
                mi += p * (p / (row_m[i] * col_m[j])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// `I(A; B) = H(A) + H(B) - H(A, B)` in bits.
pub fn mutual_information_entropy_bits(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let cols = joint.first().map_or(0, Vec::len);
    let h_a = entropy_bits(joint.iter().map(|r| r.iter().sum::<f64>() / total));
    let h_b = entropy_bits((0..cols).map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / total));
    let h_ab = entropy_bits(joint.iter().flatten().map(|v| v / total));
    (h_a + h_b - h_ab).max(0.0)
}

/// Any private, decodable query law for `law` has `E[|Y|]` at least
/// `Σ_x max_u p(x|u)`.
pub fn lemma1_lower_bound(law: &ConditionalLaw) -> f64 {
    law.sum_of_column_max()
}

/// Mutual informations behind [`proposition1_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnSetLeakage {
    /// `I(X_τ; Y)` in bits.
    pub last_on: f64,
    /// `I((X_earlier, X_τ); Y)` in bits.
    pub all_on: f64,
}

/// Leakage of the query about the last ON request and about all ON requests.
///
/// `chain_joint[b][u]` is `p(X_earlier = b, X_τ = u)`, where `b` indexes the
/// tuple of earlier ON requests. The current request depends on the past only
/// through `X_τ`, as the chain is Markov.
pub fn on_set_leakage(dist: &QueryDistribution, chain_joint: &[Vec<f64>]) -> Result<OnSetLeakage> {
    let n = dist.n;
    if chain_joint.iter().any(|row| row.len() != n) {
        return Err(Error::Usage(format!("chain joint must have {n} columns (one per X_τ value)")));
    }
    let support = dist.set_support();
    let column: BTreeMap<QuerySet, usize> = support.iter().enumerate().map(|(i, q)| (*q, i)).collect();
    let mut query_given_u = vec![vec![0.0; support.len()]; n];
    for e in &dist.entries {
        query_given_u[e.u][column[&e.z.to_set()]] += e.p;
    }

    let mut all_on = Vec::with_capacity(chain_joint.len() * n);
    let mut last_on = vec![vec![0.0; support.len()]; n];
    for row in chain_joint {
        for (u, &w) in row.iter().enumerate() {
            let cells: Vec<f64> = query_given_u[u].iter().map(|q| w * q).collect();
            for (acc, c) in last_on[u].iter_mut().zip(&cells) {
                *acc += c;
            }
            all_on.push(cells);
        }
    }
    Ok(OnSetLeakage { last_on: mutual_information_bits(&last_on), all_on: mutual_information_bits(&all_on) })
}

/// True when the query is independent of both the last ON request and the
/// whole set of ON requests (mutual informations within `EPS`).
pub fn proposition1_check(dist: &QueryDistribution, chain_joint: &[Vec<f64>]) -> Result<bool> {
    let leak = on_set_leakage(dist, chain_joint)?;
    Ok(leak.last_on <= EPS && leak.all_on <= EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{order_stats, MarkovModel};
    use crate::scheme::{build_query_distribution, Kernel};

    fn eq20() -> ConditionalLaw {
        ConditionalLaw::new(vec![vec![0.1, 0.3, 0.6], vec![0.5, 0.4, 0.1], vec![0.2, 0.5, 0.3]]).unwrap()
    }

    fn binary_entropy(p: f64) -> f64 {
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    #[test]
    fn builder_output_passes() {
        let law = eq20();
        let stats = order_stats(&law);
        let d = build_query_distribution(&law, &stats).unwrap();
        let r = audit_distribution(&d, &law, &stats);
        assert!(r.passed, "{}", r.summary());
        assert!(r.privacy_gap < 1e-12 && r.marginal_gap < 1e-12 && r.cardinality_gap < 1e-12);
        assert!(r.mutual_information < 1e-12);
    }

    #[test]
    fn two_source_table_is_private() {
        let law = MarkovModel::two_state(0.2, 0.2).unwrap().transition();
        let kernel = Kernel::from_fn(2, |u, x| {
            crate::scheme::policy_n2(0.2, 0.2, u, x, 2, crate::scheme::Parity::Odd).unwrap().to_pairs()
        });
        let d = QueryDistribution::from_kernel(&law, &kernel);
        let r = audit_distribution(&d, &law, &order_stats(&law));
        assert!(r.passed, "{}", r.summary());
        // P(Q = {A} | X_0 = A) = 0.8 * 0.25 = P(Q = {A} | X_0 = B) = 0.2 * 1
        let single_a = Multiset::from_elements(2, [0]);
        let pa = |u: usize| d.entries.iter().filter(|e| e.z == single_a && e.u == u).map(|e| e.p).sum::<f64>();
        assert!((pa(0) - 0.2).abs() < 1e-15 && (pa(1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn naive_scheme_leaks() {
        let law = MarkovModel::two_state(0.2, 0.2).unwrap().transition();
        let d = QueryDistribution::from_kernel(&law, &Kernel::naive(2));
        let r = audit_distribution(&d, &law, &order_stats(&law));
        assert!(!r.passed);
        assert!((r.mutual_information - (1.0 - binary_entropy(0.2))).abs() < 1e-12);
        assert_eq!(r.decodability_violations, 0);
        assert!(r.worst_privacy.is_some());
    }

    #[test]
    fn audit_flags_decodability_and_marginals() {
        let law = ConditionalLaw::independent(&[0.5, 0.5]).unwrap();
        let stats = order_stats(&law);
        let wrong = Multiset::from_elements(2, [1]);
        let right = Multiset::from_elements(2, [1]);
        let d = QueryDistribution::from_cells(
            2,
            [(wrong.clone(), 0, 0, 0.5), (wrong, 0, 1, 0.5), (right.clone(), 1, 0, 0.4), (right, 1, 1, 0.4)],
        );
        let r = audit_distribution(&d, &law, &stats);
        assert_eq!(r.decodability_violations, 2);
        assert!((r.marginal_gap - 0.1).abs() < 1e-12);
        assert!(!r.passed);
    }

    #[test]
    fn mutual_information_two_routes_agree() {
        let joints = [
            vec![vec![0.1, 0.2, 0.05], vec![0.3, 0.05, 0.3]],
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
        ];
        for j in &joints {
            let a = mutual_information_bits(j);
            let b = mutual_information_entropy_bits(j);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!((mutual_information_bits(&joints[2]) - 1.0).abs() < 1e-15);
        assert_eq!(mutual_information_bits(&joints[1]), 0.0);
    }

    #[test]
    fn lemma1_examples() {
        assert!((lemma1_lower_bound(&eq20()) - 1.6).abs() < 1e-12);
        assert_eq!(lemma1_lower_bound(&ConditionalLaw::identity(5)), 5.0);
        assert!((lemma1_lower_bound(&ConditionalLaw::independent(&[0.2, 0.3, 0.5]).unwrap()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn proposition1_on_builder_and_leaky_schemes() {
        let model = MarkovModel::two_state(0.2, 0.3).unwrap();
        let law = model.step_law(1);
        let stats = order_stats(&law);
        // earlier ON request X_0, last ON request X_2 = X_τ: p(x_0, x_2)
        let two = model.step_law(2);
        let chain: Vec<Vec<f64>> =
            (0..2).map(|b| (0..2).map(|u| model.pi0()[b] * two.get(b, u)).collect()).collect();
        let built = build_query_distribution(&law, &stats).unwrap();
        assert!(proposition1_check(&built, &chain).unwrap());
        let leaky = QueryDistribution::from_kernel(&law, &Kernel::naive(2));
        let leak = on_set_leakage(&leaky, &chain).unwrap();
        assert!(leak.last_on > 0.01 && leak.all_on >= leak.last_on - 1e-12);
        assert!(!proposition1_check(&leaky, &chain).unwrap());
        // B_t = {τ} only: a single-row joint
        let alone = vec![vec![0.5, 0.5]];
        assert!(proposition1_check(&built, &alone).unwrap());
    }
}

//! Seeded user/server simulation with real bit payloads.
//!
//! Each OFF step builds its query law lazily from the belief over
//! `(X_τ, X_{t-1})`, samples a query for the true requests and Bayes-updates
//! the belief with the same kernel the server would reason with. Plans are
//! cached per query history, so repeated episodes only pay for new branches.

mod belief;
mod exact;
mod server;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use belief::{belief_update, BeliefState};
pub use exact::{enumerate_histories, exact_leakage, expected_download, Branch, StepLeakage, BRANCH_PRUNE, MAX_BRANCHES};
pub use server::{decode, ServerState};

use crate::error::{Error, Result};
use crate::model::{order_stats, ConditionalLaw, MarkovModel, OrderStats, Privacy, PrivacyPattern};
use crate::scheme::{build_query_distribution, on_step_query, policy_n2, Kernel, Parity, QueryDistribution, QuerySet};

/// Message length used when none is given.
pub const DEFAULT_MSG_BITS: usize = 64;

/// How OFF-step queries are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Order-statistics construction from the current conditional law.
    Algorithm1,
    /// Closed-form optimum for two sources.
    N2ClosedForm,
    /// Ask for the wanted source only. Not private.
    Naive,
    /// Ask for everything.
    FullDownload,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Algorithm1, Policy::N2ClosedForm, Policy::Naive, Policy::FullDownload];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Algorithm1 => "algorithm1",
            Policy::N2ClosedForm => "n2_closed_form",
            Policy::Naive => "naive",
            Policy::FullDownload => "full_download",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown policy {s:?}; expected one of algorithm1, n2_closed_form, naive, full_download")))
    }
}

/// Everything needed to run one OFF step.
#[derive(Debug, Clone)]
pub struct StepPlan {
    /// `p(x_t | x_τ, q_[t-1])`.
    pub law: ConditionalLaw,
    pub stats: OrderStats,
    /// Joint query law; multiset-valued for [`Policy::Algorithm1`].
    pub dist: QueryDistribution,
    /// Wire-level kernel `w(y | x_τ, x_t)`.
    pub kernel: Kernel,
}

impl StepPlan {
    /// `E[|Y|]` when `X_τ` has law `tau`.
    pub fn expected_set_cardinality(&self, tau: &[f64]) -> f64 {
        let n = self.law.n();
        let mut total = 0.0;
        for (u, &pu) in tau.iter().enumerate() {
            for x in 0..n {
                let w: f64 = self.kernel.cell(u, x).iter().map(|(q, w)| q.len() as f64 * w).sum();
                total += pu * self.law.get(u, x) * w;
            }
        }
        total
    }
}

/// Builds the OFF-step plan for `law`, `gap = t - τ` steps after the last ON
/// step, given the previous query.
pub fn plan_step(
    policy: Policy,
    model: &MarkovModel,
    law: ConditionalLaw,
    gap: usize,
    prev: QuerySet,
) -> Result<StepPlan> {
    let n = law.n();
    let stats = order_stats(&law);
    let (dist, kernel) = match policy {
        Policy::Algorithm1 => {
            let dist = build_query_distribution(&law, &stats)?;
            let kernel = dist.kernel();
            (dist, kernel)
        }
        Policy::N2ClosedForm => {
            if n != 2 {
                return Err(Error::Usage(format!("n2_closed_form needs two sources, model has {n}")));
            }
            let (alpha, beta) = (model.p(0, 1), model.p(1, 0));
            let mut failure = None;
            let kernel = Kernel::from_fn(2, |u, x| match policy_n2(alpha, beta, u, x, prev.len(), Parity::of(gap)) {
                Ok(q) => q.to_pairs(),
                Err(e) => {
                    failure.get_or_insert(e);
                    Vec::new()
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            (QueryDistribution::from_kernel(&law, &kernel), kernel)
        }
        Policy::Naive => {
            let kernel = Kernel::naive(n);
            (QueryDistribution::from_kernel(&law, &kernel), kernel)
        }
        Policy::FullDownload => {
            let kernel = Kernel::full_download(n);
            (QueryDistribution::from_kernel(&law, &kernel), kernel)
        }
    };
    Ok(StepPlan { law, stats, dist, kernel })
}

/// One step of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub privacy: Privacy,
    /// The true request.
    pub x: usize,
    pub q: QuerySet,
    pub len_bits: usize,
    pub decode_ok: bool,
}

/// Belief after a query history and the plan for the step that follows it.
struct Node {
    belief: BeliefState,
    next: Option<StepPlan>,
}

/// Runs episodes of one scenario, sharing per-history plans across them.
pub struct Simulator {
    model: MarkovModel,
    pattern: PrivacyPattern,
    policy: Policy,
    msg_bits: usize,
    nodes: HashMap<Vec<QuerySet>, Rc<Node>>,
}

impl Simulator {
    pub fn new(model: MarkovModel, pattern: PrivacyPattern, msg_bits: usize, policy: Policy) -> Result<Self> {
        if policy == Policy::N2ClosedForm && model.n() != 2 {
            return Err(Error::Usage(format!("n2_closed_form needs two sources, model has {}", model.n())));
        }
        if msg_bits == 0 {
            return Err(Error::Usage("message length must be at least one bit".into()));
        }
        Ok(Self { model, pattern, policy, msg_bits, nodes: HashMap::new() })
    }

    pub fn model(&self) -> &MarkovModel {
        &self.model
    }

    pub fn pattern(&self) -> &PrivacyPattern {
        &self.pattern
    }

    /// Distinct query histories seen so far.
    pub fn cached_histories(&self) -> usize {
        self.nodes.len()
    }

    /// Node for `history = q_0..q_t`, where `q_t` was just observed.
    fn node(&mut self, history: &[QuerySet], parent: Option<&Node>) -> Result<Rc<Node>> {
        if let Some(node) = self.nodes.get(history) {
            return Ok(Rc::clone(node));
        }
        let t = history.len() - 1;
        let belief = match parent {
            None => BeliefState::collapsed(self.model.pi0()),
            Some(p) if self.pattern.flags()[t].is_on() => p.belief.on_step(&self.model),
            Some(p) => {
                let plan = p.next.as_ref().ok_or_else(|| Error::Internal("OFF step without a plan".into()))?;
                belief_update(&p.belief, &self.model, &plan.kernel, history[t])?.0
            }
        };
        let next = match self.pattern.flags().get(t + 1) {
            Some(Privacy::Off) => {
                let gap = t + 1 - self.pattern.tau_of(t + 1)?;
                Some(plan_step(self.policy, &self.model, belief.conditional_law(&self.model), gap, history[t])?)
            }
            _ => None,
        };
        let node = Rc::new(Node { belief, next });
        self.nodes.insert(history.to_vec(), Rc::clone(&node));
        Ok(node)
    }

    /// Plays one episode over the whole pattern. Requests and messages come
    /// from independent ChaCha streams of the same seed.
    pub fn run_episode(&mut self, seed: u64, episode: u64) -> Result<Vec<TraceRecord>> {
        let mut req_rng = ChaCha8Rng::seed_from_u64(seed);
        req_rng.set_stream(2 * episode);
        let mut msg_rng = ChaCha8Rng::seed_from_u64(seed);
        msg_rng.set_stream(2 * episode + 1);

        let n = self.model.n();
        let mut server = ServerState::new(n, self.msg_bits);
        let mut out = Vec::with_capacity(self.pattern.len());
        let mut history = Vec::with_capacity(self.pattern.len());
        let mut node: Option<Rc<Node>> = None;
        let mut x = draw(self.model.pi0(), &mut req_rng);
        let mut x_tau = x;

        for t in 0..self.pattern.len() {
            if t > 0 {
                x = draw(self.model.row(x), &mut req_rng);
            }
            let privacy = self.pattern.flags()[t];
            let q = if privacy.is_on() {
                x_tau = x;
                on_step_query(n)
            } else {
                let plan = node.as_ref().and_then(|nd| nd.next.as_ref());
                let plan = plan.ok_or_else(|| Error::Internal(format!("no plan for OFF step {t}")))?;
                plan.kernel.sample(x_tau, x, &mut req_rng)?
            };

            server.refresh(&mut msg_rng);
            let answer = server.answer(q);
            let decode_ok = decode(&answer, q, x, self.msg_bits).is_some_and(|w| w == server.message(x));
            out.push(TraceRecord { t, privacy, x, q, len_bits: answer.len(), decode_ok });

            history.push(q);
            node = Some(self.node(&history, node.as_deref())?);
        }
        Ok(out)
    }

    /// `episodes` independent episodes seeded from `seed`.
    pub fn run(&mut self, episodes: usize, seed: u64) -> Result<Vec<Vec<TraceRecord>>> {
        (0..episodes as u64).map(|e| self.run_episode(seed, e)).collect()
    }
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut r = rng.gen::<f64>();
    for (i, &w) in p.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Single episode with a fresh simulator.
pub fn run_episode(
    model: &MarkovModel,
    pattern: &PrivacyPattern,
    msg_bits: usize,
    seed: u64,
    policy: Policy,
) -> Result<Vec<TraceRecord>> {
    Simulator::new(model.clone(), pattern.clone(), msg_bits, policy)?.run_episode(seed, 0)
}

/// Per-step statistics across episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub on: bool,
    pub episodes: usize,
    /// Empirical `E[|Q_t|]`.
    pub mean_cardinality: f64,
    /// Sample variance of `|Q_t|`.
    pub variance: f64,
    /// `histogram[i - 1]` counts queries with `|Q_t| = i`.
    pub histogram: Vec<usize>,
    pub decode_failures: usize,
}

impl StepSummary {
    /// Standard error of the mean cardinality.
    pub fn std_error(&self) -> f64 {
        (self.variance / self.episodes as f64).sqrt()
    }

    pub fn fraction_with_cardinality(&self, i: usize) -> f64 {
        self.histogram.get(i.wrapping_sub(1)).map_or(0.0, |&c| c as f64 / self.episodes as f64)
    }
}

pub fn summarize(n: usize, traces: &[Vec<TraceRecord>]) -> Vec<StepSummary> {
    let steps = traces.iter().map(Vec::len).max().unwrap_or(0);
    (0..steps)
        .map(|t| {
            let recs: Vec<&TraceRecord> = traces.iter().filter_map(|tr| tr.get(t)).collect();
            let m = recs.len();
            let mut histogram = vec![0; n];
            for r in &recs {
                histogram[r.q.len() - 1] += 1;
            }
            let mean = recs.iter().map(|r| r.q.len() as f64).sum::<f64>() / m as f64;
            let variance = if m > 1 {
                recs.iter().map(|r| (r.q.len() as f64 - mean).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            StepSummary {
                t,
                on: recs.first().is_some_and(|r| r.privacy.is_on()),
                episodes: m,
                mean_cardinality: mean,
                variance,
                histogram,
                decode_failures: recs.iter().filter(|r| !r.decode_ok).count(),
            }
        })
        .collect()
}

/// Writes traces as CSV with header `t,F,x,q,len_bits,decode_ok`; `q` is
/// the bitmask. Episodes follow one another, each restarting at `t = 0`.
pub fn write_trace_csv<W: Write>(out: &mut W, traces: &[Vec<TraceRecord>]) -> Result<()> {
    writeln!(out, "t,F,x,q,len_bits,decode_ok")?;
    for r in traces.iter().flatten() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            u8::from(r.privacy.is_on()),
            r.x,
            r.q.bits(),
            r.len_bits,
            r.decode_ok
        )?;
    }
    Ok(())
}

/// Expected count every contingency cell needs before the chi-square
/// approximation is trusted.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// Pooled chi-square test of `X_τ ⟂ Q_t` within each query-history stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareAudit {
    pub t: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub strata: usize,
    pub samples: usize,
    /// Smallest expected cell count over strata that contribute degrees of freedom.
    pub min_expected: f64,
    /// Whether every contributing cell reaches [`MIN_EXPECTED_COUNT`].
    pub reliable: bool,
}

pub fn empirical_privacy_audit(traces: &[Vec<TraceRecord>], t: usize) -> Result<ChiSquareAudit> {
    // q_[t-1] -> (x_τ, q_t) -> count
    let mut samples = 0;
    let mut keyed: HashMap<Vec<QuerySet>, HashMap<(usize, QuerySet), usize>> = HashMap::new();
    for trace in traces {
        if trace.len() <= t {
            continue;
        }
        let tau = trace[..=t]
            .iter()
            .rposition(|r| r.privacy.is_on())
            .ok_or_else(|| Error::InvalidPattern("trace does not start with an ON step".into()))?;
        let key: Vec<QuerySet> = trace[..t].iter().map(|r| r.q).collect();
        *keyed.entry(key).or_default().entry((trace[tau].x, trace[t].q)).or_default() += 1;
        samples += 1;
    }
    if samples == 0 {
        return Err(Error::Usage(format!("no trace reaches step {t}")));
    }

    let mut statistic = 0.0;
    let mut dof = 0;
    let mut min_expected = f64::INFINITY;
    for table in keyed.values() {
        let mut rows: HashMap<usize, usize> = HashMap::new();
        let mut cols: HashMap<QuerySet, usize> = HashMap::new();
        let mut total = 0;
        for (&(u, q), &c) in table {
            *rows.entry(u).or_default() += c;
            *cols.entry(q).or_default() += c;
            total += c;
        }
        let d = (rows.len() - 1) * (cols.len() - 1);
        if d == 0 {
            continue;
        }
        dof += d;
        for (&u, &ru) in &rows {
            for (&q, &cq) in &cols {
                let expected = ru as f64 * cq as f64 / total as f64;
                let observed = table.get(&(u, q)).copied().unwrap_or(0) as f64;
                statistic += (observed - expected).powi(2) / expected;
                min_expected = min_expected.min(expected);
            }
        }
    }

    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        dist.sf(statistic)
    };
    let reliable = min_expected.is_infinite() || min_expected >= MIN_EXPECTED_COUNT;
    Ok(ChiSquareAudit {
        t,
        statistic,
        dof,
        p_value,
        strata: keyed.len(),
        samples,
        min_expected: if min_expected.is_finite() { min_expected } else { 0.0 },
        reliable,
    })
}

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use onoff_privacy::bounds::{bounds_over_horizon, n2_rate_curves, symmetric_rate_curves, write_bounds_csv};
use onoff_privacy::lp::{build_lp, solve, Status};
use onoff_privacy::scheme::build_query_distribution;
use onoff_privacy::sim::{empirical_privacy_audit, expected_download, summarize, write_trace_csv, ChiSquareAudit, Simulator};
use onoff_privacy::verify::{audit_distribution, AuditReport};
use onoff_privacy::{order_stats, ConditionalLaw, OrderStats, QueryDistribution};
use serde::{Deserialize, Serialize};

use crate::config::{load_model, pattern_for, Scenario, SimulateFlags};
use crate::{BoundsArgs, BuildArgs, CheckFailed, ConfigError, Format, LpArgs, SimulateArgs, SweepArgs, SweepGrid, VerifyArgs};

fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn bounds(a: BoundsArgs) -> anyhow::Result<()> {
    let model = load_model(&a.model)?;
    let (pattern, horizon) = pattern_for(a.pattern.as_deref(), a.horizon, a.seed)?;
    let rows = bounds_over_horizon(&model, &pattern, horizon, a.lp)?;
    match a.output.format {
        Format::Csv => {
            let mut out = sink(a.output.out.as_deref())?;
            write_bounds_csv(&mut out, &rows)?;
            out.flush()?;
        }
        Format::Json => write_json(a.output.out.as_deref(), &rows)?,
    }
    Ok(())
}

/// What `build` writes and `verify` reads back.
#[derive(Serialize, Deserialize)]
pub struct BuildArtifact {
    pub gap: usize,
    pub law: ConditionalLaw,
    pub stats: OrderStats,
    pub expected_cardinality: f64,
    pub expected_set_cardinality: f64,
    pub distribution: QueryDistribution,
    pub audit: AuditReport,
}

pub fn build(a: BuildArgs) -> anyhow::Result<()> {
    if a.gap == 0 {
        return Err(ConfigError("gap must be at least 1; ON steps download everything".into()).into());
    }
    let model = load_model(&a.model)?;
    let law = model.step_law(a.gap);
    let stats = order_stats(&law);
    let dist = build_query_distribution(&law, &stats)?;
    let audit = audit_distribution(&dist, &law, &stats);
    eprintln!("{}", audit.summary());
    let artifact = BuildArtifact {
        gap: a.gap,
        expected_cardinality: dist.expected_cardinality(),
        expected_set_cardinality: dist.expected_set_cardinality(),
        law,
        stats,
        distribution: dist,
        audit,
    };
    write_json(a.out.as_deref(), &artifact)
}

pub fn verify(a: VerifyArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let artifact: BuildArtifact =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", a.input.display())))?;
    artifact.distribution.validate_shape()?;
    if artifact.distribution.n != artifact.law.n() {
        return Err(ConfigError("distribution and law disagree on the number of sources".into()).into());
    }
    let stats = order_stats(&artifact.law);
    let report = audit_distribution(&artifact.distribution, &artifact.law, &stats);
    write_json(None, &report)?;
    if report.passed {
        println!("PASS {}", report.summary());
        Ok(())
    } else {
        let mut msg = format!("FAIL {}", report.summary());
        if let Some(w) = &report.worst_privacy {
            msg += &format!("; worst privacy at z={:?} between u={} and u={}", w.z.counts(), w.u_low, w.u_high);
        }
        if let Some((x, u)) = report.worst_marginal {
            msg += &format!("; worst marginal at x={x}, u={u}");
        }
        Err(CheckFailed(msg).into())
    }
}

pub fn lp(a: LpArgs) -> anyhow::Result<()> {
    if a.gap == 0 {
        return Err(ConfigError("gap must be at least 1".into()).into());
    }
    let model = load_model(&a.model)?;
    let problem = build_lp(&model.step_law(a.gap), a.cap, None)?;
    if a.dump {
        print!("{}", problem.dump());
        return Ok(());
    }
    let sol = solve(&problem)?;
    if sol.status != Status::Optimal {
        return Err(CheckFailed(format!("LP ended {:?}", sol.status)).into());
    }
    println!("{}", sol.optimum);
    if let Some(want) = a.expect {
        if (sol.optimum - want).abs() > 1e-6 {
            return Err(CheckFailed(format!("optimum {} differs from expected {want}", sol.optimum)).into());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StepReport {
    t: usize,
    on: bool,
    mean_cardinality: f64,
    std_error: f64,
    /// Exact `E[|Q_t|]` when the history tree is small enough to enumerate.
    analytic: Option<f64>,
    histogram: Vec<usize>,
    decode_failures: usize,
    privacy: Option<ChiSquareAudit>,
}

#[derive(Serialize)]
struct SimulationReport {
    policy: String,
    pattern: String,
    episodes: usize,
    seed: u64,
    msg_bits: usize,
    decode_failures: usize,
    steps: Vec<StepReport>,
}

pub fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let s = Scenario::resolve(SimulateFlags {
        config: a.config.as_deref(),
        model: a.model.as_deref(),
        pattern: a.pattern.as_deref(),
        horizon: a.horizon,
        msg_bits: a.msg_bits,
        episodes: a.episodes,
        seed: a.seed,
        policy: a.policy.as_deref(),
    })?;
    let n = s.model.n();
    let mut sim = Simulator::new(s.model.clone(), s.pattern.clone(), s.msg_bits, s.policy)?;
    let traces = sim.run(s.episodes, s.seed)?;

    if let Some(path) = a.out.as_deref() {
        let mut out = sink(Some(path))?;
        write_trace_csv(&mut out, &traces)?;
        out.flush()?;
    }

    let horizon = s.pattern.len() - 1;
    let analytic = expected_download(&s.model, &s.pattern, s.policy, horizon).ok();
    let mut steps = Vec::new();
    for step in summarize(n, &traces) {
        let privacy = if step.on { None } else { Some(empirical_privacy_audit(&traces, step.t)?) };
        steps.push(StepReport {
            t: step.t,
            on: step.on,
            mean_cardinality: step.mean_cardinality,
            std_error: step.std_error(),
            analytic: analytic.as_ref().map(|v| v[step.t]),
            histogram: step.histogram,
            decode_failures: step.decode_failures,
            privacy,
        });
    }
    let failures = steps.iter().map(|s| s.decode_failures).sum();
    let report = SimulationReport {
        policy: s.policy.to_string(),
        pattern: s.pattern.to_string(),
        episodes: s.episodes,
        seed: s.seed,
        msg_bits: s.msg_bits,
        decode_failures: failures,
        steps,
    };
    write_json(a.summary.as_deref(), &report)?;
    if failures > 0 {
        return Err(CheckFailed(format!("{failures} steps failed to decode")).into());
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    match a.grid {
        SweepGrid::N2 { sums, max_gap, out } => {
            let mut w = sink(out.as_deref())?;
            writeln!(w, "sum,gap,rate")?;
            for p in n2_rate_curves(&sums, max_gap)? {
                writeln!(w, "{},{},{}", p.sum, p.gap, p.rate)?;
            }
            w.flush()?;
        }
        SweepGrid::Symmetric { n, points, out } => {
            let mut w = sink(out.as_deref())?;
            writeln!(w, "alpha,inner_rate,outer_rate")?;
            for p in symmetric_rate_curves(n, points)? {
                writeln!(w, "{},{},{}", p.alpha, p.inner_rate, p.outer_rate)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

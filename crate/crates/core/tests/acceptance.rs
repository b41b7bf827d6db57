//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use onoff_privacy::bounds::{exact_rate_n2, inner_bound_first_off_step, lp_c1_closed_form, outer_bound_2, symmetric_rate_curves};
use onoff_privacy::lp::optimal_expected_cardinality;
use onoff_privacy::scheme::{build_query_distribution, policy_n2, Parity};
use onoff_privacy::sim::{exact_leakage, summarize, Policy, Simulator};
use onoff_privacy::verify::audit_distribution;
use onoff_privacy::{order_stats, ConditionalLaw, MarkovModel, PrivacyPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_thetas, random_law, random_model, random_pattern};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn eq20() -> ConditionalLaw {
    ConditionalLaw::new(vec![vec![0.1, 0.3, 0.6], vec![0.5, 0.4, 0.1], vec![0.2, 0.5, 0.3]]).unwrap()
}

fn table_one() -> Outcome {
    let start = Instant::now();
    let rows: Vec<[f64; 3]> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .into_iter()
        .map(|(u, x)| policy_n2(0.2, 0.2, u, x, 2, Parity::Odd).unwrap().as_array())
        .collect();
    let elapsed = start.elapsed();
    let want = [[0.25, 0.0, 0.75], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.25, 0.75]];
    for (got, want) in rows.iter().zip(want) {
        check(got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-12), || format!("row {got:?} != {want:?}"))?;
    }
    // E|Q_1| under a uniform X_0: Σ_u ½ Σ_x p(x|u) E[|q| | u, x]
    let p = [[0.8, 0.2], [0.2, 0.8]];
    let mut expected = 0.0;
    for (k, (u, x)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let [a, b, ab] = rows[k];
        expected += 0.5 * p[u][x] * (a + b + 2.0 * ab);
    }
    let rate = 1.0 / expected;
    check((rate - 0.625).abs() <= 1e-12, || format!("R_1 = {rate}"))?;
    within(elapsed, Duration::from_millis(1))?;
    Ok(format!("R_1 = {rate}, {elapsed:?}"))
}

fn worked_example() -> Outcome {
    let start = Instant::now();
    let law = eq20();
    let stats = order_stats(&law);
    let dist = build_query_distribution(&law, &stats).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for (got, want) in stats.lambdas.iter().zip([0.5, 0.9, 1.6]) {
        check((got - want).abs() <= 1e-12, || format!("lambda {got} != {want}"))?;
    }
    for (got, want) in stats.thetas.iter().zip([0.5, 0.4, 0.1]) {
        check((got - want).abs() <= 1e-12, || format!("theta {got} != {want}"))?;
    }
    let e = dist.expected_cardinality();
    check((e - 1.6).abs() <= 1e-9, || format!("E|Z| = {e}"))?;
    let audit = audit_distribution(&dist, &law, &stats);
    check(audit.passed, || format!("audit failed: {}", audit.summary()))?;
    within(elapsed, Duration::from_millis(10))?;
    Ok(format!("E|Z| = {e}, {elapsed:?}"))
}

/// Rate series of the two-source figure, keyed by α + β, gaps 0..=20.
const N2_SERIES: [(f64, [f64; 21]); 4] = [
    (1.0, [0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
    (
        0.7,
        [
            0.5, 0.769230769230769, 0.91743119266055, 0.973709834469328, 0.991965082829084, 0.997575890585876,
            0.999271531053862, 0.999781347819232, 0.99993439430439, 0.999980317387413, 0.999994095134868,
            0.999998228533138, 0.999999468559282, 0.999999840567725, 0.999999952170312, 0.999999985651093,
            0.999999995695328, 0.999999998708598, 0.999999999612579, 0.999999999883774, 0.999999999965132,
        ],
    ),
    (
        0.4,
        [
            0.5, 0.625, 0.735294117647059, 0.822368421052631, 0.885269121813031, 0.927850356294537,
            0.955423749541397, 0.972768702061958, 0.98348129088135, 0.990022850677816, 0.993989724239196,
            0.996385144031034, 0.997827945753317, 0.998695634190672, 0.999216971972409, 0.999530035985447,
            0.99971796857342, 0.999830762051884, 0.999898450356709, 0.999939067738966, 0.9999634397523,
        ],
    ),
    (
        0.2,
        [
            0.5, 0.555555555555556, 0.609756097560976, 0.661375661375661, 0.709421112372304, 0.753193540612196,
            0.792302621570914, 0.82664084901967, 0.856331426842715, 0.881664935499932, 0.903037126829805,
            0.920895664738407, 0.9356992379835, 0.947889238046222, 0.957872329434476, 0.966011492215792,
            0.972623093734289, 0.977977895569679, 0.982304377486352, 0.985793222434495, 0.988602192725058,
        ],
    ),
];

fn two_source_curves() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (sum, series) in N2_SERIES {
        for (gap, want) in series.iter().enumerate() {
            // split the sum unevenly: only α + β matters
            let got = exact_rate_n2(0.3 * sum, 0.7 * sum, gap).rate();
            worst = worst.max((got - want).abs());
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-9, || format!("largest deviation {worst:e}"))?;
    within(elapsed, Duration::from_millis(10))?;
    Ok(format!("84 points, max dev {worst:.1e}, {elapsed:?}"))
}

fn symmetric_curves() -> Outcome {
    let points = symmetric_rate_curves(3, 100).map_err(|e| e.to_string())?;
    check(points.len() == 100, || "grid size".into())?;
    let mut worst = 0.0f64;
    for p in &points {
        let a = p.alpha;
        let (inner, outer) =
            if a < 1.0 / 3.0 { (1.0 / (2.0 - 3.0 * a), 2.0 / (3.0 - 3.0 * a)) } else { (1.0 / (3.0 * a), 1.0 / (3.0 * a)) };
        worst = worst.max((p.inner_rate - inner).abs()).max((p.outer_rate - outer).abs());
    }
    check(worst <= 1e-9, || format!("largest deviation {worst:e}"))?;
    Ok(format!("100 points, max dev {worst:.1e}"))
}

fn lp_tightness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        let law = MarkovModel::two_state(a, b).unwrap().transition();
        let opt = optimal_expected_cardinality(&law, None).map_err(|e| e.to_string())?;
        worst = worst.max((opt - (1.0 + (1.0 - a - b).abs())).abs());
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-6, || format!("largest gap {worst:e}"))?;
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("200 chains, max gap {worst:.1e}, {elapsed:?}"))
}

fn sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..100 {
        let n = if k % 2 == 0 { 3 } else { 4 };
        let law = random_law(&mut rng, n, k % 5 == 0);
        let outer = outer_bound_2(&law).inverse_rate;
        let opt = optimal_expected_cardinality(&law, None).map_err(|e| e.to_string())?;
        let inner = inner_bound_first_off_step(&law).inverse_rate;
        let c1 = lp_c1_closed_form(&order_stats(&law)).inverse_rate;
        check(outer <= opt + 1e-6 && opt <= inner + 1e-6 && inner <= c1 + 1e-6, || {
            format!("instance {k}: {outer} <= {opt} <= {inner} <= {c1} fails")
        })?;
    }
    Ok("100 laws".into())
}

fn exact_privacy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 2..=4 {
        for horizon in 1..=4 {
            for _ in 0..3 {
                let model = random_model(&mut rng, n);
                let pattern = random_pattern(&mut rng, horizon + 1);
                let rows = exact_leakage(&model, &pattern, Policy::Algorithm1, horizon).map_err(|e| e.to_string())?;
                for r in rows {
                    worst = worst.max(r.last_on).max(r.all_on);
                }
                count += 1;
            }
        }
    }
    check(worst <= 1e-9, || format!("builder leaks {worst:e} bits"))?;
    let two = MarkovModel::two_state(0.2, 0.2).unwrap();
    let leaky = exact_leakage(&two, &"10".parse().unwrap(), Policy::Naive, 1).map_err(|e| e.to_string())?;
    check(leaky[1].last_on >= 0.1, || format!("naive leaks only {} bits", leaky[1].last_on))?;
    Ok(format!("{count} scenarios, max {worst:.1e} bits; naive {:.3} bits", leaky[1].last_on))
}

fn cardinality_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for k in 0..500 {
        let n = 2 + k % 5;
        let law = random_law(&mut rng, n, k % 3 == 0);
        let dist = build_query_distribution(&law, &order_stats(&law)).map_err(|e| e.to_string())?;
        let thetas = oracle_thetas(&law);
        let mut per_u = vec![vec![0.0; n]; n];
        for e in &dist.entries {
            per_u[e.u][e.z.cardinality() - 1] += e.p;
        }
        for row in &per_u {
            for (got, want) in row.iter().zip(&thetas) {
                worst = worst.max((got - want).abs());
            }
        }
    }
    check(worst <= 1e-9, || format!("largest deviation {worst:e}"))?;
    Ok(format!("500 laws, max dev {worst:.1e}"))
}

fn simulation() -> Outcome {
    let start = Instant::now();
    let two = MarkovModel::two_state(0.2, 0.2).unwrap();
    let m = 100_000;

    let mut sim = Simulator::new(two.clone(), "10".parse().unwrap(), 64, Policy::Algorithm1).map_err(|e| e.to_string())?;
    let traces = sim.run(m, 2024).map_err(|e| e.to_string())?;
    let first = &summarize(2, &traces)[1];
    let mean = first.mean_cardinality;
    check((mean - 1.6).abs() <= 0.016, || format!("E|Q_1| = {mean}"))?;
    let failures: usize = traces.iter().flatten().filter(|r| !r.decode_ok).count();
    check(failures == 0, || format!("{failures} decode failures"))?;

    let pattern: PrivacyPattern = "100000".parse().unwrap();
    let mut sim = Simulator::new(two, pattern, 64, Policy::Algorithm1).map_err(|e| e.to_string())?;
    let traces = sim.run(m, 2025).map_err(|e| e.to_string())?;
    let failures: usize = traces.iter().flatten().filter(|r| !r.decode_ok).count();
    check(failures == 0, || format!("{failures} decode failures"))?;
    let mut worst_z = 0.0f64;
    for s in summarize(2, &traces).iter().skip(1) {
        let want = 0.6f64.powi(s.t as i32);
        let sd = (want * (1.0 - want) / m as f64).sqrt();
        let z = (s.fraction_with_cardinality(2) - want).abs() / sd;
        worst_z = worst_z.max(z);
        check(z <= 3.0, || format!("t={}: P(|Q|=2) = {} vs {want}", s.t, s.fraction_with_cardinality(2)))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("E|Q_1| = {mean:.4}, worst z = {worst_z:.2}, {elapsed:?}"))
}

fn scalability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let law = random_law(&mut rng, 50, false);
    let start = Instant::now();
    let stats = order_stats(&law);
    let dist = build_query_distribution(&law, &stats).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let audit = audit_distribution(&dist, &law, &stats);
    check(audit.passed, || format!("audit failed: {}", audit.summary()))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("{} cells, {elapsed:?}", dist.entries.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("two-source policy table", table_one),
        ("three-source worked example", worked_example),
        ("two-source rate curves", two_source_curves),
        ("symmetric three-source curves", symmetric_curves),
        ("LP tightness for two sources", lp_tightness),
        ("bound sandwich", sandwich),
        ("exact privacy audit", exact_privacy),
        ("cardinality law", cardinality_law),
        ("simulation consistency", simulation),
        ("scalability at N = 50", scalability),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

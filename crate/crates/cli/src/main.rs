//! `onoff`: bounds, scheme construction, verification, LP and simulation for
//! ON-OFF private retrieval under Markov requests.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "onoff", version, about = "ON-OFF private retrieval under Markov requests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-step rate bounds averaged over the scheme's query histories.
    Bounds(BoundsArgs),
    /// Build the query distribution for the law `P^gap` and write it as JSON.
    Build(BuildArgs),
    /// Audit a distribution written by `build`.
    Verify(VerifyArgs),
    /// Solve the query-design LP for the law `P^gap`.
    Lp(LpArgs),
    /// Simulate episodes with real message payloads.
    Simulate(SimulateArgs),
    /// Emit rate curves as CSV.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
struct Output {
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Privacy flags, e.g. `1000`, or `bernoulli:P`.
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Also solve the LP for every history.
    #[arg(long)]
    lp: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    model: PathBuf,
    /// Steps since the last ON step.
    #[arg(long, default_value_t = 1)]
    gap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON written by `build`.
    input: PathBuf,
}

#[derive(Args)]
struct LpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1)]
    gap: usize,
    /// Restrict queries to `|q| ≤ cap` or the full set.
    #[arg(long)]
    cap: Option<usize>,
    /// Fail unless the optimum is within 1e-6 of this value.
    #[arg(long)]
    expect: Option<f64>,
    /// Print the LP itself instead of solving it.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Episode config JSON: {model, pattern, L, episodes, seed, policy}.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    msg_bits: Option<usize>,
    /// algorithm1, n2_closed_form, naive or full_download.
    #[arg(long)]
    policy: Option<String>,
    /// Trace CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON destination (stdout by default).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(subcommand)]
    grid: SweepGrid,
}

#[derive(Subcommand)]
enum SweepGrid {
    /// Two-source rate against `t - τ` for several values of `α + β`.
    N2 {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.7,1.0")]
        sums: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        max_gap: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-OFF-step inner and outer rates for the symmetric chain.
    Symmetric {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad input: exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A check the user asked for did not hold: exit code 1.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use onoff_privacy::Error as E;
    if err.is::<CheckFailed>() {
        return 1;
    }
    if err.is::<ConfigError>() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(E::Capacity(_)) => 3,
        Some(E::Numerical(_) | E::Internal(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(a) => commands::bounds(a),
        Command::Build(a) => commands::build(a),
        Command::Verify(a) => commands::verify(a),
        Command::Lp(a) => commands::lp(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

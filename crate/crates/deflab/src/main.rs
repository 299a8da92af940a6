//! Command-line front end: one experiment per invocation.
//!
//! Exit codes: 0 when the experiment's verdict passes (or an oracle value
//! was printed), 1 for usage and configuration errors, 2 when the
//! experiment ran but its verdict failed.  Reports are written (or printed)
//! in both outcomes 0 and 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deflab::harness::arbitrage::{run_arbitrage, ArbitrageConfig};
use deflab::harness::counterexample::{run_counterexample, CounterexampleConfig};
use deflab::harness::max_closure::{run_max_closure, MaxClosureConfig};
use deflab::harness::replication::{bond_replication_value, hedge_ratio};
use deflab::harness::report::ExperimentReport;
use deflab::harness::simulate::run_market_battery;
use deflab::harness::RunConfig;
use deflab::market::Scheme;
use deflab::{oracles, Error, Result};

#[derive(Parser)]
#[command(
    name = "deflab",
    version,
    about = "Deflator-closure and barrier-market arbitrage laboratory",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify that every tested deflator ends strictly below expectation one
    VerifyCounterexample(VerifyArgs),
    /// Measure the local-time drift of a pairwise maximum of two deflators
    MaxClosure(MaxClosureArgs),
    /// Run the hedged strategy that banks the replication-cost gap
    Arbitrage(ArbitrageArgs),
    /// Evaluate one closed-form or quadrature reference quantity
    Oracle(OracleArgs),
    /// Run the market-simulator sanity battery
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// Exact Bessel transitions from an auxiliary substream
    Exact,
    /// Euler steps driven by the path's own increments
    Euler,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Exact => Scheme::Exact,
            SchemeArg::Euler => Scheme::Euler,
        }
    }
}

fn parse_switch(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected `on` or `off`, got {other:?}")),
    }
}

/// Flags shared by every experiment subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Barrier level the driving Brownian motion must reach
    #[arg(long = "a", value_name = "FLOAT")]
    barrier: f64,
    /// Horizon (terminal time)
    #[arg(long = "T", value_name = "FLOAT")]
    horizon: f64,
    /// Monte Carlo path count
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    /// Grid steps over the horizon
    #[arg(long, default_value_t = 4_096)]
    steps: usize,
    /// Master seed of the counter-based generator
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Confidence level for intervals and verdicts
    #[arg(long, default_value_t = 0.99)]
    level: f64,
    /// Post-crossing price scheme
    #[arg(long, value_enum, default_value_t = SchemeArg::Exact)]
    scheme: SchemeArg,
    /// Brownian-bridge correction for intra-step crossings
    #[arg(long, value_name = "on|off", value_parser = parse_switch,
          action = clap::ArgAction::Set, default_value = "on")]
    bridge: bool,
    /// Antithetic mirror pairing (needs an even path count)
    #[arg(long, value_name = "on|off", value_parser = parse_switch,
          action = clap::ArgAction::Set, default_value = "off")]
    antithetic: bool,
    /// Write the JSON report here plus a CSV side file; default prints JSON
    /// to stdout
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            barrier: self.barrier,
            horizon: self.horizon,
            paths: self.paths,
            steps: self.steps,
            seed: self.seed,
            level: self.level,
            scheme: self.scheme.into(),
            bridge: self.bridge,
            antithetic: self.antithetic,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Kernel strengths to certify, comma separated, strictly increasing
    #[arg(long = "n", value_name = "LIST", value_delimiter = ',',
          default_values_t = vec![0.0, 1.0, 2.0, 4.0, 8.0])]
    strengths: Vec<f64>,
}

#[derive(Args)]
struct MaxClosureArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Kernel tag of the first deflator: `zero` or `nu_n:<float>`
    #[arg(long, value_name = "TAG")]
    nu1: String,
    /// Kernel tag of the second deflator
    #[arg(long, value_name = "TAG")]
    nu2: String,
    /// Grid time where the gap identity is evaluated (default: the horizon)
    #[arg(long, value_name = "FLOAT")]
    checkpoint: Option<f64>,
}

#[derive(Args)]
struct ArbitrageArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Terminal-wealth level that counts as visibly positive
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleQuantity {
    /// Terminal deflator expectation at kernel strength `--n` (quadrature)
    ExpectedZ,
    /// Barrier-passage survival probability at `--t`
    Survival,
    /// Barrier-passage density at `--t`
    Density,
    /// Bessel inverse moment E[1/R(u)] from `--x0` after `--u`
    InverseMoment,
    /// Standard normal distribution function at `--x`
    NormalCdf,
    /// Unpinned inverse-price moment at `--t` (quadrature)
    CrossedInverse,
    /// Replication value of the unit payoff at (`--t`, `--x`)
    ReplicationValue,
    /// Hedge ratio of the unit payoff at (`--t`, `--x`)
    HedgeRatio,
}

#[derive(Args)]
struct OracleArgs {
    /// Quantity to evaluate
    #[arg(long, value_enum)]
    quantity: OracleQuantity,
    /// Kernel strength (expected-z)
    #[arg(long = "n", value_name = "FLOAT")]
    n: Option<f64>,
    /// Barrier level (expected-z, survival, density, crossed-inverse)
    #[arg(long = "a", value_name = "FLOAT")]
    barrier: Option<f64>,
    /// Horizon (expected-z, replication-value, hedge-ratio)
    #[arg(long = "T", value_name = "FLOAT")]
    horizon: Option<f64>,
    /// Time argument (survival, density, crossed-inverse, replication-value,
    /// hedge-ratio)
    #[arg(long = "t", value_name = "FLOAT")]
    time: Option<f64>,
    /// Spatial argument (normal-cdf, replication-value, hedge-ratio)
    #[arg(long = "x", value_name = "FLOAT")]
    x: Option<f64>,
    /// Bessel start (inverse-moment)
    #[arg(long = "x0", value_name = "FLOAT")]
    x0: Option<f64>,
    /// Elapsed Bessel time (inverse-moment)
    #[arg(long = "u", value_name = "FLOAT")]
    u: Option<f64>,
    /// Quadrature tolerance
    #[arg(long, default_value_t = oracles::DEFAULT_QUAD_TOL)]
    tol: f64,
}

fn main() -> ExitCode {
    // A closed pipe (`deflab oracle ... | head`) must end the process
    // quietly like any unix filter, not panic mid-print; Rust ignores
    // SIGPIPE by default, so restore the default disposition.
    #[cfg(unix)]
    // SAFETY: resetting a signal disposition has no preconditions, and
    // nothing has printed yet this early in main.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Run the chosen command; `Ok(passed)` carries the verdict.
fn dispatch(cli: Cli) -> Result<bool> {
    let started = Instant::now();
    match cli.command {
        Command::VerifyCounterexample(args) => {
            let config = CounterexampleConfig {
                run: args.common.run_config(),
                strengths: args.strengths,
            };
            emit(run_counterexample(&config)?, args.common.out.as_deref(), started)
        }
        Command::MaxClosure(args) => {
            let config = MaxClosureConfig {
                run: args.common.run_config(),
                nu1: args.nu1,
                nu2: args.nu2,
                checkpoint: args.checkpoint.unwrap_or(args.common.horizon),
            };
            emit(run_max_closure(&config)?, args.common.out.as_deref(), started)
        }
        Command::Arbitrage(args) => {
            let mut config = ArbitrageConfig::with_run(args.common.run_config());
            config.threshold = args.threshold;
            emit(run_arbitrage(&config)?, args.common.out.as_deref(), started)
        }
        Command::Simulate(args) => {
            emit(run_market_battery(&args.common.run_config())?, args.common.out.as_deref(), started)
        }
        Command::Oracle(args) => {
            let (value, error_estimate) = evaluate_oracle(&args)?;
            println!("value: {value}");
            println!("error_estimate: {error_estimate}");
            Ok(true)
        }
    }
}

/// Stamp the wall clock, write or print, summarise; returns the verdict.
fn emit(mut report: ExperimentReport, out: Option<&Path>, started: Instant) -> Result<bool> {
    report.runtime_seconds = started.elapsed().as_secs_f64();
    match out {
        Some(path) => {
            report.write_files(path)?;
            print_summary(&report, &mut std::io::stdout().lock())?;
        }
        None => {
            // Machine-readable stdout; the human summary goes to stderr.
            print!("{}", report.to_json()?);
            print_summary(&report, &mut std::io::stderr().lock())?;
        }
    }
    Ok(report.verdict.passed)
}

fn print_summary(report: &ExperimentReport, w: &mut dyn std::io::Write) -> Result<()> {
    for q in &report.quantities {
        let mut line = format!("[{:<4}] {}", q.verdict, q.name);
        if let Some(mc) = &q.mc {
            line.push_str(&format!("  mc {:.8} \u{b1} {:.8}", mc.mean, mc.stderr));
        } else if let Some(v) = q.value {
            line.push_str(&format!("  value {v:.8}"));
        }
        if let Some(oracle) = q.oracle {
            line.push_str(&format!("  oracle {oracle:.8}"));
        }
        if let Some(z) = q.z {
            line.push_str(&format!("  z {z:+.2}"));
        }
        writeln!(w, "{line}")?;
    }
    if report.verdict.passed {
        match &report.verdict.conclusion {
            Some(c) => writeln!(w, "verdict: PASS - {c}")?,
            None => writeln!(w, "verdict: PASS")?,
        }
    } else {
        writeln!(
            w,
            "verdict: FAIL ({} failing: {})",
            report.verdict.failures.len(),
            report.verdict.failures.join(", ")
        )?;
    }
    Ok(())
}

fn need(opt: Option<f64>, flag: &str) -> Result<f64> {
    opt.ok_or_else(|| Error::invalid(format!("oracle: this quantity needs --{flag}")))
}

/// Evaluate the requested reference quantity; returns (value, error
/// estimate), the latter zero for closed forms.
fn evaluate_oracle(args: &OracleArgs) -> Result<(f64, f64)> {
    match args.quantity {
        OracleQuantity::ExpectedZ => {
            let q = oracles::expected_z_nu_n(
                need(args.n, "n")?,
                need(args.barrier, "a")?,
                need(args.horizon, "T")?,
                args.tol,
            )?;
            Ok((q.value, q.error_estimate))
        }
        OracleQuantity::Survival => {
            let law = oracles::first_passage_law(need(args.barrier, "a")?, need(args.time, "t")?)?;
            Ok((law.survival, 0.0))
        }
        OracleQuantity::Density => {
            let law = oracles::first_passage_law(need(args.barrier, "a")?, need(args.time, "t")?)?;
            Ok((law.density, 0.0))
        }
        OracleQuantity::InverseMoment => Ok((
            oracles::bessel3_inverse_moment(need(args.x0, "x0")?, need(args.u, "u")?)?,
            0.0,
        )),
        OracleQuantity::NormalCdf => Ok((oracles::std_normal_cdf(need(args.x, "x")?)?, 0.0)),
        OracleQuantity::CrossedInverse => {
            let q = oracles::crossed_inverse_price_moment(
                need(args.barrier, "a")?,
                need(args.time, "t")?,
                args.tol,
            )?;
            Ok((q.value, q.error_estimate))
        }
        OracleQuantity::ReplicationValue => Ok((
            bond_replication_value(need(args.time, "t")?, need(args.x, "x")?, need(args.horizon, "T")?)?,
            0.0,
        )),
        OracleQuantity::HedgeRatio => Ok((
            hedge_ratio(need(args.time, "t")?, need(args.x, "x")?, need(args.horizon, "T")?)?,
            0.0,
        )),
    }
}

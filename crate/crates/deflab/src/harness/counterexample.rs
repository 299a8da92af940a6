//! Certification that every deflator in the tested family has terminal
//! expectation strictly below one.
//!
//! The estimator conditions on the barrier-passage time: given `tau`, the
//! terminal deflator expectation is known in closed form, so each path
//! contributes
//!
//! `zeta = 1 - 2 exp(-n a - n^2 tau / 2) (1 - Phi(1 / sqrt(T - tau)))`
//!
//! on crossing paths and exactly one otherwise.  Averaging `zeta` is a
//! conditional-expectation (Rao-Blackwell) estimator of `E[Z(T)]`: it has
//! the same mean as averaging the terminal deflator itself but a tiny
//! variance, and — crucially — it sees the strict loss of mass.  A naive
//! average of grid stochastic exponentials cannot: with predictable
//! integrands every grid exponential is an exact discrete martingale, so
//! its sample mean hovers at one at every step size and the deficit only
//! appears in the continuum limit.  The report's coupling diagnostic
//! quantifies exactly that grid identity on the driven scheme.

use serde::{Deserialize, Serialize};

use crate::deflators::{stochastic_exponential, theta_per_step};
use crate::ensemble;
use crate::error::{Error, Result};
use crate::harness::report::{ExperimentReport, QuantityReport};
use crate::harness::{median, quantile, RunConfig, DRIFT_TEST_NOTE};
use crate::market::{BarrierBesselMarket, Scheme};
use crate::oracles;
use crate::paths::{first_passage, make_time_grid, sample_brownian_rng};
use crate::stats::{compare_to_oracle, mc_estimate};

/// Verdict text attached when the whole battery passes.
pub const CONCLUSION: &str = "no ELMM exists; supremum 1 not attained";

/// Scope caveat included in every counterexample report.
pub const SCOPE_NOTE: &str = "certification covers the tested kernel strengths plus the \
     analytic tail bound; kernels outside the tested sequence are beyond simulation's reach";

/// Number of paths the pathwise coupling diagnostic replays with the
/// driven (Euler) scheme.
const COUPLING_PATHS: u64 = 2_000;

/// Configuration of [`run_counterexample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    /// Kernel strengths to certify, strictly increasing.
    pub strengths: Vec<f64>,
}

impl CounterexampleConfig {
    fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.strengths.is_empty() {
            return Err(Error::invalid("config: need at least one kernel strength"));
        }
        for w in self.strengths.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "config: strengths must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(self.strengths[0] >= 0.0) || self.strengths.iter().any(|n| !n.is_finite()) {
            return Err(Error::invalid(
                "config: strengths must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

/// Conditional terminal-expectation sample for strength `n`, given the
/// simulated passage time.
fn zeta(n: f64, barrier: f64, horizon: f64, crossed_early: bool, tau: f64) -> f64 {
    if !crossed_early {
        return 1.0;
    }
    let tilt = oracles::exp(-n * barrier - 0.5 * n * n * tau);
    1.0 - 2.0 * tilt * oracles::phi_sf(1.0 / (horizon - tau).sqrt())
}

/// One-sided z-score that an estimate sits strictly below one.
fn below_one_z(mean: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        (1.0 - mean) / stderr
    } else if mean < 1.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Run the certification battery.  For each strength: the conditional MC
/// estimate against the quadrature oracle, the one-sided strictly-below-one
/// test, and the analytic tail bound on the quadrature value; across
/// strengths: strict monotonicity.  Passing everything earns the
/// conclusion line.
///
/// # Errors
/// `InvalidArgument` for a malformed configuration; simulation and
/// quadrature failures propagate.
pub fn run_counterexample(config: &CounterexampleConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let run = &config.run;
    let grid = make_time_grid(run.horizon, run.steps, None)?;
    let barrier = run.barrier;
    let horizon = run.horizon;
    let bridge = run.bridge;

    // One passage ensemble serves every strength.
    let passages = ensemble::map_paths(run.paths, |index| {
        let path = sample_brownian_rng(&grid, 1, run.path_rng(index))?;
        let passage = first_passage(&path, barrier, bridge)?;
        Ok((passage.hit && passage.tau < horizon, passage.tau))
    })?;

    let mut quantities = Vec::new();
    let mut quad_values = Vec::with_capacity(config.strengths.len());
    let mut mc_means = Vec::with_capacity(config.strengths.len());

    let crossing_mass = 2.0 * oracles::phi_sf(barrier / horizon.sqrt());
    let crossed = passages.iter().filter(|p| p.0).count() as u64;

    for &n in &config.strengths {
        let label = crate::deflators::make_nu_n(n)?.label();
        let raw: Vec<f64> = passages
            .iter()
            .map(|&(early, tau)| zeta(n, barrier, horizon, early, tau))
            .collect();
        let samples = run.reduce_samples(raw)?;
        let estimate = mc_estimate(&samples, run.level)?;
        let quad = oracles::expected_z_nu_n(n, barrier, horizon, oracles::DEFAULT_QUAD_TOL)?;
        let agreement = compare_to_oracle(&estimate, quad.value);
        quantities.push(
            QuantityReport::new(format!("expected_z({label})"))
                .checkpoint(horizon)
                .mc(&estimate)
                .value(quad.value)
                .oracle(quad.value)
                .z(agreement.z_score)
                .verdict(agreement.within),
        );

        let strict_z = below_one_z(estimate.mean, estimate.std_error);
        quantities.push(
            QuantityReport::new(format!("strictly_below_one({label})"))
                .checkpoint(horizon)
                .mc(&estimate)
                .oracle(1.0)
                .z(strict_z)
                .verdict(strict_z >= 3.0),
        );

        let gap = 1.0 - quad.value;
        let bound = 2.0 * oracles::exp(-n * barrier)
            * oracles::phi_sf(1.0 / horizon.sqrt())
            * crossing_mass;
        quantities.push(
            QuantityReport::new(format!("tail_bound({label})"))
                .value(gap)
                .oracle(bound)
                .verdict(gap <= bound + quad.error_estimate),
        );

        quad_values.push(quad.value);
        mc_means.push(estimate.mean);
    }

    let monotone = quad_values.windows(2).all(|w| w[1] > w[0])
        && quad_values.iter().all(|&v| v < 1.0);
    quantities.push(QuantityReport::new("quadrature_monotone_increasing_below_one").verdict(monotone));

    // Crossing probability: sanity information, not a verdict (the zeta
    // agreement rows already fail if the passage law is off).
    let crossing_raw: Vec<f64> = passages
        .iter()
        .map(|&(_, tau)| if tau < horizon { 1.0 } else { 0.0 })
        .collect();
    let crossing_est = mc_estimate(&run.reduce_samples(crossing_raw)?, run.level)?;
    let crossing_cmp = compare_to_oracle(&crossing_est, crossing_mass);
    quantities.push(
        QuantityReport::new("crossing_probability")
            .checkpoint(horizon)
            .mc(&crossing_est)
            .oracle(crossing_mass)
            .z(crossing_cmp.z_score)
            .info(),
    );

    let coupling = coupling_diagnostic(run, &grid)?;
    let diagnostics = serde_json::json!({
        "crossed_paths": crossed,
        "quadrature_values": quad_values,
        "mc_means": mc_means,
        "coupling": coupling,
    });

    let note = format!("{DRIFT_TEST_NOTE}; {SCOPE_NOTE}");
    Ok(ExperimentReport::assemble(
        serde_json::to_value(config)?,
        quantities,
        diagnostics,
        Some(CONCLUSION),
        &note,
    ))
}

/// Pathwise agreement between the stochastic exponential of the market
/// price of risk and the terminal inverse price, on Euler-driven paths
/// sharing the Brownian increments.  On the grid the exponential is an
/// exact discrete martingale, so its sample mean stays at one even though
/// the inverse price it tracks loses mass in the continuum — the medians
/// here quantify the pathwise tracking, not the expectation.
fn coupling_diagnostic(
    run: &RunConfig,
    grid: &crate::paths::TimeGrid,
) -> Result<serde_json::Value> {
    let market = BarrierBesselMarket::new(run.barrier)?;
    let n_paths = run.paths.min(COUPLING_PATHS);
    let maybe_pairs = ensemble::map_paths(n_paths, |index| {
        let path = sample_brownian_rng(grid, 1, run.path_rng(index))?;
        // The driven scheme occasionally floors near zero on coarse grids;
        // a diagnostic drops such paths instead of failing the experiment,
        // and reports how many it dropped.
        let mp = match market.simulate(&path, Scheme::Euler, run.bridge) {
            Ok(mp) => mp,
            Err(Error::Stability { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let z = stochastic_exponential(&path, &theta_per_step(&mp))?;
        let inverse_terminal = 1.0 / mp.terminal();
        Ok(Some((z.terminal(), inverse_terminal)))
    })?;
    let dropped = maybe_pairs.iter().filter(|p| p.is_none()).count();
    let pairs: Vec<(f64, f64)> = maybe_pairs.into_iter().flatten().collect();
    if pairs.len() < 2 {
        return Err(Error::invalid(
            "coupling diagnostic: too few numerically stable paths",
        ));
    }
    let abs_err: Vec<f64> = pairs.iter().map(|&(z, i)| (z - i).abs()).collect();
    let rel_err: Vec<f64> = pairs
        .iter()
        .map(|&(z, i)| (z - i).abs() / i.max(f64::MIN_POSITIVE))
        .collect();
    let mean_z = mc_estimate(&pairs.iter().map(|p| p.0).collect::<Vec<_>>(), run.level)?;
    Ok(serde_json::json!({
        "paths": n_paths,
        "paths_dropped_for_stability": dropped,
        "scheme": "euler",
        "median_abs_error": median(&abs_err)?,
        "p90_abs_error": quantile(&abs_err, 0.9)?,
        "median_rel_error": median(&rel_err)?,
        "exponential_mean": mean_z.mean,
        "exponential_stderr": mean_z.std_error,
    }))
}

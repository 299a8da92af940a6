//! The explicit arbitrage in the barrier market.
//!
//! The strategy holds nothing while the asset is pinned.  The moment the
//! barrier is crossed it goes long the replicating portfolio of the unit
//! payoff, financed entirely by shorting its cost `c = v(tau, 1) < 1` in
//! cash, so wealth starts at zero.  Replication drives terminal wealth to
//! `1 - c = 2 (1 - Phi(1 / sqrt(T - tau))) > 0` on every crossing path and
//! exactly zero on the others: a free lottery ticket, banked from the gap
//! between the replication cost and the face value of the payoff.  Wealth
//! never falls below `-c > -1`, so the strategy is admissible.

use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::harness::replication::{bond_replication_value, hedge_ratio};
use crate::harness::report::{ExperimentReport, QuantityReport};
use crate::harness::{median, quantile, RunConfig, DRIFT_TEST_NOTE};
use crate::market::BarrierBesselMarket;
use crate::oracles;
use crate::paths::{make_time_grid, sample_brownian_rng};
use crate::stats::{compare_to_oracle, mc_estimate};

/// Coefficient of the terminal-wealth floor `-coeff * sqrt(dt * T)`;
/// sized to cover the worst discrete-hedging shortfall seen across the
/// calibration ensemble with a greater than threefold margin.
pub const WEALTH_FLOOR_COEFF: f64 = 40.0;

/// Configuration of [`run_arbitrage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    /// Profit level defining "visibly positive" terminal wealth.
    pub threshold: f64,
    /// Ceiling for the admissibility integrals.
    pub integral_ceiling: f64,
    /// Largest acceptable median hedging error; beyond it the run aborts
    /// advising refinement.
    pub hedge_error_ceiling: f64,
}

impl ArbitrageConfig {
    /// Defaults for everything but the ensemble parameters.
    pub fn with_run(run: RunConfig) -> Self {
        ArbitrageConfig {
            run,
            threshold: 0.01,
            integral_ceiling: 1e6,
            hedge_error_ceiling: 0.2,
        }
    }

    fn validate(&self) -> Result<f64> {
        self.run.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "config: threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        if !(self.integral_ceiling > 0.0 && self.hedge_error_ceiling > 0.0) {
            return Err(Error::invalid(
                "config: ceilings must be positive",
            ));
        }
        // Terminal wealth exceeds the threshold exactly when the crossing
        // happens more than delta before the horizon.
        let q = oracles::std_normal_quantile(1.0 - self.threshold / 2.0)?;
        let delta = 1.0 / (q * q);
        if delta >= self.run.horizon {
            return Err(Error::invalid(format!(
                "config: threshold {} is unreachable on horizon {} (needs {delta} of hedging time)",
                self.threshold, self.run.horizon
            )));
        }
        Ok(delta)
    }
}

struct ArbSample {
    /// Crossed strictly before the horizon.
    hit: bool,
    /// Replication cost at entry, or the face value one when never unpinned.
    entry_cost: f64,
    terminal_wealth: f64,
    target: f64,
    min_wealth: f64,
    drift_integral: f64,
    vol_square_integral: f64,
}

/// Run the arbitrage demonstration.
///
/// # Errors
/// `InvalidArgument` for malformed configuration; `Stability` when the
/// median hedging error exceeds the configured ceiling (advice: refine the
/// grid); simulation failures propagate.
pub fn run_arbitrage(config: &ArbitrageConfig) -> Result<ExperimentReport> {
    let delta = config.validate()?;
    let run = &config.run;
    let grid = make_time_grid(run.horizon, run.steps, None)?;
    let market = BarrierBesselMarket::new(run.barrier)?;
    let horizon = run.horizon;
    let steps = run.steps;
    let scheme = run.scheme;
    let bridge = run.bridge;

    let samples = ensemble::map_paths(run.paths, |index| {
        let path = sample_brownian_rng(&grid, 1, run.path_rng(index))?;
        let mp = market.simulate(&path, scheme, bridge)?;
        let passage = mp.passage();
        let hit = passage.hit && passage.tau < horizon;
        let tau = passage.tau;
        if !hit {
            return Ok(ArbSample {
                hit,
                entry_cost: 1.0,
                terminal_wealth: 0.0,
                target: 0.0,
                min_wealth: 0.0,
                drift_integral: 0.0,
                vol_square_integral: 0.0,
            });
        }
        let entry = mp.crossing_node().expect("crossing node on a hit path");
        let prices = mp.prices();
        let mut wealth = 0.0f64;
        let mut min_wealth = 0.0f64;
        let mut drift_terms = 0.0f64;
        let mut vol_terms = 0.0f64;
        for j in entry..steps {
            let t = grid.node(j);
            let s = prices[j];
            let units = hedge_ratio(t, s, horizon)?;
            wealth += units * (prices[j + 1] - s);
            min_wealth = min_wealth.min(wealth);
            let dt = grid.step(j);
            drift_terms += (units / s).abs() * dt;
            vol_terms += units * units * dt;
        }
        Ok(ArbSample {
            hit,
            entry_cost: bond_replication_value(tau, 1.0, horizon)?,
            terminal_wealth: wealth,
            target: 2.0 * oracles::phi_sf(1.0 / (horizon - tau).sqrt()),
            min_wealth,
            drift_integral: drift_terms,
            vol_square_integral: vol_terms,
        })
    })?;

    let n_raw = samples.len() as u64;
    let mut quantities = Vec::new();

    // Replication cost at entry: ties this experiment to the terminal
    // deflator expectation at zero kernel strength.
    let cost_est = mc_estimate(
        &run.reduce_samples(samples.iter().map(|s| s.entry_cost).collect())?,
        run.level,
    )?;
    let cost_oracle = oracles::expected_z_nu_n(0.0, run.barrier, horizon, oracles::DEFAULT_QUAD_TOL)?;
    let cost_cmp = compare_to_oracle(&cost_est, cost_oracle.value);
    quantities.push(
        QuantityReport::new("initial_cost")
            .checkpoint(horizon)
            .mc(&cost_est)
            .value(cost_oracle.value)
            .oracle(cost_oracle.value)
            .z(cost_cmp.z_score)
            .verdict(cost_cmp.within),
    );

    // Terminal wealth must clear zero up to the discretisation floor.
    let grid_tolerance = WEALTH_FLOOR_COEFF * (grid.max_step() * horizon).sqrt();
    let min_terminal = samples
        .iter()
        .map(|s| s.terminal_wealth)
        .fold(f64::INFINITY, f64::min);
    quantities.push(
        QuantityReport::new("terminal_wealth_floor")
            .value(min_terminal)
            .oracle(-grid_tolerance)
            .verdict(min_terminal >= -grid_tolerance),
    );

    // Mass of visibly positive outcomes against the delta-corrected
    // passage mass.
    let positive_raw: Vec<f64> = samples
        .iter()
        .map(|s| if s.terminal_wealth > config.threshold { 1.0 } else { 0.0 })
        .collect();
    let positive_est = mc_estimate(&run.reduce_samples(positive_raw)?, run.level)?;
    let mass_oracle = 2.0 * oracles::phi_sf(run.barrier / (horizon - delta).sqrt());
    let mass_cmp = compare_to_oracle(&positive_est, mass_oracle);
    quantities.push(
        QuantityReport::new("positive_terminal_mass")
            .checkpoint(horizon)
            .mc(&positive_est)
            .oracle(mass_oracle)
            .z(mass_cmp.z_score)
            .verdict(mass_cmp.within),
    );

    // Untouched paths must end at exactly zero.
    let untouched_violations = samples
        .iter()
        .filter(|s| !s.hit && s.terminal_wealth != 0.0)
        .count();
    quantities.push(
        QuantityReport::new("wealth_zero_when_never_unpinned")
            .value(untouched_violations as f64)
            .oracle(0.0)
            .verdict(untouched_violations == 0),
    );

    // Admissibility: wealth bounded below by the shorted cost, which is
    // itself above minus one, and both strategy integrals finite.
    let global_min_wealth = samples
        .iter()
        .map(|s| s.min_wealth)
        .fold(f64::INFINITY, f64::min);
    quantities.push(
        QuantityReport::new("admissibility_lower_bound")
            .value(global_min_wealth)
            .oracle(-1.0)
            .verdict(global_min_wealth > -1.0),
    );
    let worst_integral = samples
        .iter()
        .map(|s| s.drift_integral.max(s.vol_square_integral))
        .fold(0.0f64, f64::max);
    quantities.push(
        QuantityReport::new("admissibility_integrals")
            .value(worst_integral)
            .oracle(config.integral_ceiling)
            .verdict(worst_integral <= config.integral_ceiling && worst_integral.is_finite()),
    );

    // Hedging quality on the hedged paths.
    let errors: Vec<f64> = samples
        .iter()
        .filter(|s| s.hit)
        .map(|s| (s.terminal_wealth - s.target).abs())
        .collect();
    if errors.is_empty() {
        return Err(Error::invalid(
            "run_arbitrage: no path crossed the barrier; raise paths or lower the barrier",
        ));
    }
    let median_err = median(&errors)?;
    if median_err > config.hedge_error_ceiling {
        return Err(Error::Stability {
            node: steps,
            what: format!(
                "median hedging error {median_err:.6} exceeds the ceiling {}",
                config.hedge_error_ceiling
            ),
            advice: "increase the step count (the hedging error shrinks with the grid)"
                .to_string(),
        });
    }
    quantities.push(
        QuantityReport::new("hedging_error_median")
            .value(median_err)
            .oracle(config.hedge_error_ceiling)
            .info(),
    );

    let crossing_est = mc_estimate(
        &run.reduce_samples(
            samples
                .iter()
                .map(|s| if s.hit { 1.0 } else { 0.0 })
                .collect(),
        )?,
        run.level,
    )?;
    let crossing_mass = 2.0 * oracles::phi_sf(run.barrier / horizon.sqrt());
    quantities.push(
        QuantityReport::new("crossing_probability")
            .checkpoint(horizon)
            .mc(&crossing_est)
            .oracle(crossing_mass)
            .z(compare_to_oracle(&crossing_est, crossing_mass).z_score)
            .info(),
    );

    let hedged = samples.iter().filter(|s| s.hit).count() as u64;
    let diagnostics = serde_json::json!({
        "hedged_fraction": hedged as f64 / n_raw as f64,
        "threshold": config.threshold,
        "threshold_passage_margin": delta,
        "hedging_error": {
            "median": median_err,
            "p90": quantile(&errors, 0.9)?,
            "max": quantile(&errors, 1.0)?,
        },
        "grid_tolerance": grid_tolerance,
        "min_terminal_wealth": min_terminal,
        "min_wealth_any_node": global_min_wealth,
        "worst_admissibility_integral": worst_integral,
        "admissibility_note": "bounds verified at grid nodes only; excursions between nodes are unobserved",
    });

    Ok(ExperimentReport::assemble(
        serde_json::to_value(config)?,
        quantities,
        diagnostics,
        Some("admissible strategy with nonnegative terminal wealth and positive-mass profit"),
        DRIFT_TEST_NOTE,
    ))
}

/// Median hedging error at each step count: the refinement study behind
/// the convergence claims.  Returns `(steps, median |error|,
/// median error^2)` per level.
///
/// # Errors
/// Configuration and simulation errors propagate.
pub fn hedging_error_refinement(
    run: &RunConfig,
    step_counts: &[usize],
) -> Result<Vec<(usize, f64, f64)>> {
    run.validate()?;
    let market = BarrierBesselMarket::new(run.barrier)?;
    let horizon = run.horizon;
    let mut out = Vec::with_capacity(step_counts.len());
    for &steps in step_counts {
        let grid = make_time_grid(horizon, steps, None)?;
        let scheme = run.scheme;
        let bridge = run.bridge;
        let errs = ensemble::map_paths(run.paths, |index| {
            let path = sample_brownian_rng(&grid, 1, run.path_rng(index))?;
            let mp = market.simulate(&path, scheme, bridge)?;
            let passage = mp.passage();
            if !(passage.hit && passage.tau < horizon) {
                return Ok(f64::NAN); // sentinel: not a hedged path
            }
            let entry = mp.crossing_node().expect("crossing node on a hit path");
            let prices = mp.prices();
            let mut wealth = 0.0f64;
            for j in entry..steps {
                let units = hedge_ratio(grid.node(j), prices[j], horizon)?;
                wealth += units * (prices[j + 1] - prices[j]);
            }
            let target = 2.0 * oracles::phi_sf(1.0 / (horizon - passage.tau).sqrt());
            Ok(wealth - target)
        })?;
        let hedged: Vec<f64> = errs.into_iter().filter(|e| !e.is_nan()).collect();
        if hedged.is_empty() {
            return Err(Error::invalid(
                "hedging_error_refinement: no path crossed the barrier",
            ));
        }
        let abs: Vec<f64> = hedged.iter().map(|e| e.abs()).collect();
        let sq: Vec<f64> = hedged.iter().map(|e| e * e).collect();
        out.push((steps, median(&abs)?, median(&sq)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Scheme;

    fn config() -> ArbitrageConfig {
        ArbitrageConfig::with_run(RunConfig {
            barrier: 1.0,
            horizon: 1.0,
            paths: 2_000,
            steps: 256,
            seed: 777,
            level: 0.99,
            scheme: Scheme::Exact,
            bridge: true,
            antithetic: false,
        })
    }

    #[test]
    fn strategy_banks_the_gap_on_a_small_ensemble() {
        let report = run_arbitrage(&config()).unwrap();
        assert!(report.verdict.passed, "failures: {:?}", report.verdict.failures);
        let cost = report
            .quantities
            .iter()
            .find(|q| q.name == "initial_cost")
            .unwrap();
        assert!((cost.mc.as_ref().unwrap().mean - 0.9544997361036416).abs() < 0.02);
        let mass = report
            .quantities
            .iter()
            .find(|q| q.name == "positive_terminal_mass")
            .unwrap();
        assert!((mass.oracle.unwrap() - 0.2778725646632409).abs() < 1e-12);
        assert!(report.diagnostics["hedged_fraction"].as_f64().unwrap() > 0.25);
    }

    #[test]
    fn config_validation_catches_unreachable_thresholds() {
        let mut cfg = config();
        cfg.threshold = 0.9999;
        // Needs more hedging room than the horizon offers.
        assert!(run_arbitrage(&cfg).is_err());
        let mut cfg = config();
        cfg.threshold = 0.0;
        assert!(run_arbitrage(&cfg).is_err());
    }

    #[test]
    fn a_tight_hedge_ceiling_aborts_with_advice() {
        let mut cfg = config();
        cfg.run.paths = 500;
        cfg.hedge_error_ceiling = 1e-9;
        match run_arbitrage(&cfg) {
            Err(Error::Stability { advice, .. }) => {
                assert!(advice.contains("step count"), "advice: {advice}")
            }
            other => panic!("expected a stability error, got {other:?}"),
        }
    }

    #[test]
    fn refinement_runs_report_both_medians() {
        let mut run = config().run;
        run.paths = 400;
        let rows = hedging_error_refinement(&run, &[64, 128]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.1 > 0.0 && r.2 > 0.0));
        // Refinement shrinks the error in the median.
        assert!(rows[1].1 < rows[0].1, "rows: {rows:?}");
    }
}

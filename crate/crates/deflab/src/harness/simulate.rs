//! Sanity battery for the market simulator.
//!
//! Structural checks (positivity, pinning before the crossing, a pinned
//! terminal price on paths that never unpin), the crossing mass against
//! the reflection law, an eight-checkpoint drift test of the unpinned
//! inverse price against its quadrature values, and a two-sample
//! Kolmogorov-Smirnov comparison of the terminal laws produced by the two
//! schemes.

use crate::ensemble;
use crate::error::{Error, Result};
use crate::harness::report::{ExperimentReport, QuantityReport};
use crate::harness::{quantile, RunConfig, DRIFT_TEST_NOTE};
use crate::market::{BarrierBesselMarket, Scheme};
use crate::oracles;
use crate::paths::{make_time_grid, sample_brownian_rng};
use crate::stats::{
    compare_to_oracle, ks_critical_two_sample, ks_two_sample, martingale_drift_test, mc_estimate,
    DriftCheckpoint,
};

/// Paths per scheme in the Kolmogorov-Smirnov comparison (capped to keep
/// the double simulation cheap).
pub const KS_MAX_PATHS: u64 = 10_000;

/// Number of equally spaced drift checkpoints.
pub const DRIFT_CHECKPOINTS: usize = 8;

struct BatterySample {
    nonpositive_nodes: usize,
    pinned_violations: usize,
    unpinned: bool,
    hit: bool,
    terminal: f64,
    floored_steps: usize,
    /// `1(unpinned by checkpoint) / price` at each checkpoint node.
    checkpoint_samples: [f64; DRIFT_CHECKPOINTS],
}

/// Run the simulator battery under one configuration.
///
/// The structural rows and the drift battery use the configured scheme;
/// the Kolmogorov-Smirnov row always simulates both schemes on a common
/// path set (capped at [`KS_MAX_PATHS`] paths per scheme).
///
/// # Errors
/// `InvalidArgument` for malformed configuration, including a step count
/// not divisible by eight (the drift checkpoints must land on nodes);
/// simulation failures propagate.
pub fn run_market_battery(run: &RunConfig) -> Result<ExperimentReport> {
    run.validate()?;
    if run.steps % DRIFT_CHECKPOINTS != 0 {
        return Err(Error::invalid(format!(
            "config: steps {} must be divisible by {DRIFT_CHECKPOINTS} so the drift checkpoints land on grid nodes",
            run.steps
        )));
    }
    let grid = make_time_grid(run.horizon, run.steps, None)?;
    let market = BarrierBesselMarket::new(run.barrier)?;
    let horizon = run.horizon;
    let steps = run.steps;
    let scheme = run.scheme;
    let bridge = run.bridge;
    let checkpoint_nodes: [usize; DRIFT_CHECKPOINTS] =
        core::array::from_fn(|k| (k + 1) * steps / DRIFT_CHECKPOINTS);

    let samples = ensemble::map_paths(run.paths, |index| {
        let path = sample_brownian_rng(&grid, 1, run.path_rng(index))?;
        let mp = market.simulate(&path, scheme, bridge)?;
        let prices = mp.prices();
        let nonpositive_nodes = prices.iter().filter(|&&s| !(s > 0.0)).count();
        let pinned_end = mp.crossing_node().unwrap_or(prices.len());
        let pinned_violations = prices[..pinned_end.min(prices.len())]
            .iter()
            .filter(|&&s| s != 1.0)
            .count();
        let passage = mp.passage();
        let checkpoint_samples = core::array::from_fn(|k| {
            let node = checkpoint_nodes[k];
            if mp.crossed_by(node) {
                1.0 / prices[node]
            } else {
                0.0
            }
        });
        Ok(BatterySample {
            nonpositive_nodes,
            pinned_violations,
            unpinned: mp.crossing_node().is_some(),
            hit: passage.hit,
            terminal: mp.terminal(),
            floored_steps: mp.floored_steps(),
            checkpoint_samples,
        })
    })?;

    let mut quantities = Vec::new();

    let nonpositive: usize = samples.iter().map(|s| s.nonpositive_nodes).sum();
    quantities.push(
        QuantityReport::new("prices_positive")
            .value(nonpositive as f64)
            .oracle(0.0)
            .verdict(nonpositive == 0),
    );

    let pinned_violations: usize = samples.iter().map(|s| s.pinned_violations).sum();
    quantities.push(
        QuantityReport::new("pinned_before_unpinning")
            .value(pinned_violations as f64)
            .oracle(0.0)
            .verdict(pinned_violations == 0),
    );

    let terminal_violations = samples
        .iter()
        .filter(|s| !s.unpinned && s.terminal != 1.0)
        .count();
    quantities.push(
        QuantityReport::new("terminal_pinned_when_never_unpinned")
            .value(terminal_violations as f64)
            .oracle(0.0)
            .verdict(terminal_violations == 0),
    );

    // Crossing mass against the reflection law.  Node-only detection is
    // biased low by construction, so the row is informational unless the
    // bridge correction is on.
    let hit_est = mc_estimate(
        &run.reduce_samples(
            samples
                .iter()
                .map(|s| if s.hit { 1.0 } else { 0.0 })
                .collect(),
        )?,
        run.level,
    )?;
    let hit_oracle = 2.0 * oracles::phi_sf(run.barrier / horizon.sqrt());
    let hit_cmp = compare_to_oracle(&hit_est, hit_oracle);
    let hit_row = QuantityReport::new("crossing_probability")
        .checkpoint(horizon)
        .mc(&hit_est)
        .oracle(hit_oracle)
        .z(hit_cmp.z_score);
    quantities.push(if bridge {
        hit_row.verdict(hit_cmp.within)
    } else {
        hit_row.info()
    });

    // Drift battery: the unpinned inverse price has quadrature-computable
    // expectations at every checkpoint, and conditionally on the crossing
    // time the exact scheme reproduces them with no step-size bias.
    let mut checkpoints = Vec::with_capacity(DRIFT_CHECKPOINTS);
    for (k, &node) in checkpoint_nodes.iter().enumerate() {
        let t = grid.node(node);
        let reference =
            oracles::crossed_inverse_price_moment(run.barrier, t, oracles::DEFAULT_QUAD_TOL)?;
        checkpoints.push(DriftCheckpoint {
            time: t,
            samples: run
                .reduce_samples(samples.iter().map(|s| s.checkpoint_samples[k]).collect())?,
            reference: reference.value,
        });
    }
    let drift = martingale_drift_test("unpinned_inverse_price", &checkpoints, 1.0 - run.level)?;
    for cp in &drift.checkpoints {
        quantities.push(
            QuantityReport::new(format!("unpinned_inverse_price(t={})", cp.time))
                .checkpoint(cp.time)
                .value(cp.mean)
                .oracle(cp.reference)
                .z(cp.z_score)
                .verdict(!cp.rejected),
        );
    }

    // Terminal-law agreement between the two schemes, conditioned on the
    // paths that unpinned (identical sets under both schemes: crossing
    // detection only reads the driver).  Kolmogorov-Smirnov at the run's
    // confidence level.
    let ks_paths = run.paths.min(KS_MAX_PATHS);
    let mut exact_terminals = Vec::new();
    let mut euler_terminals = Vec::new();
    for (which, out) in [
        (Scheme::Exact, &mut exact_terminals),
        (Scheme::Euler, &mut euler_terminals),
    ] {
        let terminals = ensemble::map_paths(ks_paths, |index| {
            let path = sample_brownian_rng(&grid, 1, run.path_rng(index))?;
            let mp = market.simulate(&path, which, bridge)?;
            Ok(if mp.crossing_node().is_some() {
                mp.terminal()
            } else {
                f64::NAN // sentinel: still pinned, excluded below
            })
        })?;
        out.extend(terminals.into_iter().filter(|t| !t.is_nan()));
    }
    if exact_terminals.len() != euler_terminals.len() {
        return Err(Error::invalid(
            "run_market_battery: scheme-dependent crossing sets (this is a bug)",
        ));
    }
    let ks_stat = ks_two_sample(&exact_terminals, &euler_terminals)?;
    let ks_critical =
        ks_critical_two_sample(1.0 - run.level, exact_terminals.len(), euler_terminals.len())?;
    quantities.push(
        QuantityReport::new("scheme_agreement_ks")
            .checkpoint(horizon)
            .value(ks_stat)
            .oracle(ks_critical)
            .verdict(ks_stat <= ks_critical),
    );

    let unpinned_terminals: Vec<f64> = samples
        .iter()
        .filter(|s| s.unpinned)
        .map(|s| s.terminal)
        .collect();
    let total_floored: usize = samples.iter().map(|s| s.floored_steps).sum();
    let paths_floored = samples.iter().filter(|s| s.floored_steps > 0).count();
    let terminal_summary = if unpinned_terminals.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::json!({
            "p10": quantile(&unpinned_terminals, 0.1)?,
            "p50": quantile(&unpinned_terminals, 0.5)?,
            "p90": quantile(&unpinned_terminals, 0.9)?,
            "max": quantile(&unpinned_terminals, 1.0)?,
        })
    };
    let diagnostics = serde_json::json!({
        "unpinned_fraction": unpinned_terminals.len() as f64 / samples.len() as f64,
        "unpinned_terminal_price": terminal_summary,
        "floored_steps_total": total_floored,
        "paths_with_flooring": paths_floored,
        "drift_test": {
            "alpha": drift.alpha,
            "worst_abs_z": drift.worst_abs_z,
            "passed": drift.passed,
        },
        "ks": {
            "paths_per_scheme": ks_paths,
            "unpinned_compared": exact_terminals.len(),
            "statistic": ks_stat,
            "critical": ks_critical,
        },
    });

    Ok(ExperimentReport::assemble(
        serde_json::to_value(run)?,
        quantities,
        diagnostics,
        Some("simulator battery clean"),
        DRIFT_TEST_NOTE,
    ))
}

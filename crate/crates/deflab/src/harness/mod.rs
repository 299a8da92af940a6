//! Experiment runners and their report format.
//!
//! Each runner turns a validated configuration into an
//! [`report::ExperimentReport`]: a versioned, serialisable bundle of
//! Monte Carlo estimates, oracle values, named verdicts and diagnostics.
//! Reports are pure functions of their configuration — the same config
//! (seed included) reproduces the same report byte for byte at any worker
//! count, except for the wall-clock field stamped by the command-line
//! front end.
//!
//! The four experiments:
//! - [`counterexample::run_counterexample`] — certifies that every tested
//!   deflator in the barrier market has terminal expectation strictly
//!   below one while the family's supremum tends to one;
//! - [`max_closure::run_max_closure`] — measures the local-time cost of
//!   taking a pairwise maximum of two deflators;
//! - [`arbitrage::run_arbitrage`] — runs the explicit hedged strategy that
//!   monetises the pricing defect;
//! - [`simulate::run_market_battery`] — sanity battery for the market
//!   simulator itself.

pub mod arbitrage;
pub mod counterexample;
pub mod max_closure;
pub mod replication;
pub mod report;
pub mod simulate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Scheme;
use crate::paths::TimeGrid;

/// Smallest ensemble any experiment accepts.
pub const MIN_PATHS: u64 = 100;

/// Coarsest grid any experiment accepts.
pub const MIN_STEPS: usize = 16;

/// Caveat attached to every report: what a checkpoint z-test can and
/// cannot certify.
pub const DRIFT_TEST_NOTE: &str = "z-tests bound the drift at the tested checkpoints only; they \
     cannot certify the continuous-time (local) martingale property between checkpoints";

/// Parameters shared by every ensemble experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Barrier level; the risky asset unpins when the driver first reaches
    /// it.
    pub barrier: f64,
    /// Terminal time of the experiment.
    pub horizon: f64,
    /// Number of Monte Carlo paths.
    pub paths: u64,
    /// Number of grid steps over the horizon.
    pub steps: usize,
    /// Master seed; path `i` draws from substream `i`.
    pub seed: u64,
    /// Confidence level for every interval and verdict, e.g. 0.99.
    pub level: f64,
    /// Price scheme for market simulation.
    pub scheme: Scheme,
    /// Brownian-bridge barrier-crossing correction.
    pub bridge: bool,
    /// Antithetic pairing (mirror paths at odd indices).
    pub antithetic: bool,
}

impl RunConfig {
    /// Check the documented invariants: `paths >= 100`, `steps >= 16`,
    /// positive barrier and horizon, level in (0, 1), and an even path
    /// count when antithetic pairing is on.
    ///
    /// # Errors
    /// `InvalidArgument` naming the violated bound.
    pub fn validate(&self) -> Result<()> {
        if !(self.barrier > 0.0 && self.barrier.is_finite()) {
            return Err(Error::invalid(format!(
                "config: barrier {} must be positive and finite",
                self.barrier
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!(
                "config: horizon {} must be positive and finite",
                self.horizon
            )));
        }
        if self.paths < MIN_PATHS {
            return Err(Error::invalid(format!(
                "config: paths {} must be at least {MIN_PATHS}",
                self.paths
            )));
        }
        if self.steps < MIN_STEPS {
            return Err(Error::invalid(format!(
                "config: steps {} must be at least {MIN_STEPS}",
                self.steps
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid(format!(
                "config: level {} must lie in (0, 1)",
                self.level
            )));
        }
        if self.antithetic && self.paths % 2 != 0 {
            return Err(Error::invalid(
                "config: antithetic pairing needs an even path count",
            ));
        }
        Ok(())
    }

    /// The per-path generator honouring the antithetic flag: with pairing
    /// on, indices `2k` and `2k + 1` share substream `k`, mirrored.
    pub(crate) fn path_rng(&self, index: u64) -> crate::rng::PathRng {
        if self.antithetic {
            if index % 2 == 1 {
                crate::rng::PathRng::mirrored(self.seed, index / 2)
            } else {
                crate::rng::PathRng::new(self.seed, index / 2)
            }
        } else {
            crate::rng::PathRng::new(self.seed, index)
        }
    }

    /// Collapse raw per-path samples to per-draw samples: identity without
    /// pairing, mirror-pair averages with it.
    pub(crate) fn reduce_samples(&self, raw: Vec<f64>) -> Result<Vec<f64>> {
        if self.antithetic {
            crate::stats::pair_average(&raw)
        } else {
            Ok(raw)
        }
    }
}

/// Locate a checkpoint time on the grid.
///
/// # Errors
/// `InvalidArgument` when `t` is not a grid node (within rounding).
pub fn checkpoint_node(grid: &TimeGrid, t: f64) -> Result<usize> {
    let tol = 1e-12 * grid.horizon().max(1.0);
    grid.nodes()
        .iter()
        .position(|&s| (s - t).abs() <= tol)
        .ok_or_else(|| Error::invalid(format!("checkpoint {t} is not a grid node")))
}

/// Index of the order statistic used for the `q`-quantile of `n` sorted
/// samples (nearest-rank, deterministic).
fn quantile_index(n: usize, q: f64) -> usize {
    ((n as f64 * q).ceil() as usize).clamp(1, n) - 1
}

/// Nearest-rank quantile of an unsorted sample (sorts a copy).
///
/// # Errors
/// `InvalidArgument` on an empty sample or a `q` outside [0, 1].
pub fn quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("quantile: empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!(
            "quantile: q = {q} must lie in [0, 1]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), q)])
}

/// Median by nearest rank.
///
/// # Errors
/// `InvalidArgument` on an empty sample.
pub fn median(samples: &[f64]) -> Result<f64> {
    quantile(samples, 0.5)
}

/// Normal-approximation z-score that a Bernoulli fraction is positive:
/// `f / sqrt(f (1 - f) / n)`, zero when no successes were seen.
pub fn fraction_z_score(successes: u64, n: u64) -> f64 {
    if successes == 0 || n == 0 {
        return 0.0;
    }
    let f = successes as f64 / n as f64;
    if f >= 1.0 {
        return f64::INFINITY;
    }
    f / (f * (1.0 - f) / n as f64).sqrt()
}

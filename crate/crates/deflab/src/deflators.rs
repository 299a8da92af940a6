//! Kernel processes, stochastic exponentials, the pairwise-max switch, and
//! discrete local-time estimators.
//!
//! A deflator candidate is the stochastic exponential
//! `Z = exp(-sum k dW - 1/2 sum k^2 dt)` of a predictable integrand `k`,
//! built here in log space so positivity is structural and the per-step
//! conditional mean is exactly one (each grid exponential is an exact
//! discrete martingale no matter how wild the integrand).  Kernels `nu`
//! live in the class orthogonal to the market's volatility; combined with
//! the market price of risk they produce the whole deflator family.
//!
//! The pairwise maximum of two such exponentials is where closure fails:
//! its discrete Tanaka decomposition carries a nondecreasing local-time
//! term, and [`max_closure_gap`] measures both sides of
//! `E[max(Z1, Z2)] - 1 = E[L] / 2` on an ensemble.

use serde::{Deserialize, Serialize};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::paths::{
    crossing_node, first_passage, make_time_grid, sample_brownian_rng, BrownianPath, PassageResult,
    TimeGrid,
};
use crate::rng::PathRng;
use crate::stats::{self, compensated_sum, EstimateCi};

/// Default ceiling for the grid value of the kernel's quadratic integral.
pub const DEFAULT_KERNEL_CEILING: f64 = 1e6;

/// Relative tolerance for the orthogonality residual between a kernel and
/// the volatility.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-12;

/// A kernel process `nu`, named by tag in configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum DeflatorSpec {
    /// `nu = 0`: the deflator driven by the price of risk alone.
    Zero,
    /// `nu = strength` up to the barrier crossing, zero after.
    NuN { strength: f64 },
    /// Explicit per-step values (produced by [`switch_process`], or for
    /// tests).
    PerStep { label: String, values: Vec<f64> },
}

impl DeflatorSpec {
    /// Parse a configuration tag: `zero` or `nu_n:<float>`.
    ///
    /// # Errors
    /// `InvalidArgument` for unknown tags or a negative/non-finite strength.
    pub fn parse_tag(tag: &str) -> Result<Self> {
        let t = tag.trim();
        if t.eq_ignore_ascii_case("zero") {
            return Ok(DeflatorSpec::Zero);
        }
        if let Some(raw) = t.strip_prefix("nu_n:") {
            let strength: f64 = raw.parse().map_err(|_| {
                Error::invalid(format!("kernel tag {tag:?}: {raw:?} is not a number"))
            })?;
            return make_nu_n(strength);
        }
        Err(Error::invalid(format!(
            "unknown kernel tag {tag:?} (expected \"zero\" or \"nu_n:<float>\")"
        )))
    }

    /// The tag this spec answers to in reports.
    pub fn label(&self) -> String {
        match self {
            DeflatorSpec::Zero => "zero".to_string(),
            DeflatorSpec::NuN { strength } => format!("nu_n:{strength}"),
            DeflatorSpec::PerStep { label, .. } => label.clone(),
        }
    }

    /// Evaluate the kernel as per-step (left node, predictable) values on a
    /// grid, given the barrier-passage outcome of the driving path.  The
    /// `NuN` kernel is `strength` on every step inside the pre-crossing
    /// interval and zero from the crossing node on; with no crossing the
    /// whole horizon is pre-crossing.
    ///
    /// # Errors
    /// `InvalidArgument` when explicit per-step values do not match the
    /// grid.
    pub fn kernel_per_step(&self, grid: &TimeGrid, passage: &PassageResult) -> Result<Vec<f64>> {
        let steps = grid.num_steps();
        match self {
            DeflatorSpec::Zero => Ok(vec![0.0; steps]),
            DeflatorSpec::NuN { strength } => {
                let m = crossing_node(grid, passage).unwrap_or(steps);
                let mut k = vec![0.0; steps];
                for slot in k.iter_mut().take(m) {
                    *slot = *strength;
                }
                Ok(k)
            }
            DeflatorSpec::PerStep { values, .. } => {
                if values.len() != steps {
                    return Err(Error::invalid(format!(
                        "per-step kernel has {} values for {} steps",
                        values.len(),
                        steps
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// The kernel that is constant before the barrier crossing and zero after.
///
/// # Errors
/// `InvalidArgument` for a negative or non-finite strength.
pub fn make_nu_n(strength: f64) -> Result<DeflatorSpec> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::invalid(format!(
            "make_nu_n: strength {strength} must be nonnegative and finite"
        )));
    }
    Ok(DeflatorSpec::NuN { strength })
}

/// Per-step market price of risk of a simulated barrier market (left-node
/// evaluation): zero while pinned, `1 / S` on the Bessel leg.
pub fn theta_per_step(market: &crate::market::MarketPath) -> Vec<f64> {
    let prices = market.prices();
    (0..prices.len() - 1)
        .map(|j| {
            if market.crossed_by(j) {
                1.0 / prices[j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Sum two per-step integrands (for example price of risk plus kernel).
///
/// # Errors
/// `InvalidArgument` on a length mismatch.
pub fn combined_integrand(theta: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != nu.len() {
        return Err(Error::invalid(format!(
            "combined_integrand: {} vs {} steps",
            theta.len(),
            nu.len()
        )));
    }
    Ok(theta.iter().zip(nu).map(|(a, b)| a + b).collect())
}

/// Quadratic integral `sum k_j^2 dt_j` of a per-step kernel on its grid.
pub fn kernel_quadratic_integral(kernel: &[f64], grid: &TimeGrid) -> f64 {
    let terms: Vec<f64> = kernel
        .iter()
        .enumerate()
        .map(|(j, k)| k * k * grid.step(j))
        .collect();
    compensated_sum(&terms)
}

/// Verify that a kernel is orthogonal to the volatility step by step
/// (`|vol_j * k_j| <= tol * (1 + |vol_j| * |k_j|)`) and that its quadratic
/// integral stays below `ceiling`.
///
/// # Errors
/// `InvalidArgument` describing the first violated condition.
pub fn check_kernel_membership(
    kernel: &[f64],
    vol_per_step: &[f64],
    grid: &TimeGrid,
    ceiling: f64,
) -> Result<()> {
    if kernel.len() != grid.num_steps() || vol_per_step.len() != grid.num_steps() {
        return Err(Error::invalid(format!(
            "check_kernel_membership: kernel {} / vol {} values for {} steps",
            kernel.len(),
            vol_per_step.len(),
            grid.num_steps()
        )));
    }
    for (j, (k, v)) in kernel.iter().zip(vol_per_step).enumerate() {
        let residual = (v * k).abs();
        if residual > MEMBERSHIP_TOLERANCE * (1.0 + v.abs() * k.abs()) {
            return Err(Error::invalid(format!(
                "kernel not orthogonal to the volatility at step {j}: |vol * k| = {residual:e}"
            )));
        }
    }
    let quad = kernel_quadratic_integral(kernel, grid);
    if !(quad <= ceiling) {
        return Err(Error::invalid(format!(
            "kernel quadratic integral {quad:e} exceeds the ceiling {ceiling:e}"
        )));
    }
    Ok(())
}

/// One trajectory of a stochastic exponential, kept in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorPath {
    values: Vec<f64>,
    log_values: Vec<f64>,
    integrand: Vec<f64>,
}

impl DeflatorPath {
    /// `Z` at every node; `values()[0] == 1` and every entry is positive.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// `log Z` at every node, the exact running sum
    /// `-sum k dW - 1/2 sum k^2 dt`.
    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    /// The per-step integrand this exponential was built from.
    pub fn integrand(&self) -> &[f64] {
        &self.integrand
    }
}

/// Stochastic exponential `exp(-sum k dW - 1/2 sum k^2 dt)` of a per-step
/// integrand along a one-dimensional path, accumulated in log space (the
/// quadratic compensator summed with compensation), so `Z` is strictly
/// positive by construction and each step has conditional mean exactly one.
///
/// # Errors
/// `InvalidArgument` for a non-scalar path or a length mismatch;
/// `NumericFailure` with the node index if the integrand or the exponential
/// stops being finite.
pub fn stochastic_exponential(
    path: &BrownianPath<'_>,
    integrand_per_step: &[f64],
) -> Result<DeflatorPath> {
    if path.dim() != 1 {
        return Err(Error::invalid(format!(
            "stochastic_exponential: path must be one-dimensional, got {}",
            path.dim()
        )));
    }
    let grid = path.grid();
    let steps = grid.num_steps();
    if integrand_per_step.len() != steps {
        return Err(Error::invalid(format!(
            "stochastic_exponential: {} integrand values for {} steps",
            integrand_per_step.len(),
            steps
        )));
    }
    let mut log_values = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    log_values.push(0.0);
    values.push(1.0);
    let mut log_z = 0.0f64;
    // Neumaier compensation for the quadratic-variation accumulator, which
    // is a long sum of small same-sign terms.
    let mut comp = 0.0f64;
    for (j, &k) in integrand_per_step.iter().enumerate() {
        if !k.is_finite() {
            return Err(Error::NumericFailure {
                location: format!("node {j}"),
                what: format!("integrand value {k}"),
            });
        }
        let inc = -k * path.increment_1d(j) - 0.5 * k * k * grid.step(j);
        let t = log_z + inc;
        if log_z.abs() >= inc.abs() {
            comp += (log_z - t) + inc;
        } else {
            comp += (inc - t) + log_z;
        }
        log_z = t;
        let log_total = log_z + comp;
        let z = crate::oracles::exp(log_total);
        if !z.is_finite() {
            return Err(Error::NumericFailure {
                location: format!("node {}", j + 1),
                what: format!("exponential overflowed (log Z = {log_total})"),
            });
        }
        log_values.push(log_total);
        values.push(z);
    }
    Ok(DeflatorPath {
        values,
        log_values,
        integrand: integrand_per_step.to_vec(),
    })
}

/// The switched kernel: follow `nu1` wherever `Z1 >= Z2` (ties select
/// `nu1`), `nu2` elsewhere, evaluated at the left node of each step.
///
/// # Errors
/// `InvalidArgument` when the inputs do not share a grid.
pub fn switch_process(
    nu1: &DeflatorSpec,
    nu2: &DeflatorSpec,
    z1: &DeflatorPath,
    z2: &DeflatorPath,
    grid: &TimeGrid,
    passage: &PassageResult,
) -> Result<DeflatorSpec> {
    let steps = grid.num_steps();
    if z1.values().len() != steps + 1 || z2.values().len() != steps + 1 {
        return Err(Error::invalid(format!(
            "switch_process: trajectories with {} and {} nodes on a grid with {}",
            z1.values().len(),
            z2.values().len(),
            steps + 1
        )));
    }
    let k1 = nu1.kernel_per_step(grid, passage)?;
    let k2 = nu2.kernel_per_step(grid, passage)?;
    let values: Vec<f64> = (0..steps)
        .map(|j| {
            if z1.value(j) >= z2.value(j) {
                k1[j]
            } else {
                k2[j]
            }
        })
        .collect();
    Ok(DeflatorSpec::PerStep {
        label: format!("switch({}|{})", nu1.label(), nu2.label()),
        values,
    })
}

/// Discrete local-time estimators for the difference `D = Z2 - Z1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimePath {
    n_values: Vec<f64>,
    skorokhod: Vec<f64>,
    tanaka_residual: Vec<f64>,
}

impl LocalTimePath {
    /// The signed-integral martingale part `N(t) = sum sign(D) dD`
    /// (`sign(0) = 0`).
    pub fn n_values(&self) -> &[f64] {
        &self.n_values
    }

    /// Reflection estimator `L(t) = max(0, sup_{s<=t} -N(s))`,
    /// nondecreasing by construction.
    pub fn skorokhod(&self) -> &[f64] {
        &self.skorokhod
    }

    /// Residual estimator `L(t) = 2 (D^+(t) - sum 1_{D>0} dD)`, also
    /// nondecreasing step by step.
    pub fn tanaka_residual(&self) -> &[f64] {
        &self.tanaka_residual
    }

    pub fn terminal_skorokhod(&self) -> f64 {
        *self.skorokhod.last().unwrap()
    }

    pub fn terminal_tanaka(&self) -> f64 {
        *self.tanaka_residual.last().unwrap()
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Both discrete local-time estimators of the pair `(Z1, Z2)` at every
/// node.
///
/// # Errors
/// `InvalidArgument` when the trajectories have different lengths.
pub fn tanaka_local_time(z1: &DeflatorPath, z2: &DeflatorPath) -> Result<LocalTimePath> {
    if z1.values().len() != z2.values().len() {
        return Err(Error::invalid(format!(
            "tanaka_local_time: trajectories with {} and {} nodes",
            z1.values().len(),
            z2.values().len()
        )));
    }
    let n_nodes = z1.values().len();
    let d = |i: usize| z2.value(i) - z1.value(i);
    let mut n_values = Vec::with_capacity(n_nodes);
    let mut skorokhod = Vec::with_capacity(n_nodes);
    let mut tanaka_residual = Vec::with_capacity(n_nodes);
    let mut n = 0.0f64;
    let mut running_neg_max = 0.0f64;
    let mut residual = 2.0 * d(0).max(0.0);
    n_values.push(0.0);
    skorokhod.push(0.0);
    tanaka_residual.push(residual);
    for i in 1..n_nodes {
        let prev = d(i - 1);
        let next = d(i);
        n += sign0(prev) * (next - prev);
        // Per-step increment of 2 (D^+ - sum 1_{D>0} dD), telescoped: the
        // two positive-part terms cancel exactly unless D changes sign, in
        // which case the residual picks up twice the overshoot past zero.
        // This form is zero or positive term by term, so the estimator is
        // nondecreasing without rounding caveats.
        if prev > 0.0 && next <= 0.0 {
            residual += -2.0 * next;
        } else if prev <= 0.0 && next > 0.0 {
            residual += 2.0 * next;
        }
        running_neg_max = running_neg_max.max(-n);
        n_values.push(n);
        skorokhod.push(running_neg_max);
        tanaka_residual.push(residual);
    }
    Ok(LocalTimePath {
        n_values,
        skorokhod,
        tanaka_residual,
    })
}

/// Configuration of a [`max_closure_gap`] run.  The experiment is built
/// from exponentials stopped at the barrier crossing (the kernels vanish
/// afterwards), the regime in which both sides of the identity are honest
/// expectations at every grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub barrier: f64,
    pub horizon: f64,
    pub steps: usize,
    pub paths: u64,
    pub seed: u64,
    /// Confidence level for all intervals, e.g. 0.99.
    pub level: f64,
    /// Brownian-bridge crossing detection.
    pub bridge: bool,
    /// Antithetic pairing (halves the number of independent draws).
    pub antithetic: bool,
    /// Checkpoint time; must lie on a grid node.
    pub checkpoint: f64,
}

/// Ensemble estimates of both sides of the max-closure identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `E[max(Z1, Z2)(t)] - 1`.
    pub gap: EstimateCi,
    /// Half the expected Tanaka-residual local time at the checkpoint.
    pub half_local_time_tanaka: EstimateCi,
    /// Half the expected reflection-estimator local time.
    pub half_local_time_skorokhod: EstimateCi,
    /// Paired difference `gap sample - half local-time sample`; the
    /// identity predicts mean zero.
    pub identity_difference: EstimateCi,
    /// `z`-score of the gap against zero.
    pub gap_z: f64,
    /// `z`-score of the local-time mean against zero.
    pub local_time_z: f64,
    /// `z`-score of the paired difference against zero.
    pub identity_z: f64,
    /// Whether zero lies inside the paired-difference interval.
    pub identity_within_ci: bool,
    /// Fraction of paths on which the switched exponential visibly departs
    /// from the pairwise maximum (beyond accumulated rounding).
    pub switch_discrepancy_fraction: f64,
    pub checkpoint: f64,
    pub paths: u64,
    pub level: f64,
}

/// Per-path samples behind [`max_closure_gap`]; exposed for tests and
/// refinement studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSample {
    /// `max(Z1, Z2) - 1` at the checkpoint.
    pub max_minus_one: f64,
    /// Tanaka-residual local time at the checkpoint.
    pub local_time_tanaka: f64,
    /// Reflection-estimator local time at the checkpoint.
    pub local_time_skorokhod: f64,
    /// Largest pathwise distance between the switched exponential and the
    /// node-wise maximum up to the checkpoint.
    pub switch_discrepancy: f64,
}

/// Compute one path's gap sample on a prepared grid.
///
/// # Errors
/// Propagates kernel evaluation and exponential failures.
pub fn gap_sample(
    path: &BrownianPath<'_>,
    barrier: f64,
    nu1: &DeflatorSpec,
    nu2: &DeflatorSpec,
    bridge: bool,
    checkpoint_node: usize,
) -> Result<GapSample> {
    let grid = path.grid();
    let passage = first_passage(path, barrier, bridge)?;
    let k1 = nu1.kernel_per_step(grid, passage.as_ref())?;
    let k2 = nu2.kernel_per_step(grid, passage.as_ref())?;
    let z1 = stochastic_exponential(path, &k1)?;
    let z2 = stochastic_exponential(path, &k2)?;
    let local = tanaka_local_time(&z1, &z2)?;
    let nu3 = switch_process(nu1, nu2, &z1, &z2, grid, passage.as_ref())?;
    let k3 = nu3.kernel_per_step(grid, passage.as_ref())?;
    let z3 = stochastic_exponential(path, &k3)?;
    let mut discrepancy = 0.0f64;
    let mut scale = 1.0f64;
    for i in 0..=checkpoint_node {
        let m = z1.value(i).max(z2.value(i));
        discrepancy = discrepancy.max((z3.value(i) - m).abs());
        scale = scale.max(m).max(z3.value(i));
    }
    // Distances below accumulated-rounding size do not count as departures.
    let rounding = 4.0 * (checkpoint_node as f64 + 1.0) * f64::EPSILON * scale;
    Ok(GapSample {
        max_minus_one: z1.value(checkpoint_node).max(z2.value(checkpoint_node)) - 1.0,
        local_time_tanaka: local.tanaka_residual()[checkpoint_node],
        local_time_skorokhod: local.skorokhod()[checkpoint_node],
        switch_discrepancy: if discrepancy > rounding { discrepancy } else { 0.0 },
    })
}

impl PassageResult {
    /// Internal helper so call sites can pass `&PassageResult` uniformly.
    fn as_ref(&self) -> &PassageResult {
        self
    }
}

/// Estimate both sides of `E[max(Z1, Z2)(t)] - 1 = E[L(t)] / 2` on a fresh
/// ensemble, together with the switch-departure diagnostic.
///
/// # Errors
/// `InvalidArgument` for malformed configuration (the checkpoint must be a
/// grid node, paths at least 2); simulation errors propagate.
pub fn max_closure_gap(
    nu1: &DeflatorSpec,
    nu2: &DeflatorSpec,
    config: &GapConfig,
) -> Result<GapReport> {
    if config.paths < 2 {
        return Err(Error::invalid("max_closure_gap: need at least 2 paths"));
    }
    if config.antithetic && config.paths % 2 != 0 {
        return Err(Error::invalid(
            "max_closure_gap: antithetic pairing needs an even path count",
        ));
    }
    let grid = make_time_grid(config.horizon, config.steps, None)?;
    let checkpoint_node = grid
        .nodes()
        .iter()
        .position(|&t| (t - config.checkpoint).abs() <= 1e-12 * config.horizon.max(1.0))
        .ok_or_else(|| {
            Error::invalid(format!(
                "max_closure_gap: checkpoint {} is not a grid node",
                config.checkpoint
            ))
        })?;
    let barrier = config.barrier;
    let bridge = config.bridge;
    let seed = config.seed;
    let antithetic = config.antithetic;
    let samples = ensemble::map_paths(config.paths, |index| {
        let rng = if antithetic {
            if index % 2 == 1 {
                PathRng::mirrored(seed, index / 2)
            } else {
                PathRng::new(seed, index / 2)
            }
        } else {
            PathRng::new(seed, index)
        };
        let path = sample_brownian_rng(&grid, 1, rng)?;
        gap_sample(&path, barrier, nu1, nu2, bridge, checkpoint_node)
    })?;

    let column = |f: &dyn Fn(&GapSample) -> f64| -> Result<Vec<f64>> {
        let raw: Vec<f64> = samples.iter().map(f).collect();
        if antithetic {
            stats::pair_average(&raw)
        } else {
            Ok(raw)
        }
    };
    let gaps = column(&|s| s.max_minus_one)?;
    let half_tr = column(&|s| 0.5 * s.local_time_tanaka)?;
    let half_sk = column(&|s| 0.5 * s.local_time_skorokhod)?;
    let diffs: Vec<f64> = gaps.iter().zip(&half_tr).map(|(g, l)| g - l).collect();
    let departures = samples
        .iter()
        .filter(|s| s.switch_discrepancy > 0.0)
        .count();

    let gap = stats::mc_estimate(&gaps, config.level)?;
    let half_local_time_tanaka = stats::mc_estimate(&half_tr, config.level)?;
    let half_local_time_skorokhod = stats::mc_estimate(&half_sk, config.level)?;
    let identity_difference = stats::mc_estimate(&diffs, config.level)?;
    let z_of = |e: &EstimateCi| {
        if e.std_error > 0.0 {
            e.mean / e.std_error
        } else {
            0.0
        }
    };
    Ok(GapReport {
        gap_z: z_of(&gap),
        local_time_z: z_of(&half_local_time_tanaka),
        identity_z: z_of(&identity_difference),
        identity_within_ci: identity_difference.mean.abs() <= identity_difference.half_width,
        switch_discrepancy_fraction: departures as f64 / samples.len() as f64,
        gap,
        half_local_time_tanaka,
        half_local_time_skorokhod,
        identity_difference,
        checkpoint: config.checkpoint,
        paths: config.paths,
        level: config.level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BarrierBesselMarket, Scheme};
    use crate::paths::make_time_grid;

    fn grid_and_path(
        grid: &TimeGrid,
        increments: Vec<f64>,
    ) -> (BrownianPath<'_>, PassageResult) {
        let p = BrownianPath::from_increments(grid, 1, increments, 9, 0).unwrap();
        let pass = first_passage(&p, 1.0, false).unwrap();
        (p, pass)
    }

    #[test]
    fn tag_parsing_round_trips() {
        assert_eq!(DeflatorSpec::parse_tag("zero").unwrap(), DeflatorSpec::Zero);
        assert_eq!(
            DeflatorSpec::parse_tag("nu_n:4").unwrap(),
            DeflatorSpec::NuN { strength: 4.0 }
        );
        assert_eq!(
            DeflatorSpec::parse_tag(" nu_n:0.5 ").unwrap().label(),
            "nu_n:0.5"
        );
        assert!(DeflatorSpec::parse_tag("nu_n:x").is_err());
        assert!(DeflatorSpec::parse_tag("nu_n:-1").is_err());
        assert!(DeflatorSpec::parse_tag("theta").is_err());
        assert_eq!(DeflatorSpec::Zero.label(), "zero");
    }

    #[test]
    fn nu_n_kernel_stops_at_the_crossing_node() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let (_, pass) = grid_and_path(&g, vec![0.5, 0.7, 0.0, 0.0]);
        let k = make_nu_n(3.0)
            .unwrap()
            .kernel_per_step(&g, &pass)
            .unwrap();
        assert_eq!(k, vec![3.0, 3.0, 0.0, 0.0]);
        // No crossing: the kernel runs over the whole horizon.
        let (_, none) = grid_and_path(&g, vec![0.0; 4]);
        let k = make_nu_n(3.0)
            .unwrap()
            .kernel_per_step(&g, &none)
            .unwrap();
        assert_eq!(k, vec![3.0; 4]);
        assert!(make_nu_n(-1.0).is_err());
        assert!(make_nu_n(f64::NAN).is_err());
    }

    #[test]
    fn zero_integrand_gives_the_constant_exponential() {
        let g = make_time_grid(1.0, 8, None).unwrap();
        let (p, _) = grid_and_path(&g, vec![0.3; 8]);
        let z = stochastic_exponential(&p, &[0.0; 8]).unwrap();
        assert_eq!(z.values(), &[1.0; 9][..]);
        assert_eq!(z.log_values(), &[0.0; 9][..]);
    }

    #[test]
    fn constant_integrand_matches_the_closed_form() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let incs = vec![0.4, -0.2, 0.1, 0.3];
        let (p, _) = grid_and_path(&g, incs.clone());
        let c = 1.7;
        let z = stochastic_exponential(&p, &[c; 4]).unwrap();
        let mut w = 0.0;
        for (i, inc) in incs.iter().enumerate() {
            w += inc;
            let t = g.node(i + 1);
            let want = crate::oracles::exp(-c * w - 0.5 * c * c * t);
            assert!(
                (z.value(i + 1) - want).abs() <= 1e-15 * want,
                "node {}: {} vs {want}",
                i + 1,
                z.value(i + 1)
            );
            assert!(z.value(i + 1) > 0.0);
        }
    }

    #[test]
    fn crossing_at_the_barrier_hits_the_closed_form_value() {
        // Strength 2, crossing at t = 0.5 with the driver exactly at the
        // barrier 1: the stopped exponential equals e^{-3} from then on.
        let g = make_time_grid(1.0, 4, None).unwrap();
        let (p, pass) = grid_and_path(&g, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(pass.tau, 0.5);
        let k = make_nu_n(2.0)
            .unwrap()
            .kernel_per_step(&g, &pass)
            .unwrap();
        let z = stochastic_exponential(&p, &k).unwrap();
        let want = 0.04978706836786394; // e^{-3}
        assert!((z.value(2) - want).abs() < 1e-15);
        assert_eq!(z.value(3), z.value(2));
        assert_eq!(z.terminal(), z.value(2));
    }

    #[test]
    fn exponential_validates_input() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let (p, _) = grid_and_path(&g, vec![0.1; 4]);
        assert!(stochastic_exponential(&p, &[0.0; 3]).is_err());
        let err = stochastic_exponential(&p, &[1.0, f64::NAN, 0.0, 0.0]).unwrap_err();
        match err {
            Error::NumericFailure { ref location, .. } => assert!(location.contains('1')),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn theta_follows_the_inverse_price_after_crossing() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let p = BrownianPath::from_increments(&g, 1, vec![1.2, 0.3, -0.1, 0.2], 9, 0).unwrap();
        let market = BarrierBesselMarket::new(1.0).unwrap();
        let mp = market.simulate(&p, Scheme::Euler, false).unwrap();
        let theta = theta_per_step(&mp);
        assert_eq!(theta[0], 0.0);
        assert_eq!(theta[1], 1.0 / mp.price(1));
        assert_eq!(theta[2], 1.0 / mp.price(2));
        let nu = make_nu_n(5.0)
            .unwrap()
            .kernel_per_step(&g, &mp.passage())
            .unwrap();
        // Kernel and exposure never overlap, so theta + nu is well defined
        // and the membership check passes.
        let combined = combined_integrand(&theta, &nu).unwrap();
        assert_eq!(combined, vec![5.0, theta[1], theta[2], theta[3]]);
        check_kernel_membership(&nu, &mp.vol_per_step(), &g, DEFAULT_KERNEL_CEILING).unwrap();
        assert!(combined_integrand(&theta, &nu[..2]).is_err());
    }

    #[test]
    fn membership_check_rejects_overlapping_kernels() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let vol = vec![0.0, 1.0, 1.0, 1.0];
        let bad = vec![0.0, 0.5, 0.0, 0.0];
        assert!(check_kernel_membership(&bad, &vol, &g, 1e6).is_err());
        let fine = vec![2.0, 0.0, 0.0, 0.0];
        check_kernel_membership(&fine, &vol, &g, 1e6).unwrap();
        // Quadratic-integral ceiling.
        assert!(check_kernel_membership(&fine, &vol, &g, 0.5).is_err());
        let q = kernel_quadratic_integral(&fine, &g);
        assert!((q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn switch_prefers_the_first_kernel_on_ties() {
        let g = make_time_grid(1.0, 4, None).unwrap();
        let (p, pass) = grid_and_path(&g, vec![0.2, -0.1, 0.3, 0.1]);
        let nu1 = make_nu_n(1.0).unwrap();
        let nu2 = DeflatorSpec::Zero;
        let k1 = nu1.kernel_per_step(&g, &pass).unwrap();
        let z1 = stochastic_exponential(&p, &k1).unwrap();
        let z2 = stochastic_exponential(&p, &[0.0; 4]).unwrap();
        let nu3 = switch_process(&nu1, &nu2, &z1, &z2, &g, &pass).unwrap();
        let k3 = nu3.kernel_per_step(&g, &pass).unwrap();
        // At node 0 both are 1 (tie): the first kernel wins the first step.
        assert_eq!(k3[0], k1[0]);
        for j in 1..4 {
            let want = if z1.value(j) >= z2.value(j) {
                k1[j]
            } else {
                0.0
            };
            assert_eq!(k3[j], want);
        }
        assert!(nu3.label().starts_with("switch("));
    }

    #[test]
    fn switch_of_identical_kernels_is_identical() {
        let g = make_time_grid(1.0, 6, None).unwrap();
        let (p, pass) = grid_and_path(&g, vec![0.3, -0.2, 0.4, 0.1, -0.3, 0.2]);
        let nu = make_nu_n(2.0).unwrap();
        let k = nu.kernel_per_step(&g, &pass).unwrap();
        let z = stochastic_exponential(&p, &k).unwrap();
        let nu3 = switch_process(&nu, &nu, &z, &z, &g, &pass).unwrap();
        assert_eq!(nu3.kernel_per_step(&g, &pass).unwrap(), k);
    }

    #[test]
    fn local_time_vanishes_for_equal_trajectories() {
        let g = make_time_grid(1.0, 8, None).unwrap();
        let (p, pass) = grid_and_path(&g, vec![0.25; 8]);
        let k = make_nu_n(3.0)
            .unwrap()
            .kernel_per_step(&g, &pass)
            .unwrap();
        let z = stochastic_exponential(&p, &k).unwrap();
        let lt = tanaka_local_time(&z, &z).unwrap();
        assert!(lt.n_values().iter().all(|&x| x == 0.0));
        assert!(lt.skorokhod().iter().all(|&x| x == 0.0));
        assert!(lt.tanaka_residual().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn local_time_estimators_are_nondecreasing_and_consistent() {
        let g = make_time_grid(1.0, 64, None).unwrap();
        for path_index in 0..50 {
            let p = crate::paths::sample_brownian(&g, 1, 20_202, path_index).unwrap();
            let pass = first_passage(&p, 1.0, false).unwrap();
            let k1 = make_nu_n(4.0)
                .unwrap()
                .kernel_per_step(&g, &pass)
                .unwrap();
            let z1 = stochastic_exponential(&p, &k1).unwrap();
            let z2 = stochastic_exponential(&p, &[0.0; 64]).unwrap();
            let lt = tanaka_local_time(&z1, &z2).unwrap();
            assert_eq!(lt.skorokhod()[0], 0.0);
            for i in 1..=64 {
                assert!(lt.skorokhod()[i] >= lt.skorokhod()[i - 1]);
                assert!(lt.tanaka_residual()[i] >= lt.tanaka_residual()[i - 1]);
                // The reflection estimator is the minimal nonnegative
                // compensator, so it never exceeds the residual one by
                // construction of |D| >= 0... the weak inequality:
                assert!(lt.skorokhod()[i] >= 0.0 && lt.tanaka_residual()[i] >= 0.0);
            }
            // Reflection identity holds exactly at every node.
            let mut running = 0.0f64;
            for i in 0..=64 {
                running = running.max(-lt.n_values()[i]);
                assert_eq!(lt.skorokhod()[i], running.max(0.0));
            }
        }
    }

    #[test]
    fn gap_report_flags_a_real_gap_and_honours_the_identity() {
        let nu1 = make_nu_n(2.0).unwrap();
        let nu2 = DeflatorSpec::Zero;
        let config = GapConfig {
            barrier: 1.0,
            horizon: 1.0,
            steps: 64,
            paths: 4_000,
            seed: 7_171,
            level: 0.99,
            bridge: true,
            antithetic: false,
            checkpoint: 1.0,
        };
        let report = max_closure_gap(&nu1, &nu2, &config).unwrap();
        assert!(report.gap_z >= 3.0, "gap z = {}", report.gap_z);
        assert!(report.local_time_z >= 3.0);
        assert!(
            report.identity_within_ci,
            "identity difference {} +- {}",
            report.identity_difference.mean, report.identity_difference.half_width
        );
        assert!(report.switch_discrepancy_fraction > 0.0);
        assert!(report.gap.mean > 0.0);
    }

    #[test]
    fn gap_report_sees_nothing_for_identical_kernels() {
        let nu = make_nu_n(1.0).unwrap();
        let config = GapConfig {
            barrier: 1.0,
            horizon: 1.0,
            steps: 32,
            paths: 500,
            seed: 42,
            level: 0.99,
            bridge: false,
            antithetic: false,
            checkpoint: 1.0,
        };
        let report = max_closure_gap(&nu, &nu.clone(), &config).unwrap();
        assert_eq!(report.half_local_time_tanaka.mean, 0.0);
        assert_eq!(report.switch_discrepancy_fraction, 0.0);
        assert!(report.gap_z.abs() < 3.0);
        assert_eq!(report.identity_difference.mean, report.gap.mean);
    }

    #[test]
    fn gap_config_is_validated() {
        let nu = DeflatorSpec::Zero;
        let mut config = GapConfig {
            barrier: 1.0,
            horizon: 1.0,
            steps: 8,
            paths: 100,
            seed: 1,
            level: 0.99,
            bridge: false,
            antithetic: false,
            checkpoint: 0.3, // not a node of an 8-step unit grid
        };
        assert!(max_closure_gap(&nu, &nu.clone(), &config).is_err());
        config.checkpoint = 0.25;
        assert!(max_closure_gap(&nu, &nu.clone(), &config).is_ok());
        config.paths = 1;
        assert!(max_closure_gap(&nu, &nu.clone(), &config).is_err());
        config.paths = 101;
        config.antithetic = true;
        assert!(max_closure_gap(&nu, &nu.clone(), &config).is_err());
    }

    #[test]
    fn antithetic_gap_run_agrees_with_the_plain_one() {
        let nu1 = make_nu_n(2.0).unwrap();
        let nu2 = DeflatorSpec::Zero;
        let base = GapConfig {
            barrier: 1.0,
            horizon: 1.0,
            steps: 32,
            paths: 2_000,
            seed: 99,
            level: 0.99,
            bridge: false,
            antithetic: false,
            checkpoint: 1.0,
        };
        let plain = max_closure_gap(&nu1, &nu2, &base).unwrap();
        let anti = max_closure_gap(
            &nu1,
            &nu2,
            &GapConfig {
                antithetic: true,
                ..base
            },
        )
        .unwrap();
        // Same order of magnitude, overlapping intervals.
        assert!((plain.gap.mean - anti.gap.mean).abs() < plain.gap.half_width + anti.gap.half_width);
        assert_eq!(anti.gap.n, 1_000);
    }
}

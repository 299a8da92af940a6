//! Market models: the barrier-crossing Bessel market, a generic Ito model,
//! the market price of risk, and wealth dynamics of trading strategies.
//!
//! The central model is [`BarrierBesselMarket`]: a single asset under a zero
//! interest rate whose price stays pinned at 1 until the driving Brownian
//! motion first reaches a barrier `a > 0`, and from that moment follows a
//! three-dimensional Bessel process started at 1 (`dS = dt/S + dW`).  Its
//! price of risk is `1(crossed) / S`, which is bounded on every path yet
//! produces deflators that are strict supermartingales.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{first_passage, BrownianPath, PassageResult};
use crate::rng::{PathRng, Stream};

/// Positivity floor for the Euler scheme: a step that would take the price
/// at or below zero is clamped here and counted.
pub const POSITIVITY_FLOOR: f64 = 1e-8;

/// Fraction of post-crossing steps that may hit the positivity floor before
/// the simulation refuses to report a result.
pub const STABILITY_FLOOR_FRACTION: f64 = 0.01;

/// Relative threshold under which a singular value is treated as zero.
pub const SINGULARITY_TOLERANCE: f64 = 1e-10;

/// Discretisation scheme for the post-crossing price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Sample the Bessel transition exactly as the radius of a
    /// three-dimensional Gaussian displacement (auxiliary substream).  The
    /// post-crossing law is exact at every node, but the price is no longer
    /// a pathwise function of the driving increments.
    Exact,
    /// Euler steps `S += dt / S + dW` sharing the path's own increments, so
    /// pathwise identities between the price and deflators built from the
    /// same increments hold on the grid.
    Euler,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Exact => "exact",
            Scheme::Euler => "euler",
        }
    }
}

/// Single-asset barrier market: price 1 until the driving Brownian motion
/// reaches `barrier`, then a Bessel(3) process started at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierBesselMarket {
    barrier: f64,
}

impl BarrierBesselMarket {
    /// # Errors
    /// `InvalidArgument` unless the barrier is positive and finite.
    pub fn new(barrier: f64) -> Result<Self> {
        if !(barrier > 0.0 && barrier.is_finite()) {
            return Err(Error::invalid(format!(
                "BarrierBesselMarket: barrier {barrier} must be positive and finite"
            )));
        }
        Ok(BarrierBesselMarket { barrier })
    }

    pub fn barrier(&self) -> f64 {
        self.barrier
    }

    /// Market price of risk at a given state: `1 / price` once the barrier
    /// has been crossed, zero before (the price has no exposure yet).
    pub fn price_of_risk(&self, price: f64, crossed: bool) -> f64 {
        if crossed {
            1.0 / price
        } else {
            0.0
        }
    }

    /// Simulate the price on the path's grid.
    ///
    /// Crossing detection follows `bridge` (see
    /// [`first_passage`](crate::paths::first_passage)).  The exact scheme
    /// starts the Bessel leg at the detected crossing time, covering the
    /// remainder of the crossing step with one exact transition; the Euler
    /// scheme starts at the first node at or after the crossing.
    ///
    /// # Errors
    /// `InvalidArgument` for a non-scalar path; `Stability` when more than
    /// [`STABILITY_FLOOR_FRACTION`] of the post-crossing Euler steps hit the
    /// positivity floor; `NumericFailure` if a price stops being finite.
    pub fn simulate(
        &self,
        path: &BrownianPath<'_>,
        scheme: Scheme,
        bridge: bool,
    ) -> Result<MarketPath> {
        if path.dim() != 1 {
            return Err(Error::invalid(format!(
                "BarrierBesselMarket::simulate: path must be one-dimensional, got {}",
                path.dim()
            )));
        }
        let grid = path.grid();
        let passage = first_passage(path, self.barrier, bridge)?;
        let n_nodes = grid.nodes().len();
        let mut prices = vec![1.0; n_nodes];
        if !passage.hit {
            return Ok(MarketPath {
                prices,
                passage,
                crossing_node: None,
                floored_steps: 0,
            });
        }
        let m = crate::paths::crossing_node(grid, &passage).expect("passage hit");
        let mut floored = 0usize;
        let mut first_floor = None;
        match scheme {
            Scheme::Exact => {
                let rng = path.rng();
                let mut s = 1.0;
                if m > 0 {
                    let dt0 = grid.node(m) - passage.tau;
                    if dt0 > 0.0 {
                        s = bessel3_step(s, dt0, &rng, 3 * (m - 1) as u64);
                    }
                }
                prices[m] = s;
                for j in m..grid.num_steps() {
                    s = bessel3_step(s, grid.step(j), &rng, 3 * j as u64);
                    prices[j + 1] = s;
                }
            }
            Scheme::Euler => {
                let mut s = 1.0;
                for j in m..grid.num_steps() {
                    let mut next = s + grid.step(j) / s + path.increment_1d(j);
                    if next <= POSITIVITY_FLOOR {
                        next = POSITIVITY_FLOOR;
                        floored += 1;
                        first_floor.get_or_insert(j + 1);
                    }
                    if !next.is_finite() {
                        return Err(Error::NumericFailure {
                            location: format!("node {}", j + 1),
                            what: format!("price became {next}"),
                        });
                    }
                    s = next;
                    prices[j + 1] = s;
                }
            }
        }
        let post_steps = grid.num_steps() - m;
        if post_steps > 0 && floored as f64 > STABILITY_FLOOR_FRACTION * post_steps as f64 {
            return Err(Error::Stability {
                node: first_floor.unwrap_or(m),
                what: format!(
                    "{floored} of {post_steps} post-crossing steps hit the positivity floor {POSITIVITY_FLOOR:e}"
                ),
                advice: "halve the step size (or switch to the exact scheme), which keeps the \
                         drift term dt/S from overshooting near zero"
                    .to_string(),
            });
        }
        Ok(MarketPath {
            prices,
            passage,
            crossing_node: Some(m),
            floored_steps: floored,
        })
    }
}

/// One simulated price path of the barrier market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    prices: Vec<f64>,
    passage: PassageResult,
    crossing_node: Option<usize>,
    floored_steps: usize,
}

impl MarketPath {
    /// Price at every grid node (index-aligned with the grid).
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn price(&self, node: usize) -> f64 {
        self.prices[node]
    }

    pub fn terminal(&self) -> f64 {
        *self.prices.last().unwrap()
    }

    /// The passage result that set the crossing time.
    pub fn passage(&self) -> PassageResult {
        self.passage
    }

    /// First node at or after the crossing time; `None` when the barrier
    /// was never reached.
    pub fn crossing_node(&self) -> Option<usize> {
        self.crossing_node
    }

    /// Whether the barrier had been crossed strictly before node `node`
    /// (prices at or after the crossing node move, earlier ones are pinned).
    pub fn crossed_by(&self, node: usize) -> bool {
        self.crossing_node.is_some_and(|m| node >= m)
    }

    /// Euler steps clamped at the positivity floor (always zero for the
    /// exact scheme).
    pub fn floored_steps(&self) -> usize {
        self.floored_steps
    }

    /// Absolute volatility held over each step (left-node evaluation): zero
    /// while the price is pinned, one on the Bessel leg.
    pub fn vol_per_step(&self) -> Vec<f64> {
        (0..self.prices.len() - 1)
            .map(|j| if self.crossed_by(j) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Exact Bessel(3) transition: the radius after a Gaussian displacement of
/// a point at distance `radius` from the origin.
fn bessel3_step(radius: f64, dt: f64, rng: &PathRng, draw_base: u64) -> f64 {
    let sd = dt.sqrt();
    let g1 = radius + sd * rng.normal(Stream::Bessel, draw_base);
    let g2 = sd * rng.normal(Stream::Bessel, draw_base + 1);
    let g3 = sd * rng.normal(Stream::Bessel, draw_base + 2);
    (g1 * g1 + g2 * g2 + g3 * g3).sqrt()
}

/// Draw the time-`u` value of a Bessel(3) process started at `x0` in one
/// exact step, consuming draws `draw_base..draw_base + 3` of the auxiliary
/// substream.
///
/// # Errors
/// `InvalidArgument` unless `x0 > 0` and `u >= 0` (both finite).
pub fn sample_bessel3_terminal(x0: f64, u: f64, rng: &PathRng, draw_base: u64) -> Result<f64> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::invalid(format!(
            "sample_bessel3_terminal: start {x0} must be positive and finite"
        )));
    }
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::invalid(format!(
            "sample_bessel3_terminal: time {u} must be finite and nonnegative"
        )));
    }
    Ok(bessel3_step(x0, u, rng, draw_base))
}

/// State-dependent coefficient map `(t, prices) -> values`, shared across
/// threads by the ensemble runner.
pub type CoefficientFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// A generic multi-asset Ito model with state-dependent drift and
/// volatility, stepped with the Euler scheme by [`simulate_ito`].
#[derive(Clone)]
pub struct ItoModel {
    /// Number of assets.
    pub dim: usize,
    /// Number of driving Brownian factors.
    pub factors: usize,
    /// Instantaneous interest rate (constant).
    pub rate: f64,
    /// Initial prices, one per asset.
    pub initial: Vec<f64>,
    /// Absolute drift `(t, prices) -> one value per asset`.
    pub drift: CoefficientFn,
    /// Absolute volatility `(t, prices) -> row-major dim x factors matrix`.
    pub vol: CoefficientFn,
}

impl std::fmt::Debug for ItoModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ItoModel")
            .field("dim", &self.dim)
            .field("factors", &self.factors)
            .field("rate", &self.rate)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

/// Euler-step a generic Ito model along a path; returns node-major prices
/// (`out[node][asset]`).
///
/// # Errors
/// `InvalidArgument` when dimensions disagree (path vs factors, initial vs
/// dim, rule output lengths); `NumericFailure` when a price stops being
/// finite.
pub fn simulate_ito(model: &ItoModel, path: &BrownianPath<'_>) -> Result<Vec<Vec<f64>>> {
    if model.dim == 0 || model.factors == 0 {
        return Err(Error::invalid(
            "simulate_ito: dim and factors must be positive",
        ));
    }
    if path.dim() != model.factors {
        return Err(Error::invalid(format!(
            "simulate_ito: path dimension {} does not match factor count {}",
            path.dim(),
            model.factors
        )));
    }
    if model.initial.len() != model.dim {
        return Err(Error::invalid(format!(
            "simulate_ito: {} initial prices for {} assets",
            model.initial.len(),
            model.dim
        )));
    }
    let grid = path.grid();
    let mut out = Vec::with_capacity(grid.nodes().len());
    out.push(model.initial.clone());
    let mut state = model.initial.clone();
    for j in 0..grid.num_steps() {
        let t = grid.node(j);
        let dt = grid.step(j);
        let mu = (model.drift)(t, &state);
        let sig = (model.vol)(t, &state);
        if mu.len() != model.dim || sig.len() != model.dim * model.factors {
            return Err(Error::invalid(format!(
                "simulate_ito: rule output sizes ({}, {}) do not match ({}, {})",
                mu.len(),
                sig.len(),
                model.dim,
                model.dim * model.factors
            )));
        }
        let dw = path.increment(j);
        for i in 0..model.dim {
            let diffusion: f64 = (0..model.factors)
                .map(|k| sig[i * model.factors + k] * dw[k])
                .sum();
            state[i] += mu[i] * dt + diffusion;
            if !state[i].is_finite() {
                return Err(Error::NumericFailure {
                    location: format!("node {}, asset {i}", j + 1),
                    what: format!("price became {}", state[i]),
                });
            }
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Market price of risk: the minimum-norm solution `theta` of
/// `vol * theta = drift - rate`, one drift entry per asset and `vol` given
/// row-major as assets x factors.
///
/// Rank deficiency alone is not an error - a consistent system still has a
/// (non-unique) price of risk and the minimum-norm one is returned - but an
/// excess-drift direction outside the volatility's range means no price of
/// risk exists.
///
/// # Errors
/// `InvalidArgument` for shape mismatches; `SingularMatrix` when the system
/// is inconsistent (reporting the smallest singular value against the
/// threshold that zeroed it).
pub fn market_price_of_risk(
    drift: &[f64],
    rate: f64,
    vol_row_major: &[f64],
    factors: usize,
) -> Result<Vec<f64>> {
    let assets = drift.len();
    if assets == 0 || factors == 0 {
        return Err(Error::invalid(
            "market_price_of_risk: need at least one asset and one factor",
        ));
    }
    if vol_row_major.len() != assets * factors {
        return Err(Error::invalid(format!(
            "market_price_of_risk: volatility has {} entries, expected {} x {}",
            vol_row_major.len(),
            assets,
            factors
        )));
    }
    let sigma = DMatrix::from_row_slice(assets, factors, vol_row_major);
    let excess = DVector::from_iterator(assets, drift.iter().map(|m| m - rate));
    let svd = sigma.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let eps = SINGULARITY_TOLERANCE * s_max.max(1.0);
    let theta = svd
        .solve(&excess, eps)
        .map_err(Error::invalid)?;
    let residual = (&sigma * &theta - &excess).norm();
    if residual > 1e-8 * (1.0 + excess.norm()) {
        return Err(Error::SingularMatrix {
            smallest: s_min,
            tolerance: eps,
        });
    }
    Ok(theta.iter().copied().collect())
}

/// Wealth of a self-financing strategy along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath {
    values: Vec<f64>,
    min_value: f64,
}

impl WealthPath {
    /// Wealth at every node, starting from `values()[0] == initial`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Running minimum over all nodes.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }
}

/// Integrate the self-financing wealth equation at zero interest:
/// `V_{j+1} = V_j + units_j * (S_{j+1} - S_j)` with `units_j` held over
/// step `j`.
///
/// # Errors
/// `InvalidArgument` unless `units` has exactly one entry per step;
/// `NumericFailure` if the wealth stops being finite.
pub fn simulate_wealth(initial: f64, prices: &[f64], units: &[f64]) -> Result<WealthPath> {
    if prices.len() < 2 || units.len() != prices.len() - 1 {
        return Err(Error::invalid(format!(
            "simulate_wealth: {} unit entries for {} price nodes",
            units.len(),
            prices.len()
        )));
    }
    let mut values = Vec::with_capacity(prices.len());
    let mut v = initial;
    values.push(v);
    let mut min_value = v;
    for (j, u) in units.iter().enumerate() {
        v += u * (prices[j + 1] - prices[j]);
        if !v.is_finite() {
            return Err(Error::NumericFailure {
                location: format!("node {}", j + 1),
                what: format!("wealth became {v}"),
            });
        }
        min_value = min_value.min(v);
        values.push(v);
    }
    Ok(WealthPath { values, min_value })
}

/// Outcome of an admissibility check: whether the wealth stayed at or above
/// the stated credit line at every node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityCheck {
    pub admissible: bool,
    pub min_value: f64,
    pub lower_bound: f64,
}

/// Check that a wealth path never fell below `lower_bound`.
pub fn check_admissibility(wealth: &WealthPath, lower_bound: f64) -> AdmissibilityCheck {
    AdmissibilityCheck {
        admissible: wealth.min_value >= lower_bound,
        min_value: wealth.min_value,
        lower_bound,
    }
}

/// Full admissibility report for a strategy held in `units` of the asset:
/// the credit-line check plus grid approximations of the two pathwise
/// integrals that must stay finite, `Int |units * drift| dt` and
/// `Int (units * vol)^2 dt`.
///
/// The checks only see grid nodes; excursions between nodes are
/// unobserved, and the report says so.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub min_wealth: f64,
    pub lower_bound: f64,
    pub bounded_below: bool,
    /// Grid value of `Int |units * drift| dt`.
    pub drift_integral: f64,
    /// Grid value of `Int (units * vol)^2 dt`.
    pub vol_square_integral: f64,
    /// Both integrals must stay below this ceiling to count as finite.
    pub ceiling: f64,
    pub integrals_finite: bool,
    /// All three checks passed.
    pub admissible: bool,
    pub note: String,
}

/// Evaluate the three admissibility conditions of a completed wealth
/// simulation: wealth bounded below by `lower_bound` at every node, and
/// both strategy integrals below `ceiling`.
///
/// # Errors
/// `InvalidArgument` when `units`, `drift_per_step` or `vol_per_step` do
/// not match the grid or the wealth path.
pub fn admissibility_report(
    wealth: &WealthPath,
    units: &[f64],
    drift_per_step: &[f64],
    vol_per_step: &[f64],
    grid: &crate::paths::TimeGrid,
    lower_bound: f64,
    ceiling: f64,
) -> Result<AdmissibilityReport> {
    let steps = grid.num_steps();
    if units.len() != steps || drift_per_step.len() != steps || vol_per_step.len() != steps {
        return Err(Error::invalid(format!(
            "admissibility_report: units {} / drift {} / vol {} values for {} steps",
            units.len(),
            drift_per_step.len(),
            vol_per_step.len(),
            steps
        )));
    }
    if wealth.values().len() != steps + 1 {
        return Err(Error::invalid(format!(
            "admissibility_report: wealth path with {} nodes on a grid with {}",
            wealth.values().len(),
            steps + 1
        )));
    }
    let drift_terms: Vec<f64> = (0..steps)
        .map(|j| (units[j] * drift_per_step[j]).abs() * grid.step(j))
        .collect();
    let vol_terms: Vec<f64> = (0..steps)
        .map(|j| {
            let exposure = units[j] * vol_per_step[j];
            exposure * exposure * grid.step(j)
        })
        .collect();
    let drift_integral = crate::stats::compensated_sum(&drift_terms);
    let vol_square_integral = crate::stats::compensated_sum(&vol_terms);
    let bounded_below = wealth.min_value() >= lower_bound;
    let integrals_finite = drift_integral.is_finite()
        && vol_square_integral.is_finite()
        && drift_integral <= ceiling
        && vol_square_integral <= ceiling;
    Ok(AdmissibilityReport {
        min_wealth: wealth.min_value(),
        lower_bound,
        bounded_below,
        drift_integral,
        vol_square_integral,
        ceiling,
        integrals_finite,
        admissible: bounded_below && integrals_finite,
        note: "bounds verified at grid nodes only; excursions between nodes are unobserved"
            .to_string(),
    })
}

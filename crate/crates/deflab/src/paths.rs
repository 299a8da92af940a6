//! Time grids, Brownian paths and first-passage detection.
//!
//! A [`TimeGrid`] fixes the discretisation once and is shared by every
//! consumer of a path, so node indices mean the same thing everywhere.
//! [`BrownianPath`] stores per-step increments together with its seed
//! provenance; reconstruction of node values is a plain running sum.
//! [`first_passage`] detects barrier crossings either at grid nodes only or
//! with the exact Brownian-bridge correction for crossings between nodes.

use crate::error::{Error, Result};
use crate::oracles;
use crate::rng::{PathRng, Stream};

/// How the steps of a grid were laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum StepRule {
    /// `steps` equal steps over the horizon.
    Uniform { steps: usize },
    /// Uniform base grid with every step touching `window` subdivided
    /// `factor` times.
    Refined {
        base_steps: usize,
        window: (f64, f64),
        factor: usize,
    },
}

/// Optional local refinement for [`make_time_grid`]: steps intersecting the
/// window (for example a barrier-crossing region) are subdivided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub window: (f64, f64),
    pub factor: usize,
}

/// A strictly increasing set of time nodes from 0 to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    max_step: f64,
    rule: StepRule,
}

impl TimeGrid {
    /// All nodes, `nodes()[0] == 0` and `*nodes().last() == horizon`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of steps (one less than the number of nodes).
    pub fn num_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Node value at `index`.
    pub fn node(&self, index: usize) -> f64 {
        self.nodes[index]
    }

    /// Length of step `index`, i.e. `nodes[index + 1] - nodes[index]`.
    pub fn step(&self, index: usize) -> f64 {
        self.nodes[index + 1] - self.nodes[index]
    }

    /// The horizon (final node).
    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Largest step length the construction promised.
    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// The construction rule, kept for report echoing.
    pub fn rule(&self) -> &StepRule {
        &self.rule
    }
}

/// Build a time grid over `[0, horizon]` with `steps` uniform steps,
/// optionally subdividing the steps that touch a refinement window.
///
/// Uniform nodes are computed as `horizon * i / steps`, so the final node
/// equals the horizon exactly.
///
/// # Errors
/// `InvalidArgument` if the horizon is not positive and finite, `steps` is
/// zero, or the refinement window is malformed (empty, outside the horizon,
/// or factor < 2).
pub fn make_time_grid(
    horizon: f64,
    steps: usize,
    refinement: Option<Refinement>,
) -> Result<TimeGrid> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "make_time_grid: horizon {horizon} must be positive and finite"
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("make_time_grid: steps must be at least 1"));
    }
    let base = |i: usize| horizon * (i as f64) / (steps as f64);
    let mut nodes;
    let rule;
    match refinement {
        None => {
            nodes = (0..=steps).map(base).collect::<Vec<_>>();
            rule = StepRule::Uniform { steps };
        }
        Some(Refinement { window, factor }) => {
            let (lo, hi) = window;
            if !(lo >= 0.0 && hi <= horizon && lo < hi) {
                return Err(Error::invalid(format!(
                    "make_time_grid: refinement window [{lo}, {hi}] must be nonempty and inside [0, {horizon}]"
                )));
            }
            if factor < 2 {
                return Err(Error::invalid(
                    "make_time_grid: refinement factor must be at least 2",
                ));
            }
            nodes = Vec::with_capacity(steps + 1);
            nodes.push(0.0);
            for i in 0..steps {
                let (a, b) = (base(i), base(i + 1));
                if a < hi && b > lo {
                    for q in 1..factor {
                        nodes.push(a + (b - a) * (q as f64) / (factor as f64));
                    }
                }
                nodes.push(b);
            }
            rule = StepRule::Refined {
                base_steps: steps,
                window,
                factor,
            };
        }
    }
    let max_step = nodes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    debug_assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    Ok(TimeGrid {
        nodes,
        max_step,
        rule,
    })
}

/// A sampled Brownian path on a grid: per-step increment vectors plus the
/// seed coordinates that produced them.
#[derive(Debug, Clone)]
pub struct BrownianPath<'g> {
    grid: &'g TimeGrid,
    dim: usize,
    /// Step-major layout: `increments[step * dim + coord]`.
    increments: Vec<f64>,
    rng: PathRng,
}

impl<'g> BrownianPath<'g> {
    pub fn grid(&self) -> &TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Increment vector of step `step`.
    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    /// Scalar increment of a one-dimensional path.
    pub fn increment_1d(&self, step: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.increments[step]
    }

    /// Node values of a one-dimensional path by running summation of the
    /// increments (starts at 0).
    pub fn cumulative_1d(&self) -> Vec<f64> {
        debug_assert_eq!(self.dim, 1);
        let mut out = Vec::with_capacity(self.grid.nodes().len());
        let mut w = 0.0;
        out.push(w);
        for step in 0..self.grid.num_steps() {
            w += self.increments[step];
            out.push(w);
        }
        out
    }

    /// The generator holding this path's seed coordinates; substreams other
    /// than the increments (bridge uniforms, auxiliary Gaussians) are drawn
    /// from it so they stay aligned with the path.
    pub fn rng(&self) -> PathRng {
        self.rng
    }

    /// Build a path from explicit increments (deterministic test paths).
    /// The fabricated seed provenance is `(seed, index)`.
    pub fn from_increments(
        grid: &'g TimeGrid,
        dim: usize,
        increments: Vec<f64>,
        seed: u64,
        index: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("BrownianPath: dimension must be positive"));
        }
        if increments.len() != grid.num_steps() * dim {
            return Err(Error::invalid(format!(
                "BrownianPath: expected {} increments, got {}",
                grid.num_steps() * dim,
                increments.len()
            )));
        }
        Ok(BrownianPath {
            grid,
            dim,
            increments,
            rng: PathRng::new(seed, index),
        })
    }
}

/// Sample a `dim`-dimensional Brownian path on `grid` from the counter-based
/// generator at `(master_seed, path_index)`.
///
/// Increment `(step, coord)` is `sqrt(step length) * z` where `z` comes from
/// draw number `step * dim + coord` of the increments stream, so the value
/// never depends on evaluation order, platform or thread count.
///
/// # Errors
/// `InvalidArgument` if `dim` is zero.
pub fn sample_brownian<'g>(
    grid: &'g TimeGrid,
    dim: usize,
    master_seed: u64,
    path_index: u64,
) -> Result<BrownianPath<'g>> {
    sample_brownian_rng(grid, dim, PathRng::new(master_seed, path_index))
}

/// As [`sample_brownian`] but from an explicit generator, which is how the
/// antithetic mirror of a path is produced.
pub fn sample_brownian_rng(grid: &TimeGrid, dim: usize, rng: PathRng) -> Result<BrownianPath<'_>> {
    if dim == 0 {
        return Err(Error::invalid("sample_brownian: dimension must be positive"));
    }
    let steps = grid.num_steps();
    let mut increments = Vec::with_capacity(steps * dim);
    for step in 0..steps {
        let scale = grid.step(step).sqrt();
        for coord in 0..dim {
            let draw = (step * dim + coord) as u64;
            increments.push(scale * rng.normal(Stream::Increments, draw));
        }
    }
    Ok(BrownianPath {
        grid,
        dim,
        increments,
        rng,
    })
}

/// How a passage result was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassageMethod {
    /// Crossings checked at grid nodes only.
    Grid,
    /// Grid crossings plus exact Brownian-bridge sampling of intra-step
    /// crossings.
    BridgeCorrected,
}

/// Outcome of a first-passage scan over one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageResult {
    /// Whether the level was reached by the horizon (grid mode can place
    /// the crossing exactly at the final node).
    pub hit: bool,
    /// Crossing time; the horizon when there was no crossing.
    pub tau: f64,
    /// Index of the first node at or beyond the crossing when the crossing
    /// is visible on the grid; `None` for intra-step bridge crossings and
    /// for no-hit results.
    pub node: Option<usize>,
    /// Detection mode used.
    pub method: PassageMethod,
}

/// First grid node at or after the crossing time of a passage result, or
/// `None` when the level was never reached.  This is the node where
/// grid-stepped processes switch regime.
pub fn crossing_node(grid: &TimeGrid, passage: &PassageResult) -> Option<usize> {
    if !passage.hit {
        return None;
    }
    Some(
        grid.nodes()
            .iter()
            .position(|&t| t >= passage.tau)
            .expect("crossing time within the grid"),
    )
}

/// First passage of a one-dimensional Brownian path to `level > 0`.
///
/// Grid mode reports the first node whose value is at or above the level.
/// Bridge mode scans steps in order: a step whose right endpoint reaches the
/// level has crossed with certainty, and a step below the level at both ends
/// crosses with the Brownian-bridge probability
/// `exp(-2 (a - w_i)(a - w_{i+1}) / dt)`, decided by the path's own bridge
/// substream.  Intra-step crossing times are placed at the step midpoint, so
/// `tau` always lies on or between two adjacent nodes.
///
/// # Errors
/// `InvalidArgument` if the path is not one-dimensional or the level is not
/// positive and finite.
pub fn first_passage(path: &BrownianPath<'_>, level: f64, bridge: bool) -> Result<PassageResult> {
    if path.dim() != 1 {
        return Err(Error::invalid(format!(
            "first_passage: path must be one-dimensional, got dim = {}",
            path.dim()
        )));
    }
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::invalid(format!(
            "first_passage: level {level} must be positive and finite"
        )));
    }
    let grid = path.grid();
    let method = if bridge {
        PassageMethod::BridgeCorrected
    } else {
        PassageMethod::Grid
    };
    let mut w = 0.0;
    for step in 0..grid.num_steps() {
        let w_next = w + path.increment_1d(step);
        if w_next >= level {
            // Visible on the grid.  Bridge mode attributes the crossing to
            // the interior of the step; grid mode to the node itself.
            let (tau, node) = if bridge {
                (
                    grid.node(step) + 0.5 * grid.step(step),
                    Some(step + 1),
                )
            } else {
                (grid.node(step + 1), Some(step + 1))
            };
            return Ok(PassageResult {
                hit: true,
                tau,
                node,
                method,
            });
        }
        if bridge {
            let dt = grid.step(step);
            let p = oracles::exp(-2.0 * (level - w) * (level - w_next) / dt);
            if path.rng().uniform(Stream::Bridge, step as u64) < p {
                return Ok(PassageResult {
                    hit: true,
                    tau: grid.node(step) + 0.5 * dt,
                    node: None,
                    method,
                });
            }
        }
        w = w_next;
    }
    Ok(PassageResult {
        hit: false,
        tau: grid.horizon(),
        node: None,
        method,
    })
}

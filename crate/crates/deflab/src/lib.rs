//! Monte Carlo and quadrature laboratory for stochastic deflators.
//!
//! The library simulates a one-asset market whose price stays constant until
//! a Brownian barrier crossing and then follows a three-dimensional Bessel
//! process.  On top of that market it builds candidate deflators (stochastic
//! exponentials of kernel processes), measures how far each is from being a
//! martingale, takes pairwise maxima of deflators to expose the local-time
//! cost of the lattice operation, and runs a discrete hedging strategy whose
//! terminal wealth demonstrates the arbitrage the deflator family fails to
//! rule out.
//!
//! Numerical ground truth comes from [`oracles`]: closed-form normal
//! functions, adaptive Gauss–Kronrod quadrature, the reflection-principle
//! passage law and Bessel inverse-moment identities.  Simulation results are
//! always checked against these rather than against other simulations.
//!
//! Determinism is a design constraint throughout: random numbers are
//! counter-based (seed, path, stream, draw), ensemble maps preserve path
//! order, and reductions are sequential and compensated, so a report's bytes
//! depend only on the configuration and seed, not on thread count or
//! platform.

// Reference constants are written at the full published precision of the
// tables they were checked against, even where f64 rounds the tail away.
#![allow(clippy::excessive_precision)]
// `!(x > 0.0)` and friends are deliberate: unlike `x <= 0.0`, they are
// also true for NaN, which is exactly what input validation wants.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `x % n == 0` reads fine; `is_multiple_of` adds nothing for powers of two.
#![allow(clippy::manual_is_multiple_of)]

pub mod deflators;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod market;
pub mod oracles;
pub mod paths;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

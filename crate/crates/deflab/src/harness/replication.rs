//! Closed-form replication of the unit payoff in the unpinned (Bessel)
//! phase of the barrier market, and the finite-difference verification of
//! its pricing PDE.
//!
//! After the barrier is crossed the asset follows `dS = (1/S) dt + dW`.
//! Holding `h(t, S)` units with `v(t, x) = 2 Phi(x / sqrt(T - t)) - 1` and
//! `h = dv/dx` replicates the payoff `1_{S(T) > 0} = 1`: because `v`
//! solves the heat equation `v_t + v_xx / 2 = 0`, the asset's drift
//! contributes identically to the portfolio and to `dv`, so the hedge
//! needs no drift knowledge at all.  The initial cost `v(t, x)` equals the
//! conditional expectation of the terminal inverse price scaled by `x` —
//! strictly below the payoff's face value of one, which is the pricing
//! defect the arbitrage experiment monetises.

use crate::error::{Error, Result};
use crate::oracles;

fn validate_time_price(t: f64, x: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "replication: horizon {horizon} must be positive and finite"
        )));
    }
    if !t.is_finite() || !(t >= 0.0) || t >= horizon {
        return Err(Error::invalid(format!(
            "replication: time {t} must lie in [0, horizon = {horizon})"
        )));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!(
            "replication: price {x} must be positive and finite"
        )));
    }
    Ok(horizon - t)
}

/// Replication value `v(t, x) = 2 Phi(x / sqrt(T - t)) - 1` of the unit
/// payoff at maturity `T`, for an unpinned asset at price `x` at time `t`.
///
/// Computed in the complementary form `1 - 2 (1 - Phi)` so deep
/// in-the-money values keep full relative accuracy.
///
/// # Errors
/// `InvalidArgument` unless `0 <= t < T` and `x > 0`.
pub fn bond_replication_value(t: f64, x: f64, horizon: f64) -> Result<f64> {
    let remaining = validate_time_price(t, x, horizon)?;
    Ok(1.0 - 2.0 * oracles::std_normal_sf(x / remaining.sqrt())?)
}

/// Hedge ratio `h(t, x) = dv/dx = 2 phi(x / sqrt(T - t)) / sqrt(T - t)`,
/// in units of the asset.
///
/// # Errors
/// `InvalidArgument` unless `0 <= t < T` and `x > 0`.
pub fn hedge_ratio(t: f64, x: f64, horizon: f64) -> Result<f64> {
    let remaining = validate_time_price(t, x, horizon)?;
    let root = remaining.sqrt();
    Ok(2.0 * oracles::std_normal_pdf(x / root)? / root)
}

/// Largest absolute heat-equation residual `|v_t + v_xx / 2|` of
/// [`bond_replication_value`] over an `nt x nx` lattice of `(t, x)`
/// points, by central finite differences with relative step `h_rel`.
///
/// The lattice spans `t` in `[0.02 T, 0.9 T]` and `x / sqrt(T)` in
/// `[0.05, 4]`, covering the region the arbitrage strategy evaluates while
/// keeping the differences well-conditioned away from the maturity
/// singularity.
///
/// # Errors
/// `InvalidArgument` for a degenerate lattice or step.
pub fn pde_residual_max(horizon: f64, nt: usize, nx: usize, h_rel: f64) -> Result<f64> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "pde_residual_max: horizon {horizon} must be positive and finite"
        )));
    }
    if nt < 2 || nx < 2 {
        return Err(Error::invalid(
            "pde_residual_max: need at least a 2 x 2 lattice",
        ));
    }
    if !(h_rel > 0.0 && h_rel < 0.1) {
        return Err(Error::invalid(format!(
            "pde_residual_max: relative step {h_rel} must lie in (0, 0.1)"
        )));
    }
    // Unvalidated value so the time stencil may poke slightly outside the
    // lattice; only horizon - t > 0 matters for the formula itself.
    let v = |t: f64, x: f64| 1.0 - 2.0 * oracles::phi_sf(x / (horizon - t).sqrt());
    let scale = horizon.sqrt();
    let (t_lo, t_hi) = (0.02 * horizon, 0.9 * horizon);
    let (x_lo, x_hi) = (0.05 * scale, 4.0 * scale);
    let mut worst = 0.0f64;
    for i in 0..nt {
        let t = t_lo + (t_hi - t_lo) * i as f64 / (nt - 1) as f64;
        let ht = h_rel * (horizon - t);
        for j in 0..nx {
            let x = x_lo + (x_hi - x_lo) * j as f64 / (nx - 1) as f64;
            let hx = h_rel * x.max(scale);
            let v_t = (v(t + ht, x) - v(t - ht, x)) / (2.0 * ht);
            let v_xx = (v(t, x + hx) - 2.0 * v(t, x) + v(t, x - hx)) / (hx * hx);
            worst = worst.max((v_t + 0.5 * v_xx).abs());
        }
    }
    Ok(worst)
}

//! Closed-form and quadrature oracles.
//!
//! Everything the Monte Carlo side of the crate is checked against lives
//! here: the standard normal distribution (CDF, density, quantile), an
//! adaptive Gauss-Kronrod integrator, the one-sided Brownian first-passage
//! law, the inverse moment of a three-dimensional Bessel process and the
//! expectation of the exponentially tilted deflator family.
//!
//! Transcendentals are routed through `libm` rather than the platform math
//! library so results are bit-identical across platforms; this matters
//! because reports are required to be byte-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for oracle quadratures.
pub const DEFAULT_QUAD_TOL: f64 = 1e-9;

/// Default maximum bisection depth for [`adaptive_quadrature`].
pub const DEFAULT_MAX_DEPTH: usize = 64;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.3989422804014327;

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Standard normal CDF, unchecked total function (NaN propagates).
///
/// Computed as `erfc(-x/sqrt(2))/2`; the complementary form keeps full
/// relative accuracy in the left tail instead of rounding to 0 or 1 early.
#[inline]
pub(crate) fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Phi(x)`, unchecked.
///
/// Evaluated as `erfc(x/sqrt(2))/2` so the right tail keeps relative
/// accuracy down to the underflow threshold near `x = 38`.
#[inline]
pub(crate) fn phi_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal density, unchecked.
#[inline]
pub(crate) fn phi_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * exp(-0.5 * x * x)
}

/// Standard normal CDF.
///
/// Absolute error is below 1e-15 everywhere and the relative error in the
/// left tail stays at a few ulp because the complementary error function is
/// used directly.
///
/// # Errors
/// `InvalidArgument` if `x` is NaN.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::invalid("std_normal_cdf: NaN input"));
    }
    Ok(phi_cdf(x))
}

/// Standard normal survival function `1 - Phi(x)`, with full relative
/// accuracy in the right tail.
///
/// # Errors
/// `InvalidArgument` if `x` is NaN.
pub fn std_normal_sf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::invalid("std_normal_sf: NaN input"));
    }
    Ok(phi_sf(x))
}

/// Standard normal density.
///
/// # Errors
/// `InvalidArgument` if `x` is NaN.
pub fn std_normal_pdf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::invalid("std_normal_pdf: NaN input"));
    }
    Ok(phi_pdf(x))
}

// Wichura's algorithm AS 241 (PPND16): rational approximations for the
// normal quantile on three regimes, accurate to about 1e-16 relative.
const PPND_A: [f64; 8] = [
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
];
const PPND_C: [f64; 8] = [
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
];
const PPND_E: [f64; 8] = [
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
];

#[inline]
fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Standard normal quantile, unchecked; caller guarantees `p` in (0, 1).
pub(crate) fn quantile_unchecked(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&PPND_A, r) / horner(&PPND_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-ln(r)).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&PPND_C, r) / horner(&PPND_D, r)
    } else {
        let r = r - 5.0;
        horner(&PPND_E, r) / horner(&PPND_F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal quantile (inverse CDF), absolute accuracy better than
/// 1e-12 on the whole open unit interval.
///
/// # Errors
/// `InvalidArgument` unless `p` lies strictly inside (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!(
            "std_normal_quantile: p = {p} outside the open interval (0, 1)"
        )));
    }
    Ok(quantile_unchecked(p))
}

/// Result of an adaptive quadrature: the value, an a-posteriori error
/// estimate, the number of integrand evaluations and whether the estimate
/// met the requested tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
}

// 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
// Odd-indexed abscissae are the embedded Gauss nodes.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod 15(7) panel: returns (kronrod, |kronrod - gauss|).
fn gk15_panel<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (lo + hi);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Hard cap on the number of panels [`adaptive_quadrature`] may hold, so a
/// hostile integrand cannot make the routine run unboundedly.
const MAX_PANELS: usize = 16_384;

#[derive(Debug, Clone, Copy)]
struct Panel {
    err: f64,
    lo: f64,
    hi: f64,
    value: f64,
    depth: usize,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err && self.lo == other.lo
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Worst error first; ties broken by position for determinism.
        self.err
            .total_cmp(&other.err)
            .then(self.lo.total_cmp(&other.lo))
    }
}

/// Adaptive Gauss-Kronrod integration of `f` over `[lo, hi]` to absolute
/// tolerance `tol`.
///
/// Globally adaptive: the panel with the largest embedded error estimate is
/// bisected until the summed estimate drops below `tol`, a panel would fall
/// below width `(hi - lo) / 2^max_depth`, or an internal panel cap is hit
/// (the latter two leave `converged` false rather than stopping silently).
/// Endpoints are never evaluated (all Kronrod nodes are interior), so
/// integrable endpoint singularities are handled by refinement alone.  The
/// final value is a compensated sum over panels in position order, making
/// the result independent of refinement history.
///
/// # Errors
/// `InvalidArgument` for NaN bounds, `lo >= hi`, or non-positive `tol`;
/// `NumericFailure` if the integrand produces a non-finite panel estimate.
pub fn adaptive_quadrature<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_depth: usize,
) -> Result<QuadratureResult> {
    if lo.is_nan() || hi.is_nan() || !(lo < hi) {
        return Err(Error::invalid(format!(
            "adaptive_quadrature: bad interval [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "adaptive_quadrature: tolerance {tol} must be positive"
        )));
    }
    let mut evaluations = 0usize;
    let mut eval_panel = |a: f64, b: f64, depth: usize| -> Result<Panel> {
        let (k, e) = gk15_panel(&f, a, b);
        evaluations += 15;
        if !k.is_finite() || !e.is_finite() {
            return Err(Error::NumericFailure {
                location: format!("quadrature panel [{a}, {b}]"),
                what: format!("non-finite estimate (value {k}, error {e})"),
            });
        }
        Ok(Panel {
            err: e,
            lo: a,
            hi: b,
            value: k,
            depth,
        })
    };

    let mut heap = std::collections::BinaryHeap::with_capacity(256);
    let root = eval_panel(lo, hi, 0)?;
    let mut total_err = root.err;
    heap.push(root);
    while total_err > tol && heap.len() < MAX_PANELS {
        let worst = heap.peek().copied().expect("heap nonempty");
        let too_deep = worst.depth >= max_depth;
        let too_narrow =
            (worst.hi - worst.lo) < f64::EPSILON * (worst.lo.abs() + worst.hi.abs());
        if too_deep || too_narrow {
            // The dominant error cannot be reduced further.
            break;
        }
        heap.pop();
        let mid = 0.5 * (worst.lo + worst.hi);
        let left = eval_panel(worst.lo, mid, worst.depth + 1)?;
        let right = eval_panel(mid, worst.hi, worst.depth + 1)?;
        total_err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
    }

    // Deterministic final reduction: panels in position order.
    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.lo.total_cmp(&q.lo));
    let values: Vec<f64> = panels.iter().map(|p| p.value).collect();
    let errors: Vec<f64> = panels.iter().map(|p| p.err).collect();
    let value = compensated(&values);
    let error_estimate = compensated(&errors);
    Ok(QuadratureResult {
        value,
        error_estimate,
        evaluations,
        converged: error_estimate <= tol,
    })
}

/// Local compensated (Neumaier) sum used for the panel reduction.
fn compensated(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Density and survival function of the first passage time of standard
/// Brownian motion to the level `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageLaw {
    /// Density `a / sqrt(2 pi t^3) * exp(-a^2 / (2t))`, zero at `t = 0`.
    pub density: f64,
    /// Survival probability `P(tau > t) = 2 Phi(a / sqrt(t)) - 1`.
    pub survival: f64,
}

/// First-passage law of Brownian motion at level `a`, evaluated at time `t`.
///
/// # Errors
/// `InvalidArgument` unless `a > 0` and `t >= 0` (both finite).
pub fn first_passage_law(a: f64, t: f64) -> Result<PassageLaw> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!(
            "first_passage_law: level a = {a} must be positive and finite"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!(
            "first_passage_law: time t = {t} must be finite and nonnegative"
        )));
    }
    if t == 0.0 {
        return Ok(PassageLaw {
            density: 0.0,
            survival: 1.0,
        });
    }
    let density = a / (2.0 * std::f64::consts::PI * t * t * t).sqrt() * exp(-a * a / (2.0 * t));
    let survival = 1.0 - 2.0 * phi_sf(a / t.sqrt());
    Ok(PassageLaw { density, survival })
}

/// Inverse moment `E[1 / R(u)]` of a three-dimensional Bessel process
/// started at `x0 > 0`, equal to `(2 Phi(x0 / sqrt(u)) - 1) / x0`.
///
/// The `u = 0` limit is `1 / x0`.
///
/// # Errors
/// `InvalidArgument` unless `x0 > 0` and `u >= 0`.
pub fn bessel3_inverse_moment(x0: f64, u: f64) -> Result<f64> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::invalid(format!(
            "bessel3_inverse_moment: start x0 = {x0} must be positive and finite"
        )));
    }
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::invalid(format!(
            "bessel3_inverse_moment: time u = {u} must be finite and nonnegative"
        )));
    }
    if u == 0.0 {
        return Ok(1.0 / x0);
    }
    // Complementary form keeps accuracy when x0/sqrt(u) is large.
    Ok((1.0 - 2.0 * phi_sf(x0 / u.sqrt())) / x0)
}

/// Expectation of the tilted deflator at strength `n` in the barrier market
/// with barrier `a` and horizon `t_end`:
///
/// `1 - 2 * Int_0^T exp(-n a - n^2 t / 2) * (1 - Phi(1/sqrt(T - t))) * f(t) dt`
///
/// where `f` is the first-passage density at level `a`.  The integrand
/// vanishes faster than any polynomial at both endpoints, so the adaptive
/// rule concentrates panels in the interior.
///
/// Returns the expectation in `value` together with the quadrature error
/// estimate for the integral term.
///
/// # Errors
/// `InvalidArgument` for `n < 0`, non-positive `a` or `t_end`, or a bad
/// tolerance; `QuadratureNotConverged` if the error estimate misses `tol`.
pub fn expected_z_nu_n(n: f64, a: f64, t_end: f64, tol: f64) -> Result<QuadratureResult> {
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::invalid(format!(
            "expected_z_nu_n: strength n = {n} must be finite and nonnegative"
        )));
    }
    if !(a > 0.0 && a.is_finite() && t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid(format!(
            "expected_z_nu_n: need a > 0 and t_end > 0, got a = {a}, t_end = {t_end}"
        )));
    }
    let integrand = move |t: f64| -> f64 {
        if t <= 0.0 || t >= t_end {
            return 0.0;
        }
        let tilt = exp(-n * a - 0.5 * n * n * t);
        let payoff_gap = 2.0 * phi_sf(1.0 / (t_end - t).sqrt());
        let density = a / (2.0 * std::f64::consts::PI * t * t * t).sqrt() * exp(-a * a / (2.0 * t));
        tilt * payoff_gap * density
    };
    let quad = adaptive_quadrature(integrand, 0.0, t_end, tol, DEFAULT_MAX_DEPTH)?;
    if !quad.converged {
        return Err(Error::QuadratureNotConverged {
            error_estimate: quad.error_estimate,
            tolerance: tol,
            evaluations: quad.evaluations,
        });
    }
    Ok(QuadratureResult {
        value: 1.0 - quad.value,
        ..quad
    })
}

/// Expectation `E[(1/S(t)) 1_{tau < t}]` of the inverse price on the set
/// where the barrier was crossed before `t`:
///
/// `Int_0^t (2 Phi(1/sqrt(t - s)) - 1) f(s) ds`
///
/// with `f` the first-passage density at level `a`.  Together with the
/// survival probability this decomposes the untilted deflator expectation,
/// and it serves as the per-checkpoint reference for the drift test of the
/// crossed inverse price.
///
/// # Errors
/// `InvalidArgument` for non-positive `a` or `t`; `QuadratureNotConverged`
/// if the error estimate misses `tol`.
pub fn crossed_inverse_price_moment(a: f64, t: f64, tol: f64) -> Result<QuadratureResult> {
    if !(a > 0.0 && a.is_finite() && t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!(
            "crossed_inverse_price_moment: need a > 0 and t > 0, got a = {a}, t = {t}"
        )));
    }
    let integrand = move |s: f64| -> f64 {
        if s <= 0.0 || s >= t {
            return 0.0;
        }
        let conditional = 1.0 - 2.0 * phi_sf(1.0 / (t - s).sqrt());
        let density = a / (2.0 * std::f64::consts::PI * s * s * s).sqrt() * exp(-a * a / (2.0 * s));
        conditional * density
    };
    let quad = adaptive_quadrature(integrand, 0.0, t, tol, DEFAULT_MAX_DEPTH)?;
    if !quad.converged {
        return Err(Error::QuadratureNotConverged {
            error_estimate: quad.error_estimate,
            tolerance: tol,
            evaluations: quad.evaluations,
        });
    }
    Ok(quad)
}

//! Cross-module invariants: properties that tie the simulator, the
//! deflator quadrature, the replication formulas and the experiment
//! harness to each other, beyond what any single module's unit tests see.

use deflab::harness::arbitrage::{run_arbitrage, ArbitrageConfig};
use deflab::harness::counterexample::{run_counterexample, CounterexampleConfig};
use deflab::harness::report::ExperimentReport;
use deflab::harness::simulate::run_market_battery;
use deflab::harness::RunConfig;
use deflab::harness::replication::{bond_replication_value, hedge_ratio};
use deflab::market::Scheme;
use deflab::oracles::{
    crossed_inverse_price_moment, expected_z_nu_n, std_normal_cdf, std_normal_quantile,
    std_normal_sf, DEFAULT_QUAD_TOL,
};
use proptest::prelude::*;

fn base_run(paths: u64, steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        barrier: 1.0,
        horizon: 1.0,
        paths,
        steps,
        seed,
        level: 0.99,
        scheme: Scheme::Exact,
        bridge: true,
        antithetic: false,
    }
}

fn mc_mean_stderr(report: &ExperimentReport, name: &str) -> (f64, f64) {
    let q = report
        .quantities
        .iter()
        .find(|q| q.name == name)
        .unwrap_or_else(|| panic!("no quantity {name:?}"));
    let mc = q.mc.as_ref().unwrap_or_else(|| panic!("{name} has no MC side"));
    (mc.mean, mc.stderr)
}

/// The simulator battery — positivity, pinning, unpinned-moment drift
/// tests at eight checkpoints, and cross-scheme agreement in law — passes
/// as one bundle on a fresh seed.  The step count keeps the Euler replay
/// inside its stability envelope (its drift term overshoots on coarse
/// grids, which the battery reports as an error by design).
#[test]
fn market_battery_is_clean() {
    let report = run_market_battery(&base_run(10_000, 512, 20_260_814)).expect("battery");
    assert!(
        report.verdict.passed,
        "failures: {:?}",
        report.verdict.failures
    );
    for name in [
        "prices_positive",
        "pinned_before_unpinning",
        "terminal_pinned_when_never_unpinned",
        "crossing_probability",
        "scheme_agreement_ks",
    ] {
        assert!(
            report.quantities.iter().any(|q| q.name == name),
            "battery dropped row {name}"
        );
    }
}

/// Terminal deflator expectations are supermartingale-consistent: for a
/// fixed kernel strength the quadrature value decreases strictly as the
/// horizon grows, and stays inside (0, 1).
#[test]
fn expected_deflator_decreases_in_horizon() {
    let mut last = 1.0f64;
    for t in [0.25, 0.5, 0.75, 1.0, 1.5] {
        let q = expected_z_nu_n(2.0, 1.0, t, DEFAULT_QUAD_TOL).expect("quadrature");
        assert!(q.converged, "quadrature did not converge at t = {t}");
        assert!(q.value > 0.0 && q.value < 1.0, "value {} at t = {t}", q.value);
        assert!(
            q.value < last,
            "expectation rose from {last} to {} at t = {t}",
            q.value
        );
        last = q.value;
    }
}

/// The crossed-inverse-price moment curve matches values computed with an
/// independent 50-digit integrator, pinned here to guard the quadrature
/// and the passage-density closed form together.
#[test]
fn crossed_inverse_price_curve_is_pinned() {
    let frozen = [
        (0.125, 0.0046777195637894),
        (0.250, 0.045436921412692),
        (0.375, 0.10137959968362),
        (0.500, 0.15262147206924),
        (0.625, 0.19449117434607),
        (0.750, 0.22729174365213),
        (0.875, 0.25253996275689),
        (1.000, 0.27181024396656),
    ];
    for (t, want) in frozen {
        let got = crossed_inverse_price_moment(1.0, t, DEFAULT_QUAD_TOL).expect("quadrature");
        assert!(got.converged);
        assert!(
            (got.value - want).abs() <= 5e-11 + 2.0 * got.error_estimate,
            "t = {t}: {} vs pinned {want}",
            got.value
        );
    }
}

/// The zero-kernel deflator expectation and the arbitrage entry cost
/// estimate the same number — `E[v(tau ^ T, S(tau ^ T))]` — from two
/// unrelated pipelines.  With independent seeds the two Monte Carlo means
/// agree within a joint 99% interval, and each passes its own oracle row.
#[test]
fn counterexample_and_arbitrage_agree_on_the_entry_cost() {
    let ce = run_counterexample(&CounterexampleConfig {
        run: base_run(20_000, 1_024, 7),
        strengths: vec![0.0],
    })
    .expect("counterexample");
    let arb = run_arbitrage(&ArbitrageConfig::with_run(base_run(20_000, 1_024, 1_234)))
        .expect("arbitrage");
    let (m1, s1) = mc_mean_stderr(&ce, "expected_z(nu_n:0)");
    let (m2, s2) = mc_mean_stderr(&arb, "initial_cost");
    let z = (m1 - m2) / s1.hypot(s2);
    assert!(
        z.abs() < 2.576,
        "entry-cost estimates disagree: {m1} vs {m2} (z = {z:+.2})"
    );
    assert!(ce.verdict.passed, "failures: {:?}", ce.verdict.failures);
    assert!(arb.verdict.passed, "failures: {:?}", arb.verdict.failures);
}

/// Distribution helpers are mutually consistent on a fixed grid: the
/// survival function complements the CDF and the quantile inverts it.
#[test]
fn normal_helpers_are_mutually_consistent() {
    let mut x = -8.0f64;
    let mut prev = 0.0f64;
    while x <= 8.0 {
        let cdf = std_normal_cdf(x).unwrap();
        let sf = std_normal_sf(x).unwrap();
        assert!((cdf + sf - 1.0).abs() <= 1e-15, "x = {x}");
        assert!(cdf >= prev, "cdf not monotone at {x}");
        if (-3.0..=3.0).contains(&x) {
            let back = std_normal_quantile(cdf).unwrap();
            assert!((back - x).abs() <= 1e-9, "quantile(cdf({x})) = {back}");
        }
        prev = cdf;
        x += 0.125;
    }
}

proptest! {
    /// The replication value is a price: positive, capped by the payoff's
    /// face value (reaching it only by rounding deep in the money), and
    /// nondecreasing in the asset level with a positive derivative, the
    /// hedge ratio.
    #[test]
    fn replication_value_behaves_like_a_price(
        t in 0.0f64..0.95,
        x in 0.05f64..5.0,
        bump in 0.01f64..0.5,
    ) {
        let v = bond_replication_value(t, x, 1.0).unwrap();
        let v_up = bond_replication_value(t, x + bump, 1.0).unwrap();
        let h = hedge_ratio(t, x, 1.0).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
        prop_assert!(v_up >= v);
        prop_assert!(h > 0.0);
        if v < 1.0 - 1e-10 {
            prop_assert!(v_up > v);
        }
    }

    /// Kernel-strength monotonicity off the pinned grid: stronger tilts
    /// lose less mass, so the terminal expectation increases in `n` while
    /// remaining strictly below one — for arbitrary barrier and horizon.
    #[test]
    fn stronger_kernels_retain_more_mass(
        a in 0.3f64..2.0,
        t in 0.3f64..2.0,
        n in 0.0f64..6.0,
    ) {
        let lo = expected_z_nu_n(n, a, t, 1e-10).unwrap();
        let hi = expected_z_nu_n(n + 0.5, a, t, 1e-10).unwrap();
        prop_assert!(lo.converged && hi.converged);
        prop_assert!(lo.value > 0.0 && hi.value < 1.0);
        prop_assert!(hi.value > lo.value);
    }
}

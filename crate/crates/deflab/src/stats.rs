//! Estimation and testing utilities for Monte Carlo output.
//!
//! Everything here is deterministic given its input slice: summation is
//! compensated (Neumaier) and sequential in index order, so results do not
//! depend on thread count or reduction order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles;

/// Compensated (Neumaier) sum of a slice.
///
/// Exact for classic cancellation patterns such as `[1e16, 1.0, -1e16]` and
/// accurate to a few ulps for long sums where naive accumulation drifts.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            compensation += (sum - t) + x;
        } else {
            compensation += (x - t) + sum;
        }
        sum = t;
    }
    sum + compensation
}

/// A Monte Carlo estimate with a two-sided normal confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateCi {
    pub mean: f64,
    /// Standard error of the mean, `sample sd / sqrt(n)`.
    pub std_error: f64,
    /// Half-width of the interval, `z * std_error` at the given level.
    pub half_width: f64,
    /// Two-sided confidence level in (0, 1).
    pub level: f64,
    pub n: usize,
}

impl EstimateCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Two-pass mean and standard error with a normal confidence interval at
/// `level` (for example 0.99 or 0.995).
///
/// # Errors
/// `InvalidArgument` if fewer than two samples, any sample is not finite, or
/// the level is outside (0, 1).
pub fn mc_estimate(samples: &[f64], level: f64) -> Result<EstimateCi> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "mc_estimate: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "mc_estimate: sample {bad} is not finite"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "mc_estimate: confidence level {level} must lie in (0, 1)"
        )));
    }
    let n = samples.len() as f64;
    let mean = compensated_sum(samples) / n;
    let mut residuals_sq = Vec::with_capacity(samples.len());
    residuals_sq.extend(samples.iter().map(|x| (x - mean) * (x - mean)));
    let variance = compensated_sum(&residuals_sq) / (n - 1.0);
    let std_error = (variance / n).sqrt();
    let z = oracles::std_normal_quantile(0.5 + level / 2.0)?;
    Ok(EstimateCi {
        mean,
        std_error,
        half_width: z * std_error,
        level,
        n: samples.len(),
    })
}

/// Result of checking an estimate against an externally computed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub oracle: f64,
    pub difference: f64,
    /// Difference in units of the standard error; infinite when the sample
    /// is degenerate but off target.
    pub z_score: f64,
    /// Whether the oracle lies inside the confidence interval.
    pub within: bool,
}

/// Compare an estimate against a reference value: agreement means the
/// reference falls inside the estimate's confidence interval.
pub fn compare_to_oracle(estimate: &EstimateCi, oracle: f64) -> OracleComparison {
    let difference = estimate.mean - oracle;
    let z_score = if estimate.std_error > 0.0 {
        difference / estimate.std_error
    } else if difference == 0.0 {
        0.0
    } else {
        f64::INFINITY * difference.signum()
    };
    OracleComparison {
        oracle,
        difference,
        z_score,
        within: difference.abs() <= estimate.half_width,
    }
}

/// One checkpoint of a drift test: per-path samples of a process at a fixed
/// time, plus the value a driftless process would average to.
#[derive(Debug, Clone)]
pub struct DriftCheckpoint {
    pub time: f64,
    pub samples: Vec<f64>,
    pub reference: f64,
}

/// Per-checkpoint outcome of [`martingale_drift_test`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCheckpointResult {
    pub time: f64,
    pub mean: f64,
    pub std_error: f64,
    pub reference: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub rejected: bool,
}

/// Joint z-test report over several checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTestReport {
    pub name: String,
    /// Family-wise significance level; each checkpoint is tested at
    /// `alpha / checkpoints.len()` (Bonferroni).
    pub alpha: f64,
    pub checkpoints: Vec<DriftCheckpointResult>,
    pub worst_abs_z: f64,
    /// True when no checkpoint rejected.
    pub passed: bool,
}

/// Two-sided z-test of "sample mean equals reference" at each checkpoint,
/// with a Bonferroni correction across checkpoints so the family-wise false
/// positive rate stays at `alpha`.
///
/// A significant deviation at a checkpoint is evidence of drift; passing
/// only means no drift was detected at these checkpoints with this sample
/// size, not that the process is a martingale.
///
/// # Errors
/// `InvalidArgument` if there are no checkpoints, `alpha` is outside (0, 1),
/// or any checkpoint has fewer than two samples or a degenerate (zero
/// standard error) sample off its reference.
pub fn martingale_drift_test(
    name: &str,
    checkpoints: &[DriftCheckpoint],
    alpha: f64,
) -> Result<DriftTestReport> {
    if checkpoints.is_empty() {
        return Err(Error::invalid(
            "martingale_drift_test: need at least one checkpoint",
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "martingale_drift_test: alpha {alpha} must lie in (0, 1)"
        )));
    }
    let per_test = alpha / checkpoints.len() as f64;
    let mut results = Vec::with_capacity(checkpoints.len());
    let mut worst = 0.0f64;
    for cp in checkpoints {
        let est = mc_estimate(&cp.samples, 0.5)?;
        let cmp = compare_to_oracle(&est, cp.reference);
        if !cmp.z_score.is_finite() && cmp.z_score != 0.0 {
            return Err(Error::invalid(format!(
                "martingale_drift_test: checkpoint at t = {} has zero spread but mean off reference",
                cp.time
            )));
        }
        let p_value = 2.0 * oracles::std_normal_cdf(-cmp.z_score.abs())?;
        worst = worst.max(cmp.z_score.abs());
        results.push(DriftCheckpointResult {
            time: cp.time,
            mean: est.mean,
            std_error: est.std_error,
            reference: cp.reference,
            z_score: cmp.z_score,
            p_value,
            rejected: p_value < per_test,
        });
    }
    let passed = results.iter().all(|r| !r.rejected);
    Ok(DriftTestReport {
        name: name.to_string(),
        alpha,
        checkpoints: results,
        worst_abs_z: worst,
        passed,
    })
}

/// One-sample Kolmogorov-Smirnov statistic against a reference distribution
/// function (the samples need not be sorted).
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("ks_statistic: empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic (maximum distance between the
/// two empirical distribution functions).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("ks_two_sample: empty sample"));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample"));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Asymptotic one-sample KS critical value `sqrt(ln(2/alpha) / (2n))`.
pub fn ks_critical_one_sample(alpha: f64, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(Error::invalid(
            "ks_critical_one_sample: need alpha in (0, 1) and n >= 1",
        ));
    }
    Ok((oracles::ln(2.0 / alpha) / (2.0 * n as f64)).sqrt())
}

/// Asymptotic two-sample KS critical value
/// `sqrt(ln(2/alpha) * (n + m) / (2 n m))`.
pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 || m == 0 {
        return Err(Error::invalid(
            "ks_critical_two_sample: need alpha in (0, 1) and n, m >= 1",
        ));
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok((oracles::ln(2.0 / alpha) * (nf + mf) / (2.0 * nf * mf)).sqrt())
}

/// Collapse an interleaved antithetic sample (mirror pairs at indices
/// `2k, 2k + 1`) into per-pair averages, which are the independent draws a
/// confidence interval must be built on.
///
/// # Errors
/// `InvalidArgument` on an odd-length input.
pub fn pair_average(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "pair_average: need an even number of samples, got {}",
            samples.len()
        )));
    }
    Ok(samples
        .chunks_exact(2)
        .map(|p| 0.5 * (p[0] + p[1]))
        .collect())
}

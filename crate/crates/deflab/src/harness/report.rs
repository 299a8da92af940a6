//! Versioned experiment reports: JSON main file plus a CSV side file of
//! per-quantity rows for external plotting.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::stats::EstimateCi;

/// Schema tag written into every report.
pub const SCHEMA: &str = "deflab/1";

/// Verdict labels for quantity rows.
pub const PASS: &str = "pass";
pub const FAIL: &str = "fail";
/// Informational rows never affect the overall verdict.
pub const INFO: &str = "info";

/// Monte Carlo summary of one estimated quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// Independent draws behind the estimate (pairs count once under
    /// antithetic sampling).
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Two-sided confidence interval at `level`.
    pub ci: [f64; 2],
    pub level: f64,
}

impl From<&EstimateCi> for McSummary {
    fn from(e: &EstimateCi) -> Self {
        McSummary {
            n: e.n,
            mean: e.mean,
            stderr: e.std_error,
            ci: [e.lower(), e.upper()],
            level: e.level,
        }
    }
}

/// One named, checkable quantity in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityReport {
    /// Self-describing name; verdict failures cite it verbatim.
    pub name: String,
    /// Time the quantity refers to, when meaningful.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<f64>,
    /// Monte Carlo estimate, when the quantity has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSummary>,
    /// Deterministic value (closed form or quadrature), when the quantity
    /// has one independent of the Monte Carlo side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Reference the quantity is tested against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    /// Standardised discrepancy behind the verdict, when one exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    /// `pass`, `fail` or `info`.
    pub verdict: String,
}

impl QuantityReport {
    pub fn new(name: impl Into<String>) -> Self {
        QuantityReport {
            name: name.into(),
            checkpoint: None,
            mc: None,
            value: None,
            oracle: None,
            z: None,
            verdict: INFO.to_string(),
        }
    }

    pub fn checkpoint(mut self, t: f64) -> Self {
        self.checkpoint = Some(t);
        self
    }

    pub fn mc(mut self, estimate: &EstimateCi) -> Self {
        self.mc = Some(McSummary::from(estimate));
        self
    }

    pub fn value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn oracle(mut self, v: f64) -> Self {
        self.oracle = Some(v);
        self
    }

    pub fn z(mut self, z: f64) -> Self {
        self.z = Some(z);
        self
    }

    pub fn verdict(mut self, pass: bool) -> Self {
        self.verdict = (if pass { PASS } else { FAIL }).to_string();
        self
    }

    pub fn info(mut self) -> Self {
        self.verdict = INFO.to_string();
        self
    }

    pub fn failed(&self) -> bool {
        self.verdict == FAIL
    }
}

/// Overall outcome of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictBlock {
    /// True when no non-informational quantity failed.
    pub passed: bool,
    /// Names of the failing quantities, in report order.
    pub failures: Vec<String>,
    /// Present only when the experiment certifies its headline claim.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conclusion: Option<String>,
    /// Standing caveat about what the statistical tests can certify.
    pub note: String,
}

/// The versioned report every experiment produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    /// Echo of the full configuration the run is a pure function of.
    pub config: serde_json::Value,
    pub quantities: Vec<QuantityReport>,
    /// Free-form (but deterministic) experiment-specific extras.
    pub diagnostics: serde_json::Value,
    pub verdict: VerdictBlock,
    /// Wall-clock stamp; zero from library runners, set by the CLI.  The
    /// only field exempt from byte-identical reproducibility.
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    /// Assemble a report: the verdict block is derived from the quantity
    /// rows, and `conclusion` is attached only when everything passed.
    pub fn assemble(
        config: serde_json::Value,
        quantities: Vec<QuantityReport>,
        diagnostics: serde_json::Value,
        conclusion_on_pass: Option<&str>,
        note: &str,
    ) -> Self {
        let failures: Vec<String> = quantities
            .iter()
            .filter(|q| q.failed())
            .map(|q| q.name.clone())
            .collect();
        let passed = failures.is_empty();
        ExperimentReport {
            schema: SCHEMA.to_string(),
            config,
            quantities,
            diagnostics,
            verdict: VerdictBlock {
                passed,
                failures,
                conclusion: if passed {
                    conclusion_on_pass.map(str::to_string)
                } else {
                    None
                },
                note: note.to_string(),
            },
            runtime_seconds: 0.0,
        }
    }

    /// Pretty JSON with a trailing newline.
    ///
    /// # Errors
    /// `Json` on serialisation failure.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// CSV side file: one row per quantity with empty cells for absent
    /// fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,checkpoint,n,mean,stderr,ci_low,ci_high,oracle,z,verdict\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in &self.quantities {
            let (n, mean, stderr, lo, hi) = match &q.mc {
                Some(mc) => (
                    mc.n.to_string(),
                    Some(mc.mean),
                    Some(mc.stderr),
                    Some(mc.ci[0]),
                    Some(mc.ci[1]),
                ),
                // Deterministic rows put their value in the mean column.
                None => (String::new(), q.value, None, None, None),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                q.name,
                cell(q.checkpoint),
                n,
                cell(mean),
                cell(stderr),
                cell(lo),
                cell(hi),
                cell(q.oracle),
                cell(q.z),
                q.verdict
            ));
        }
        out
    }

    /// Write the JSON report to `out` and the CSV side file next to it
    /// (same stem, `.csv` extension).
    ///
    /// # Errors
    /// `Io` on filesystem failure.
    pub fn write_files(&self, out: &Path) -> Result<()> {
        let mut f = std::fs::File::create(out)?;
        f.write_all(self.to_json()?.as_bytes())?;
        let csv_path = out.with_extension("csv");
        let mut c = std::fs::File::create(csv_path)?;
        c.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

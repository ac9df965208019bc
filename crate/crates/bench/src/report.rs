//! Normalized comparison of two run logs.

use std::fmt::Write as _;

use dpc_core::metrics::{compute_metrics, count_bound_violations, normalize_comparison, ComparisonEntry, MetricsRecord, RunLog};
use dpc_core::DMatrix;

use crate::error::{BenchError, Result};

pub const DELTA_U_FOOTNOTE: &str =
    "J_du counts no rate term at the first logged sample (u(-1) := u(0)); costs use the controller weights in scaled coordinates.";

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTimeStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub controller: String,
    pub metrics: MetricsRecord,
    /// Samples whose input leaves the bounds, counted from the log.
    pub violations: usize,
    pub holds: usize,
    pub solve_time: SolveTimeStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub base: RunSummary,
    pub other: RunSummary,
    pub entries: Vec<ComparisonEntry>,
}

fn header_value<'a>(log: &'a RunLog, key: &str) -> Result<&'a str> {
    log.header
        .get(key)
        .ok_or_else(|| BenchError::Mismatch(format!("log of {} lacks the {key} header", log.header.controller)))
}

fn parse_list(log: &RunLog, key: &str) -> Result<Vec<f64>> {
    header_value(log, key)?
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| BenchError::Mismatch(format!("header {key} holds a non-number"))))
        .collect()
}

fn square(log: &RunLog, key: &str, n: usize) -> Result<DMatrix<f64>> {
    let v = parse_list(log, key)?;
    if v.len() != n * n {
        return Err(BenchError::Mismatch(format!("header {key} is not {n}x{n}")));
    }
    Ok(DMatrix::from_row_slice(n, n, &v))
}

fn index(log: &RunLog, key: &str) -> Result<usize> {
    header_value(log, key)?.parse().map_err(|_| BenchError::Mismatch(format!("header {key} is not an index")))
}

/// Metrics, violation and hold counts of one log, using the weights and
/// bounds recorded in its header.
pub fn summarize(log: &RunLog) -> Result<RunSummary> {
    let q = square(log, "metric_q", log.n_y())?;
    let r = square(log, "metric_r", log.n_u())?;
    let metrics = compute_metrics(log, &q, &r, index(log, "tracked_channel")?, index(log, "energy_channel")?)?;
    let flat = parse_list(log, "u_bounds")?;
    if flat.len() != 2 * log.n_u() {
        return Err(BenchError::Mismatch("header u_bounds does not match the input count".into()));
    }
    let bounds: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
    let times: Vec<f64> = log.records().iter().map(|r| r.solve_time).collect();
    Ok(RunSummary {
        controller: log.header.controller.clone(),
        metrics,
        violations: count_bound_violations(log, &bounds)?,
        holds: log.records().iter().filter(|r| r.hold).count(),
        solve_time: SolveTimeStats {
            mean: times.iter().sum::<f64>() / times.len().max(1) as f64,
            max: times.iter().copied().fold(0.0, f64::max),
        },
    })
}

/// Compares `other` against `base` after checking both come from the same
/// scenario.
pub fn compare_logs(base: &RunLog, other: &RunLog) -> Result<ComparisonReport> {
    if base.header.config_hash != other.header.config_hash {
        return Err(BenchError::Mismatch(format!(
            "scenario hashes differ ({} vs {})",
            base.header.config_hash, other.header.config_hash
        )));
    }
    if (base.n_u(), base.n_y(), base.len()) != (other.n_u(), other.n_y(), other.len()) {
        return Err(BenchError::Mismatch("logs differ in dimensions or length".into()));
    }
    if base.references() != other.references() {
        return Err(BenchError::Mismatch("logs follow different references".into()));
    }
    for key in ["metric_q", "metric_r", "u_bounds", "tracked_channel", "energy_channel"] {
        if header_value(base, key)? != header_value(other, key)? {
            return Err(BenchError::Mismatch(format!("logs differ in header {key}")));
        }
    }
    let (b, o) = (summarize(base)?, summarize(other)?);
    let entries = normalize_comparison(&b.metrics, &o.metrics);
    Ok(ComparisonReport { base: b, other: o, entries })
}

impl ComparisonReport {
    /// Aligned text table with the rate-convention footnote.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let (bn, on) = (&self.base.controller, &self.other.controller);
        writeln!(s, "{:<8} {:>16} {:>16} {:>10}", "metric", bn, on, "percent").unwrap();
        for e in &self.entries {
            let pct = e.percent.map_or_else(|| "undefined".to_string(), |p| format!("{p:.1}"));
            let mark = if e.metric == "J_du" { "*" } else { "" };
            writeln!(s, "{:<8} {:>16.6e} {:>16.6e} {:>10}", format!("{}{mark}", e.metric), e.base, e.other, pct).unwrap();
        }
        writeln!(s, "{:<8} {:>16} {:>16}", "T_sim", self.base.metrics.t_sim, self.other.metrics.t_sim).unwrap();
        writeln!(s, "{:<8} {:>16} {:>16}", "bound_v", self.base.violations, self.other.violations).unwrap();
        writeln!(s, "{:<8} {:>16} {:>16}", "holds", self.base.holds, self.other.holds).unwrap();
        writeln!(s, "{:<8} {:>16.3e} {:>16.3e}", "t_mean", self.base.solve_time.mean, self.other.solve_time.mean).unwrap();
        writeln!(s, "{:<8} {:>16.3e} {:>16.3e}", "t_max", self.base.solve_time.max, self.other.solve_time.max).unwrap();
        writeln!(s, "percent = 100 * {on} / {bn}").unwrap();
        writeln!(s, "* {DELTA_U_FOOTNOTE}").unwrap();
        s
    }
}

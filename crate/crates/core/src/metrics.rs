//! Closed-loop run logs and performance metrics.
//!
//! For a log of `T_sim` samples:
//!
//! ```text
//! e_RMS = sqrt( (1/T_sim) Σ (y_c(t) − r_c(t))² )      tracked channel c
//! J_y   = Σ ‖y(t) − r(t)‖²_Q
//! J_Δu  = Σ ‖u(t) − u(t−1)‖²_R                        with u(−1) := u(0)
//! E     = Σ u_e(t)                                    energy channel e
//! ```
//!
//! The first rate term is zero by the `u(−1) := u(0)` convention, since a log
//! starts at the first applied input.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::math::{round, sqrt};
use crate::qp::QpStatus;

/// Metadata identifying the scenario a log came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunHeader {
    pub controller: String,
    pub config_hash: String,
    pub plant_id: String,
    pub seed: u64,
    /// Further `key = value` metadata, kept in order.
    pub extra: Vec<(String, String)>,
}

impl RunHeader {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// One closed-loop sample. `y` is measured with `u` applied; `r` is the
/// reference for that sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub r: DVector<f64>,
    pub status: QpStatus,
    /// The previous input was held instead of the planned one.
    pub hold: bool,
    pub solve_time: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    n_u: usize,
    n_y: usize,
    records: Vec<RunRecord>,
}

impl RunLog {
    pub fn new(header: RunHeader, n_u: usize, n_y: usize) -> Self {
        RunLog { header, n_u, n_y, records: Vec::new() }
    }

    /// Appends a record; `t` must increase and dimensions must match.
    pub fn push(&mut self, record: RunRecord) -> Result<()> {
        if record.u.len() != self.n_u || record.y.len() != self.n_y || record.r.len() != self.n_y {
            return Err(dim_err("record dimensions differ from the log"));
        }
        if let Some(last) = self.records.last() {
            if record.t <= last.t {
                return Err(Error::InvalidConfig(alloc::format!("time {} does not follow {}", record.t, last.t)));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Applied inputs, one row per sample.
    pub fn inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.n_u, |t, c| self.records[t].u[c])
    }

    pub fn outputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.n_y, |t, c| self.records[t].y[c])
    }

    pub fn references(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.n_y, |t, c| self.records[t].r[c])
    }

    fn non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyLog)
        } else {
            Ok(())
        }
    }
}

/// The four scalar metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub e_rms: f64,
    pub j_y: f64,
    pub j_du: f64,
    pub energy: f64,
    pub t_sim: usize,
}

fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub fn rms_tracking_error(log: &RunLog, channel: usize) -> Result<f64> {
    log.non_empty()?;
    if channel >= log.n_y {
        return Err(Error::ChannelOutOfRange { index: channel, count: log.n_y });
    }
    let sum: f64 = log.records.iter().map(|r| (r.y[channel] - r.r[channel]) * (r.y[channel] - r.r[channel])).sum();
    Ok(sqrt(sum / log.len() as f64))
}

pub fn tracking_cost(log: &RunLog, q: &DMatrix<f64>) -> Result<f64> {
    if q.shape() != (log.n_y, log.n_y) {
        return Err(dim_err("Q does not match the output count"));
    }
    Ok(log.records.iter().map(|r| quad_form(q, &(&r.y - &r.r))).sum())
}

pub fn effort_cost(log: &RunLog, r: &DMatrix<f64>) -> Result<f64> {
    if r.shape() != (log.n_u, log.n_u) {
        return Err(dim_err("R does not match the input count"));
    }
    Ok(log.records.windows(2).map(|w| quad_form(r, &(&w[1].u - &w[0].u))).sum())
}

pub fn energy(log: &RunLog, channel: usize) -> Result<f64> {
    if channel >= log.n_u {
        return Err(Error::ChannelOutOfRange { index: channel, count: log.n_u });
    }
    Ok(log.records.iter().map(|r| r.u[channel]).sum())
}

/// All four metrics for one log.
pub fn compute_metrics(
    log: &RunLog,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tracked_channel: usize,
    energy_channel: usize,
) -> Result<MetricsRecord> {
    Ok(MetricsRecord {
        e_rms: rms_tracking_error(log, tracked_channel)?,
        j_y: tracking_cost(log, q)?,
        j_du: effort_cost(log, r)?,
        energy: energy(log, energy_channel)?,
        t_sim: log.len(),
    })
}

/// Samples whose applied input leaves the bounds (exact comparison).
pub fn count_bound_violations(log: &RunLog, bounds: &[(f64, f64)]) -> Result<usize> {
    if bounds.len() != log.n_u {
        return Err(dim_err("bounds do not match the input count"));
    }
    Ok(log
        .records
        .iter()
        .filter(|r| r.u.iter().zip(bounds).any(|(&v, &(lo, hi))| !(lo <= v && v <= hi)))
        .count())
}

/// One row of a normalized comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonEntry {
    pub metric: &'static str,
    pub base: f64,
    pub other: f64,
    /// `100·other/base` to one decimal; `None` when the baseline is zero.
    pub percent: Option<f64>,
}

pub const METRIC_NAMES: [&str; 4] = ["e_rms", "J_y", "J_du", "E"];

pub fn normalize_comparison(base: &MetricsRecord, other: &MetricsRecord) -> Vec<ComparisonEntry> {
    let pairs = [(base.e_rms, other.e_rms), (base.j_y, other.j_y), (base.j_du, other.j_du), (base.energy, other.energy)];
    METRIC_NAMES
        .iter()
        .zip(pairs)
        .map(|(&metric, (b, o))| ComparisonEntry {
            metric,
            base: b,
            other: o,
            percent: if b != 0.0 && b.is_finite() && o.is_finite() { Some(round(1000.0 * o / b) / 10.0) } else { None },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn log_from(u: &[f64], y: &[[f64; 3]], r: &[[f64; 3]]) -> RunLog {
        let mut log = RunLog::new(RunHeader::default(), 1, 3);
        for t in 0..u.len() {
            log.push(RunRecord {
                t,
                u: DVector::from_element(1, u[t]),
                y: DVector::from_row_slice(&y[t]),
                r: DVector::from_row_slice(&r[t]),
                status: QpStatus::Optimal,
                hold: false,
                solve_time: 0.0,
                objective: 0.0,
            })
            .unwrap();
        }
        log
    }

    #[test]
    fn hand_computed_values() {
        let log = log_from(&[0.0, 1.0, 1.0], &[[3.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0; 3]], &[[0.0; 3]; 3]);
        let two = log_from(&[0.0, 1.0], &[[3.0, 0.0, 0.0], [4.0, 0.0, 0.0]], &[[0.0; 3]; 2]);
        assert!((rms_tracking_error(&two, 0).unwrap() - sqrt(12.5)).abs() < 1e-15);
        assert_eq!(effort_cost(&log, &DMatrix::from_element(1, 1, 20.0)).unwrap(), 20.0);
        assert_eq!(energy(&log, 0).unwrap(), 2.0);

        let one = log_from(&[0.0], &[[1.0, 99.0, 99.0]], &[[0.0; 3]]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 0.0, 0.0]));
        assert_eq!(tracking_cost(&one, &q).unwrap(), 20.0);
        assert_eq!(tracking_cost(&one, &DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn constant_cases() {
        let log = log_from(&[50.0; 4], &[[2.0, 0.0, 0.0]; 4], &[[0.0; 3]; 4]);
        assert_eq!(rms_tracking_error(&log, 0).unwrap(), 2.0);
        assert_eq!(effort_cost(&log, &DMatrix::identity(1, 1)).unwrap(), 0.0);
        assert_eq!(energy(&log, 0).unwrap(), 200.0);
        let tracked = log_from(&[1.0; 2], &[[1.0, 2.0, 3.0]; 2], &[[1.0, 2.0, 3.0]; 2]);
        assert_eq!(rms_tracking_error(&tracked, 0).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let empty = RunLog::new(RunHeader::default(), 1, 3);
        assert_eq!(rms_tracking_error(&empty, 0), Err(Error::EmptyLog));
        let log = log_from(&[0.0], &[[0.0; 3]], &[[0.0; 3]]);
        assert!(matches!(rms_tracking_error(&log, 3), Err(Error::ChannelOutOfRange { .. })));
        assert!(tracking_cost(&log, &DMatrix::zeros(2, 2)).is_err());
        let mut log = log;
        let rec = log.records[0].clone();
        assert!(log.push(rec).is_err());
    }

    #[test]
    fn normalization() {
        let base = MetricsRecord { e_rms: 1.5, j_y: 10.0, j_du: 4.0, energy: 300.0, t_sim: 10 };
        let same = normalize_comparison(&base, &base);
        assert!(same.iter().all(|e| e.percent == Some(100.0)));
        let double = MetricsRecord { e_rms: 3.0, j_y: 20.0, j_du: 8.0, energy: 600.0, t_sim: 10 };
        assert!(normalize_comparison(&base, &double).iter().all(|e| e.percent == Some(200.0)));
        let zero = MetricsRecord { j_du: 0.0, ..base };
        assert_eq!(normalize_comparison(&zero, &base)[2].percent, None);

        // One decimal per entry.
        let kmpc = MetricsRecord { e_rms: 1.0, j_y: 1.0, j_du: 1.0, energy: 1.0, t_sim: 2000 };
        let deepc = MetricsRecord { e_rms: 1.00712, j_y: 2.23149, j_du: 0.16391, energy: 1.06866, t_sim: 2000 };
        let row: Vec<_> = normalize_comparison(&kmpc, &deepc).iter().map(|e| e.percent.unwrap()).collect();
        assert_eq!(row, vec![100.7, 223.1, 16.4, 106.9]);
    }
}

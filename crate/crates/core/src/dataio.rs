//! Datasets, excitation signals, standard scaling and data-sufficiency checks.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::hankel::build_hankel;
use crate::linalg::{numerical_rank, RANK_TOLERANCE};
use crate::math::sqrt;

/// Recorded input/output trajectory, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Sampling time in seconds.
    pub ts: f64,
    /// Scaler the data were transformed with, if any.
    pub scaler: Option<ScalerParams>,
}

impl TrajectoryDataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>, ts: f64) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(dim_err(format!("u has {} samples, y has {}", u.nrows(), y.nrows())));
        }
        if u.nrows() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        if !(ts > 0.0) {
            return Err(Error::InvalidConfig(format!("sampling time must be positive, got {ts}")));
        }
        Ok(TrajectoryDataset { u, y, ts, scaler: None })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_u(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }

    /// First `len` samples.
    pub fn head(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(Error::TooShort { needed: len.max(1), got: self.len() });
        }
        Ok(TrajectoryDataset {
            u: self.u.rows(0, len).into_owned(),
            y: self.y.rows(0, len).into_owned(),
            ts: self.ts,
            scaler: self.scaler.clone(),
        })
    }
}

/// Per-channel mean and standard deviation (population convention).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub mean_u: DVector<f64>,
    pub std_u: DVector<f64>,
    pub mean_y: DVector<f64>,
    pub std_y: DVector<f64>,
}

impl ScalerParams {
    /// Zero mean, unit deviation: scaling is a no-op.
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        ScalerParams {
            mean_u: DVector::zeros(n_u),
            std_u: DVector::from_element(n_u, 1.0),
            mean_y: DVector::zeros(n_y),
            std_y: DVector::from_element(n_y, 1.0),
        }
    }

    pub fn n_u(&self) -> usize {
        self.mean_u.len()
    }

    pub fn n_y(&self) -> usize {
        self.mean_y.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.std_u.len() != self.n_u() || self.std_y.len() != self.n_y() {
            return Err(dim_err("scaler mean/std lengths differ"));
        }
        for (i, s) in self.std_u.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(Error::ZeroVariance { channel: format!("u{}", i + 1) });
            }
        }
        for (i, s) in self.std_y.iter().enumerate() {
            if !(*s > 0.0) {
                return Err(Error::ZeroVariance { channel: format!("y{}", i + 1) });
            }
        }
        Ok(())
    }

    pub fn scale_u(&self, u: &DVector<f64>) -> DVector<f64> {
        (u - &self.mean_u).component_div(&self.std_u)
    }

    pub fn unscale_u(&self, u: &DVector<f64>) -> DVector<f64> {
        u.component_mul(&self.std_u) + &self.mean_u
    }

    pub fn scale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        (y - &self.mean_y).component_div(&self.std_y)
    }

    pub fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.std_y) + &self.mean_y
    }

    /// Scales every row of a `T × n_u` matrix.
    pub fn scale_u_rows(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        map_rows(u, &self.mean_u, &self.std_u, false)
    }

    /// Scales every row of a `T × n_y` matrix.
    pub fn scale_y_rows(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        map_rows(y, &self.mean_y, &self.std_y, false)
    }

    pub fn unscale_u_rows(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        map_rows(u, &self.mean_u, &self.std_u, true)
    }

    pub fn unscale_y_rows(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        map_rows(y, &self.mean_y, &self.std_y, true)
    }

    /// Per-channel bounds mapped to scaled input coordinates.
    pub fn scale_u_bounds(&self, bounds: &[(f64, f64)]) -> Vec<(f64, f64)> {
        map_bounds(bounds, &self.mean_u, &self.std_u)
    }

    /// Per-channel bounds mapped to scaled output coordinates.
    pub fn scale_y_bounds(&self, bounds: &[(f64, f64)]) -> Vec<(f64, f64)> {
        map_bounds(bounds, &self.mean_y, &self.std_y)
    }
}

fn map_rows(m: &DMatrix<f64>, mean: &DVector<f64>, std: &DVector<f64>, invert: bool) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |t, c| {
        if invert {
            m[(t, c)] * std[c] + mean[c]
        } else {
            (m[(t, c)] - mean[c]) / std[c]
        }
    })
}

fn map_bounds(bounds: &[(f64, f64)], mean: &DVector<f64>, std: &DVector<f64>) -> Vec<(f64, f64)> {
    bounds
        .iter()
        .enumerate()
        .map(|(c, &(lo, hi))| ((lo - mean[c]) / std[c], (hi - mean[c]) / std[c]))
        .collect()
}

fn column_stats(m: &DMatrix<f64>, prefix: &str) -> Result<(DVector<f64>, DVector<f64>)> {
    let t = m.nrows() as f64;
    let mut mean = DVector::zeros(m.ncols());
    let mut std = DVector::zeros(m.ncols());
    for c in 0..m.ncols() {
        let col = m.column(c);
        let mu = col.sum() / t;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t;
        let sd = sqrt(var);
        if !(sd > 1e-12 * (1.0 + mu.abs())) {
            return Err(Error::ZeroVariance { channel: format!("{prefix}{}", c + 1) });
        }
        mean[c] = mu;
        std[c] = sd;
    }
    Ok((mean, std))
}

/// Per-channel mean and population standard deviation of a dataset.
pub fn fit_scaler(dataset: &TrajectoryDataset) -> Result<ScalerParams> {
    if dataset.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: dataset.len() });
    }
    let (mean_u, std_u) = column_stats(&dataset.u, "u")?;
    let (mean_y, std_y) = column_stats(&dataset.y, "y")?;
    Ok(ScalerParams { mean_u, std_u, mean_y, std_y })
}

/// Scales a dataset and records the scaler on the result.
pub fn apply_scaler(dataset: &TrajectoryDataset, params: &ScalerParams) -> Result<TrajectoryDataset> {
    check_scaler(dataset, params)?;
    Ok(TrajectoryDataset {
        u: params.scale_u_rows(&dataset.u),
        y: params.scale_y_rows(&dataset.y),
        ts: dataset.ts,
        scaler: Some(params.clone()),
    })
}

/// Maps a scaled dataset back to engineering units.
pub fn invert_scaler(dataset: &TrajectoryDataset, params: &ScalerParams) -> Result<TrajectoryDataset> {
    check_scaler(dataset, params)?;
    Ok(TrajectoryDataset {
        u: params.unscale_u_rows(&dataset.u),
        y: params.unscale_y_rows(&dataset.y),
        ts: dataset.ts,
        scaler: None,
    })
}

fn check_scaler(dataset: &TrajectoryDataset, params: &ScalerParams) -> Result<()> {
    params.validate()?;
    if params.n_u() != dataset.n_u() || params.n_y() != dataset.n_y() {
        return Err(dim_err("scaler dimensions differ from dataset"));
    }
    Ok(())
}

/// Random piecewise-constant excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    pub n_u: usize,
    /// Number of samples.
    pub samples: usize,
    pub ts: f64,
    /// Amplitude range per channel, engineering units.
    pub bounds: Vec<(f64, f64)>,
    /// Inclusive range of segment lengths in samples.
    pub step_duration_range: (usize, usize),
    pub seed: u64,
    /// Switch all channels at the same instants.
    pub synchronized: bool,
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_u == 0 || self.bounds.len() != self.n_u {
            return Err(dim_err(format!("{} bound pairs for {} inputs", self.bounds.len(), self.n_u)));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidConfig("sampling time must be positive".into()));
        }
        for (row, &(lower, upper)) in self.bounds.iter().enumerate() {
            if !(lower < upper) {
                return Err(Error::InvalidBounds { row, lower, upper });
            }
        }
        let (lo, hi) = self.step_duration_range;
        if !(1 <= lo && lo <= hi && hi <= self.samples) {
            return Err(Error::InvalidConfig(format!(
                "step duration range ({lo}, {hi}) must satisfy 1 <= min <= max <= {}",
                self.samples
            )));
        }
        Ok(())
    }
}

/// Draws a piecewise-constant input sequence (`samples × n_u`).
///
/// Segment lengths are uniform over `step_duration_range` and levels uniform
/// over each channel's bounds; the same seed always gives the same signal.
pub fn generate_step_excitation(spec: &ExcitationSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (min_len, max_len) = spec.step_duration_range;
    let mut u = DMatrix::zeros(spec.samples, spec.n_u);

    if spec.synchronized {
        let mut k = 0;
        while k < spec.samples {
            let len = rng.random_range(min_len..=max_len).min(spec.samples - k);
            for c in 0..spec.n_u {
                let (lo, hi) = spec.bounds[c];
                let level = rng.random_range(lo..=hi);
                u.view_mut((k, c), (len, 1)).fill(level);
            }
            k += len;
        }
    } else {
        for c in 0..spec.n_u {
            let (lo, hi) = spec.bounds[c];
            let mut k = 0;
            while k < spec.samples {
                let len = rng.random_range(min_len..=max_len).min(spec.samples - k);
                let level = rng.random_range(lo..=hi);
                u.view_mut((k, c), (len, 1)).fill(level);
                k += len;
            }
        }
    }
    Ok(u)
}

/// Smallest data length for which a PE input of the required order can
/// exist: `(n_u + 1)(T_ini + N + n) − 1`.
pub fn minimum_data_length(n_u: usize, t_ini: usize, horizon: usize, n_order: usize) -> usize {
    (n_u + 1) * (t_ini + horizon + n_order) - 1
}

/// Rank of the depth-`order` input Hankel matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcitationReport {
    pub rank: usize,
    /// `n_u · order`, the rank of a persistently exciting input.
    pub required: usize,
    pub is_full: bool,
}

/// Checks persistency of excitation of order `order` (`T × n_u` input).
pub fn persistent_excitation_check(u: &DMatrix<f64>, order: usize) -> Result<ExcitationReport> {
    let h = build_hankel(u, order)?;
    let rank = numerical_rank(&h, RANK_TOLERANCE);
    let required = u.ncols() * order;
    Ok(ExcitationReport { rank, required, is_full: rank == required })
}

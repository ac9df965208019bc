//! Tuning shared by both controllers.
//!
//! The horizon, weights and bounds are held in one [`SharedTuning`] value
//! that both controllers reference through an `Arc`, so a comparison can
//! never run with silently different settings.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{max_asymmetry, min_symmetric_eigenvalue};

/// Inclusive per-channel bounds `(lo, hi)` in engineering units.
pub type Bounds = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SharedTuning {
    /// Prediction horizon `N` in samples.
    pub horizon: usize,
    /// Output tracking weight (n_y × n_y), applied to scaled outputs.
    pub q: DMatrix<f64>,
    /// Input-rate weight (n_u × n_u), applied to scaled inputs.
    pub r: DMatrix<f64>,
    pub u_bounds: Bounds,
    pub y_bounds: Bounds,
    /// Sampling time in seconds.
    pub ts: f64,
}

impl SharedTuning {
    /// Checks dimensions, weight symmetry/semidefiniteness and bound order.
    pub fn new(
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        u_bounds: Bounds,
        y_bounds: Bounds,
        ts: f64,
    ) -> Result<Arc<Self>> {
        let t = SharedTuning { horizon, q, r, u_bounds, y_bounds, ts };
        t.validate()?;
        Ok(Arc::new(t))
    }

    pub fn n_u(&self) -> usize {
        self.u_bounds.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.ts > 0.0) {
            return Err(Error::InvalidConfig(format!("sampling time must be positive, got {}", self.ts)));
        }
        let (n_u, n_y) = (self.n_u(), self.n_y());
        if n_u == 0 || n_y == 0 {
            return Err(dim_err("tuning needs at least one input and one output"));
        }
        if self.q.shape() != (n_y, n_y) {
            return Err(dim_err(format!("Q is {:?}, expected ({n_y}, {n_y})", self.q.shape())));
        }
        if self.r.shape() != (n_u, n_u) {
            return Err(dim_err(format!("R is {:?}, expected ({n_u}, {n_u})", self.r.shape())));
        }
        for w in [&self.q, &self.r] {
            let scale = w.abs().max().max(1.0);
            let asymmetry = max_asymmetry(w);
            if asymmetry > 1e-9 * scale {
                return Err(Error::NotSymmetric { asymmetry });
            }
            let min_eigenvalue = min_symmetric_eigenvalue(w);
            if min_eigenvalue < -1e-8 * scale {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
            }
        }
        for (row, &(lower, upper)) in self.u_bounds.iter().chain(self.y_bounds.iter()).enumerate() {
            if lower.is_nan() || upper.is_nan() || lower > upper {
                return Err(Error::InvalidBounds { row, lower, upper });
            }
        }
        Ok(())
    }

    /// Fails with the name of the first field that differs.
    pub fn ensure_same(&self, other: &SharedTuning) -> Result<()> {
        let field = if self.horizon != other.horizon {
            "horizon"
        } else if self.q != other.q {
            "Q"
        } else if self.r != other.r {
            "R"
        } else if self.u_bounds != other.u_bounds {
            "input bounds"
        } else if self.y_bounds != other.y_bounds {
            "output bounds"
        } else if self.ts != other.ts {
            "sampling time"
        } else {
            return Ok(());
        };
        Err(Error::DivergentTuning(format!("{field} differs")))
    }

    /// True when `u` lies inside the input bounds exactly.
    pub fn input_within_bounds(&self, u: &DVector<f64>) -> bool {
        u.len() == self.n_u()
            && u.iter().zip(self.u_bounds.iter()).all(|(&v, &(lo, hi))| lo <= v && v <= hi)
    }
}

/// Rows `start .. start + n` of a reference profile (one row per sample).
/// Rows past the end repeat the last row.
pub fn reference_window(reference: &DMatrix<f64>, start: usize, n: usize) -> Result<DMatrix<f64>> {
    let rows = reference.nrows();
    if rows == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(DMatrix::from_fn(n, reference.ncols(), |k, c| reference[((start + k).min(rows - 1), c)]))
}

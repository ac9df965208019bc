//! Block-Hankel matrices and the past/future partition used by DeePC.
//!
//! Layout: column `j` of the depth-`L` Hankel matrix of a `T × n_c` signal
//! stacks samples `j, j+1, …, j+L−1`, each sample contributing its `n_c`
//! channels in order. Row `k·n_c + c` therefore holds channel `c` at lag `k`.

use alloc::format;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{least_norm_solve, stack_rows, unstack, vcat, vstack, RANK_TOLERANCE};

/// Depth-`depth` block-Hankel matrix of a `T × n_c` signal, shape
/// `(n_c·depth) × (T − depth + 1)`.
pub fn build_hankel(signal: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (t, n_c) = signal.shape();
    if depth == 0 {
        return Err(dim_err("Hankel depth must be at least 1"));
    }
    if t < depth {
        return Err(Error::TooShort { needed: depth, got: t });
    }
    let cols = t - depth + 1;
    Ok(DMatrix::from_fn(n_c * depth, cols, |row, j| signal[(j + row / n_c, row % n_c)]))
}

/// Past and future blocks of the input and output Hankel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub u_p: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl HankelBlocks {
    /// Builds both Hankel matrices of depth `t_ini + horizon` and splits them.
    pub fn from_trajectory(u: &DMatrix<f64>, y: &DMatrix<f64>, t_ini: usize, horizon: usize) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(dim_err(format!("u has {} samples, y has {}", u.nrows(), y.nrows())));
        }
        let depth = t_ini + horizon;
        partition_blocks(&build_hankel(u, depth)?, &build_hankel(y, depth)?, t_ini, horizon)
    }

    /// Number of trajectory columns `M = T − L + 1`.
    pub fn columns(&self) -> usize {
        self.u_p.ncols()
    }

    /// Hankel depth `L = T_ini + N`.
    pub fn depth(&self) -> usize {
        self.t_ini + self.horizon
    }

    /// `[U_p; U_f]`, the full input Hankel matrix.
    pub fn input_hankel(&self) -> DMatrix<f64> {
        vstack(&[&self.u_p, &self.u_f])
    }

    /// `[Y_p; Y_f]`, the full output Hankel matrix.
    pub fn output_hankel(&self) -> DMatrix<f64> {
        vstack(&[&self.y_p, &self.y_f])
    }
}

/// Splits depth-`(t_ini + horizon)` Hankel matrices into past and future rows.
pub fn partition_blocks(h_u: &DMatrix<f64>, h_y: &DMatrix<f64>, t_ini: usize, horizon: usize) -> Result<HankelBlocks> {
    let depth = t_ini + horizon;
    if t_ini == 0 || horizon == 0 {
        return Err(dim_err("T_ini and N must be at least 1"));
    }
    if h_u.nrows() % depth != 0 || h_y.nrows() % depth != 0 || h_u.nrows() == 0 || h_y.nrows() == 0 {
        return Err(dim_err(format!(
            "Hankel rows ({}, {}) are not multiples of depth {depth}",
            h_u.nrows(),
            h_y.nrows()
        )));
    }
    if h_u.ncols() != h_y.ncols() || h_u.ncols() == 0 {
        return Err(dim_err(format!("column counts differ: {} vs {}", h_u.ncols(), h_y.ncols())));
    }
    let n_u = h_u.nrows() / depth;
    let n_y = h_y.nrows() / depth;
    let m = h_u.ncols();
    Ok(HankelBlocks {
        u_p: h_u.rows(0, n_u * t_ini).into_owned(),
        u_f: h_u.rows(n_u * t_ini, n_u * horizon).into_owned(),
        y_p: h_y.rows(0, n_y * t_ini).into_owned(),
        y_f: h_y.rows(n_y * t_ini, n_y * horizon).into_owned(),
        t_ini,
        horizon,
        n_u,
        n_y,
    })
    .map(|b| {
        debug_assert_eq!(b.columns(), m);
        b
    })
}

/// Predicts the output continuation of a trajectory directly from data.
///
/// Finds the least-norm `g` with `U_p g = u_ini`, `Y_p g = y_ini`,
/// `U_f g = u_future` and returns `Y_f g` as an `N × n_y` matrix. All
/// arguments are one row per sample.
pub fn trajectory_completion(
    blocks: &HankelBlocks,
    u_ini: &DMatrix<f64>,
    y_ini: &DMatrix<f64>,
    u_future: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if u_ini.shape() != (blocks.t_ini, blocks.n_u)
        || y_ini.shape() != (blocks.t_ini, blocks.n_y)
        || u_future.shape() != (blocks.horizon, blocks.n_u)
    {
        return Err(dim_err("window lengths do not match T_ini and N"));
    }
    let lhs = vstack(&[&blocks.u_p, &blocks.y_p, &blocks.u_f]);
    let rhs = vcat(&[&stack_rows(u_ini), &stack_rows(y_ini), &stack_rows(u_future)]);
    let g = least_norm_solve(&lhs, &rhs, RANK_TOLERANCE);
    let residual = (&lhs * &g - &rhs).amax();
    if residual > 1e-6 * (1.0 + rhs.amax()) {
        return Err(Error::InconsistentTrajectory { residual });
    }
    let y: DVector<f64> = &blocks.y_f * g;
    Ok(unstack(&y, blocks.n_y))
}

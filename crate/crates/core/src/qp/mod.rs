//! Convex quadratic programs.
//!
//! ```text
//! minimize    ½ xᵀ H x + fᵀ x
//! subject to  A_eq x  = b_eq
//!             lb_in ≤ A_in x ≤ ub_in
//! ```
//!
//! Multipliers follow the Lagrangian `L = ½xᵀHx + fᵀx − νᵀ(A_eq x − b_eq) − λᵀ(A_in x − ·)`,
//! so stationarity reads `H x + f − A_eqᵀ ν − A_inᵀ λ = 0`. An active lower
//! bound has `λ > 0`, an active upper bound `λ < 0`.

mod admm;
mod clock;
pub mod oracle;

pub use admm::QpSolver;
pub use clock::{Clock, NoClock};
#[cfg(feature = "std")]
pub use clock::WallClock;
pub use oracle::brute_force_qp_oracle;

use alloc::format;
use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{inf_norm, max_asymmetry, min_symmetric_eigenvalue};

/// Bounds with magnitude at or above this value are treated as infinite.
pub const INFINITE_BOUND: f64 = 1e20;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub lb_in: DVector<f64>,
    pub ub_in: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem `min ½xᵀHx + fᵀx`.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        QpProblem {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            lb_in: DVector::zeros(0),
            ub_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_inequalities(
        mut self,
        a_in: DMatrix<f64>,
        lb_in: DVector<f64>,
        ub_in: DVector<f64>,
    ) -> Self {
        self.a_in = a_in;
        self.lb_in = lb_in;
        self.ub_in = ub_in;
        self
    }

    pub fn num_variables(&self) -> usize {
        self.f.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_inequalities(&self) -> usize {
        self.a_in.nrows()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.f.len();
        if n == 0 {
            return Err(dim_err("problem has no variables"));
        }
        if self.h.shape() != (n, n) {
            return Err(dim_err(format!("H is {:?}, expected ({n}, {n})", self.h.shape())));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(dim_err(format!(
                "A_eq is {:?} with {} rhs entries, expected {n} columns",
                self.a_eq.shape(),
                self.b_eq.len()
            )));
        }
        let m = self.a_in.nrows();
        if self.a_in.ncols() != n || self.lb_in.len() != m || self.ub_in.len() != m {
            return Err(dim_err(format!(
                "A_in is {:?} with {}/{} bound entries, expected {n} columns",
                self.a_in.shape(),
                self.lb_in.len(),
                self.ub_in.len()
            )));
        }
        Ok(())
    }

    pub fn check_bounds(&self) -> Result<()> {
        for (row, (&lower, &upper)) in self.lb_in.iter().zip(self.ub_in.iter()).enumerate() {
            if lower.is_nan() || upper.is_nan() || lower > upper {
                return Err(Error::InvalidBounds { row, lower, upper });
            }
        }
        Ok(())
    }

    /// Checks dimensions, bound ordering and symmetry of `H`. Debug builds
    /// also check that `H` is positive semidefinite.
    pub fn validate(&self) -> Result<()> {
        self.check_dimensions()?;
        self.check_bounds()?;
        let scale = self.h.abs().max().max(1.0);
        let asymmetry = max_asymmetry(&self.h);
        if asymmetry > 1e-9 * scale {
            return Err(Error::NotSymmetric { asymmetry });
        }
        if cfg!(debug_assertions) {
            let min_eigenvalue = min_symmetric_eigenvalue(&self.h);
            if min_eigenvalue < -1e-8 * scale {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    TimeLimit,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIter => "max_iter",
            QpStatus::TimeLimit => "time_limit",
            QpStatus::Infeasible => "infeasible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optimal" => Some(QpStatus::Optimal),
            "max_iter" => Some(QpStatus::MaxIter),
            "time_limit" => Some(QpStatus::TimeLimit),
            "infeasible" => Some(QpStatus::Infeasible),
            _ => None,
        }
    }

    pub fn is_optimal(self) -> bool {
        self == QpStatus::Optimal
    }
}

impl core::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub dual_eq: DVector<f64>,
    pub dual_in: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Wall-clock seconds; zero when no clock is available.
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Seconds. Only enforced when the solver has a clock.
    pub time_limit: f64,
    pub warm_start: Option<QpSolution>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_iterations: 10_000,
            time_limit: 10.0,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "solver tolerances must be positive (abs {}, rel {})",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::InvalidConfig("time_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Max-norm violations of the KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_in)
            .max(self.complementarity)
    }
}

/// Magnitudes the residuals are measured against for relative tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct KktScales {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub complementarity: f64,
}

impl KktScales {
    pub(crate) fn accepts(&self, r: &KktResiduals, abs_tol: f64, rel_tol: f64) -> bool {
        r.stationarity <= abs_tol + rel_tol * self.stationarity
            && r.primal_eq <= abs_tol + rel_tol * self.primal_eq
            && r.primal_in <= abs_tol + rel_tol * self.primal_in
            && r.complementarity <= abs_tol + rel_tol * self.complementarity
    }
}

/// KKT residuals of a candidate primal/dual pair.
pub fn kkt_residuals(problem: &QpProblem, solution: &QpSolution) -> Result<KktResiduals> {
    problem.check_dimensions()?;
    if solution.x.len() != problem.num_variables()
        || solution.dual_eq.len() != problem.num_equalities()
        || solution.dual_in.len() != problem.num_inequalities()
    {
        return Err(dim_err("solution does not match problem dimensions"));
    }
    Ok(residuals_and_scales(problem, &solution.x, &solution.dual_eq, &solution.dual_in).0)
}

pub(crate) fn residuals_and_scales(
    problem: &QpProblem,
    x: &DVector<f64>,
    dual_eq: &DVector<f64>,
    dual_in: &DVector<f64>,
) -> (KktResiduals, KktScales) {
    let hx = &problem.h * x;
    let eq_term = problem.a_eq.tr_mul(dual_eq);
    let in_term = problem.a_in.tr_mul(dual_in);
    let grad = &hx + &problem.f - &eq_term - &in_term;

    let aeq_x = &problem.a_eq * x;
    let ain_x = &problem.a_in * x;

    let primal_eq = inf_norm(&(&aeq_x - &problem.b_eq));
    let mut primal_in = 0.0f64;
    let mut complementarity = 0.0f64;
    for i in 0..ain_x.len() {
        let v = ain_x[i];
        let (lo, hi) = (problem.lb_in[i], problem.ub_in[i]);
        let lo_finite = lo > -INFINITE_BOUND;
        let hi_finite = hi < INFINITE_BOUND;
        if lo_finite {
            primal_in = primal_in.max(lo - v);
        }
        if hi_finite {
            primal_in = primal_in.max(v - hi);
        }
        let lam = dual_in[i];
        let c = if lam > 0.0 {
            if lo_finite {
                lam * (v - lo).abs()
            } else {
                lam
            }
        } else if lam < 0.0 {
            if hi_finite {
                -lam * (hi - v).abs()
            } else {
                -lam
            }
        } else {
            0.0
        };
        complementarity = complementarity.max(c);
    }

    let residuals = KktResiduals {
        stationarity: inf_norm(&grad),
        primal_eq,
        primal_in,
        complementarity,
    };
    let scales = KktScales {
        stationarity: inf_norm(&hx)
            .max(inf_norm(&problem.f))
            .max(inf_norm(&eq_term))
            .max(inf_norm(&in_term)),
        primal_eq: inf_norm(&aeq_x).max(inf_norm(&problem.b_eq)),
        primal_in: inf_norm(&ain_x),
        complementarity: inf_norm(dual_in) * inf_norm(&ain_x).max(1.0),
    };
    (residuals, scales)
}

/// Solves a QP with a fresh solver workspace.
pub fn solve_qp(problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution> {
    QpSolver::new().solve(problem, options)
}

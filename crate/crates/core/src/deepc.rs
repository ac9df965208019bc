//! Regularized DeePC.
//!
//! The predictor is the set of Hankel-column combinations `g`: the past
//! blocks pin `g` to the measured window (outputs through a slack `σ`), and
//! the future blocks give the planned trajectory `u = U_f g`, `y = Y_f g`.
//! Per sample the controller minimizes
//!
//! ```text
//! Σₖ ‖yₖ − rₖ‖²_Q + ‖uₖ − uₖ₋₁‖²_R + λ_g‖g‖² + λ_σ‖σ‖²
//! ```
//!
//! subject to box bounds on the planned `u` and `y`, with `u₋₁` the newest
//! input in the window.
//!
//! Three equivalent QP layouts are available:
//!
//! * [`DeepcMode::Full`] keeps `(g, u, y, σ)` as decision variables;
//! * [`DeepcMode::Condensed`] substitutes `u` and `y`, leaving `(g, σ)`;
//! * [`DeepcMode::Reduced`] additionally restricts `g` to the row space of
//!   the stacked Hankel blocks, `g = V_r β`. Components of `g` outside that
//!   space change no constraint and only add to `λ_g‖g‖²`, so the optimum
//!   lies inside it and `‖g‖ = ‖β‖`.
//!
//! All quantities inside the QP are in scaled coordinates.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::controller::{PredictiveController, StepOutcome};
use crate::dataio::ScalerParams;
use crate::error::{dim_err, Error, Result};
use crate::hankel::HankelBlocks;
use crate::linalg::{repeat_block_diag, stack_rows, unstack, vstack, RANK_TOLERANCE};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus, SolverOptions};
use crate::tuning::SharedTuning;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepcMode {
    Full,
    Condensed,
    Reduced,
}

impl DeepcMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DeepcMode::Full => "full",
            DeepcMode::Condensed => "condensed",
            DeepcMode::Reduced => "reduced",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(DeepcMode::Full),
            "condensed" => Some(DeepcMode::Condensed),
            "reduced" => Some(DeepcMode::Reduced),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepcConfig {
    pub tuning: Arc<SharedTuning>,
    pub t_ini: usize,
    pub lambda_g: f64,
    /// Slack weight on the past-output rows; `f64::INFINITY` removes the
    /// slack and matches the past outputs exactly.
    pub lambda_sigma: f64,
    /// Pin the first planned input and output to the newest window sample.
    pub enforce_continuity: bool,
    pub mode: DeepcMode,
}

impl DeepcConfig {
    pub fn new(tuning: Arc<SharedTuning>, t_ini: usize, lambda_g: f64, lambda_sigma: f64) -> Self {
        DeepcConfig {
            tuning,
            t_ini,
            lambda_g,
            lambda_sigma,
            enforce_continuity: false,
            mode: DeepcMode::Reduced,
        }
    }

    pub fn has_slack(&self) -> bool {
        self.lambda_sigma.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        self.tuning.validate()?;
        if self.t_ini == 0 {
            return Err(Error::InvalidConfig("T_ini must be at least 1".into()));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_g must be finite and >= 0, got {}", self.lambda_g)));
        }
        if !(self.lambda_sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda_sigma must be > 0, got {}", self.lambda_sigma)));
        }
        Ok(())
    }
}

/// The most recent `T_ini` input/output samples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    t_ini: usize,
    n_u: usize,
    n_y: usize,
    samples: VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl MeasurementWindow {
    pub fn new(t_ini: usize, n_u: usize, n_y: usize) -> Self {
        MeasurementWindow { t_ini, n_u, n_y, samples: VecDeque::with_capacity(t_ini + 1) }
    }

    /// Window holding the trailing `t_ini` rows of a trajectory.
    pub fn from_tail(u: &DMatrix<f64>, y: &DMatrix<f64>, t_ini: usize) -> Result<Self> {
        if u.nrows() != y.nrows() {
            return Err(dim_err("u and y have different lengths"));
        }
        if u.nrows() < t_ini {
            return Err(Error::TooShort { needed: t_ini, got: u.nrows() });
        }
        let mut w = MeasurementWindow::new(t_ini, u.ncols(), y.ncols());
        for k in (u.nrows() - t_ini)..u.nrows() {
            w.push(&u.row(k).transpose(), &y.row(k).transpose())?;
        }
        Ok(w)
    }

    /// Appends a sample, dropping the oldest once full.
    pub fn push(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if u.len() != self.n_u || y.len() != self.n_y {
            return Err(dim_err(format!(
                "window sample has ({}, {}) entries, expected ({}, {})",
                u.len(),
                y.len(),
                self.n_u,
                self.n_y
            )));
        }
        if self.samples.len() == self.t_ini {
            self.samples.pop_front();
        }
        self.samples.push_back((u.clone(), y.clone()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_ini(&self) -> usize {
        self.t_ini
    }

    pub fn is_ready(&self) -> bool {
        self.samples.len() == self.t_ini
    }

    fn ensure_ready(&self) -> Result<()> {
        if self.is_ready() {
            Ok(())
        } else {
            Err(Error::WindowNotInitialized { have: self.samples.len(), need: self.t_ini })
        }
    }

    /// `T_ini × n_u`, oldest row first.
    pub fn u_ini(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.samples.len(), self.n_u, |k, c| self.samples[k].0[c])
    }

    /// `T_ini × n_y`, oldest row first.
    pub fn y_ini(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.samples.len(), self.n_y, |k, c| self.samples[k].1[c])
    }

    pub fn newest(&self) -> Option<&(DVector<f64>, DVector<f64>)> {
        self.samples.back()
    }
}

/// Variable and row counts of an assembled DeePC QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeepcDimensions {
    /// Hankel columns `M`.
    pub columns: usize,
    /// Length of the coefficient block (`M`, or the retained rank in reduced mode).
    pub coefficients: usize,
    pub variables: usize,
    pub equalities: usize,
    /// Two-sided inequality rows.
    pub inequalities: usize,
}

impl DeepcDimensions {
    /// Inequalities counted as one-sided rows (finite or not).
    pub fn one_sided_inequalities(&self) -> usize {
        2 * self.inequalities
    }
}

/// One assembled QP together with the data needed to interpret its solution.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepcQp {
    pub problem: QpProblem,
    /// Added to the QP objective to recover the full cost.
    pub objective_offset: f64,
}

/// Solution of one DeePC problem in scaled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepcSolveRecord {
    pub g: DVector<f64>,
    /// `N × n_u`.
    pub u_plan: DMatrix<f64>,
    /// `N × n_y`.
    pub y_plan: DMatrix<f64>,
    /// Past-output slack, `T_ini·n_y` (zeros without slack).
    pub sigma_y: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
}

/// Precomputed, sample-independent parts of the DeePC QP.
#[derive(Debug, Clone)]
pub struct DeepcQpBuilder {
    config: DeepcConfig,
    n_u: usize,
    n_y: usize,
    columns: usize,
    /// `g = basis β` in reduced mode.
    basis: Option<DMatrix<f64>>,
    /// Hankel blocks expressed in the coefficient variables.
    p_uf: DMatrix<f64>,
    p_yf: DMatrix<f64>,
    h: DMatrix<f64>,
    a_eq: DMatrix<f64>,
    a_in: DMatrix<f64>,
    lb_in: DVector<f64>,
    ub_in: DVector<f64>,
    /// Linear-cost maps: `f_coef = g_ref r + g_uprev u_prev` (condensed forms).
    g_ref: DMatrix<f64>,
    g_uprev: DMatrix<f64>,
    q_bar: DMatrix<f64>,
}

impl DeepcQpBuilder {
    /// Assembles the constant parts. Bounds are in scaled coordinates.
    pub fn new(
        blocks: &HankelBlocks,
        config: &DeepcConfig,
        u_bounds: &[(f64, f64)],
        y_bounds: &[(f64, f64)],
    ) -> Result<Self> {
        config.validate()?;
        let tuning = &config.tuning;
        let (n_u, n_y) = (blocks.n_u, blocks.n_y);
        let horizon = tuning.horizon;
        if blocks.t_ini != config.t_ini || blocks.horizon != horizon {
            return Err(dim_err(format!(
                "Hankel blocks are built for (T_ini, N) = ({}, {}), config asks for ({}, {})",
                blocks.t_ini, blocks.horizon, config.t_ini, horizon
            )));
        }
        if n_u != tuning.n_u() || n_y != tuning.n_y() || u_bounds.len() != n_u || y_bounds.len() != n_y {
            return Err(dim_err("channel counts of blocks, tuning and bounds differ"));
        }
        let t_ini = config.t_ini;
        let columns = blocks.columns();

        let (basis, p_up, p_yp, p_uf, p_yf) = match config.mode {
            DeepcMode::Reduced => {
                let w = vstack(&[&blocks.u_p, &blocks.y_p, &blocks.u_f, &blocks.y_f]);
                let (v_r, p) = row_space_basis(&w);
                let r1 = n_u * t_ini;
                let r2 = r1 + n_y * t_ini;
                let r3 = r2 + n_u * horizon;
                (
                    Some(v_r),
                    p.rows(0, r1).into_owned(),
                    p.rows(r1, r2 - r1).into_owned(),
                    p.rows(r2, r3 - r2).into_owned(),
                    p.rows(r3, p.nrows() - r3).into_owned(),
                )
            }
            _ => (None, blocks.u_p.clone(), blocks.y_p.clone(), blocks.u_f.clone(), blocks.y_f.clone()),
        };
        let nb = p_up.ncols();
        let n_sigma = if config.has_slack() { n_y * t_ini } else { 0 };
        let nu_all = n_u * horizon;
        let ny_all = n_y * horizon;

        let q_bar = repeat_block_diag(&tuning.q, horizon);
        let rate = rate_hessian(&tuning.r, horizon);
        let u_lb = tile_bounds(u_bounds, horizon, true);
        let u_ub = tile_bounds(u_bounds, horizon, false);
        let y_lb = tile_bounds(y_bounds, horizon, true);
        let y_ub = tile_bounds(y_bounds, horizon, false);
        let lb_in = crate::linalg::vcat(&[&u_lb, &y_lb]);
        let ub_in = crate::linalg::vcat(&[&u_ub, &y_ub]);

        let cont_rows = if config.enforce_continuity { n_u + n_y } else { 0 };
        let m_eq_core = n_u * t_ini + n_y * t_ini;

        let mut builder = DeepcQpBuilder {
            config: config.clone(),
            n_u,
            n_y,
            columns,
            basis,
            p_uf: DMatrix::zeros(0, 0),
            p_yf: DMatrix::zeros(0, 0),
            h: DMatrix::zeros(0, 0),
            a_eq: DMatrix::zeros(0, 0),
            a_in: DMatrix::zeros(0, 0),
            lb_in,
            ub_in,
            g_ref: DMatrix::zeros(0, 0),
            g_uprev: DMatrix::zeros(0, 0),
            q_bar,
        };

        match config.mode {
            DeepcMode::Full => {
                let n = nb + nu_all + ny_all + n_sigma;
                let (ou, oy, os) = (nb, nb + nu_all, nb + nu_all + ny_all);
                let mut h = DMatrix::zeros(n, n);
                for j in 0..nb {
                    h[(j, j)] = 2.0 * config.lambda_g;
                }
                h.view_mut((ou, ou), (nu_all, nu_all)).copy_from(&(&rate * 2.0));
                h.view_mut((oy, oy), (ny_all, ny_all)).copy_from(&(&builder.q_bar * 2.0));
                for j in 0..n_sigma {
                    h[(os + j, os + j)] = 2.0 * config.lambda_sigma;
                }

                let m_eq = m_eq_core + nu_all + ny_all + cont_rows;
                let mut a_eq = DMatrix::zeros(m_eq, n);
                let mut row = 0;
                a_eq.view_mut((row, 0), (n_u * t_ini, nb)).copy_from(&p_up);
                row += n_u * t_ini;
                a_eq.view_mut((row, 0), (n_y * t_ini, nb)).copy_from(&p_yp);
                for j in 0..n_sigma {
                    a_eq[(row + j, os + j)] = -1.0;
                }
                row += n_y * t_ini;
                a_eq.view_mut((row, 0), (nu_all, nb)).copy_from(&p_uf);
                for j in 0..nu_all {
                    a_eq[(row + j, ou + j)] = -1.0;
                }
                row += nu_all;
                a_eq.view_mut((row, 0), (ny_all, nb)).copy_from(&p_yf);
                for j in 0..ny_all {
                    a_eq[(row + j, oy + j)] = -1.0;
                }
                row += ny_all;
                if config.enforce_continuity {
                    for j in 0..n_u {
                        a_eq[(row + j, ou + j)] = 1.0;
                    }
                    for j in 0..n_y {
                        a_eq[(row + n_u + j, oy + j)] = 1.0;
                    }
                }

                let mut a_in = DMatrix::zeros(nu_all + ny_all, n);
                for j in 0..(nu_all + ny_all) {
                    a_in[(j, ou + j)] = 1.0;
                }
                builder.h = h;
                builder.a_eq = a_eq;
                builder.a_in = a_in;
            }
            DeepcMode::Condensed | DeepcMode::Reduced => {
                let n = nb + n_sigma;
                let mut h = DMatrix::zeros(n, n);
                let mut hb = p_yf.tr_mul(&(&builder.q_bar * &p_yf));
                hb += p_uf.tr_mul(&(&rate * &p_uf));
                for j in 0..nb {
                    hb[(j, j)] += config.lambda_g;
                }
                hb *= 2.0;
                // Symmetrize away roundoff from the products.
                let hb = (&hb + hb.transpose()) * 0.5;
                h.view_mut((0, 0), (nb, nb)).copy_from(&hb);
                for j in 0..n_sigma {
                    h[(nb + j, nb + j)] = 2.0 * config.lambda_sigma;
                }

                let m_eq = m_eq_core + cont_rows;
                let mut a_eq = DMatrix::zeros(m_eq, n);
                a_eq.view_mut((0, 0), (n_u * t_ini, nb)).copy_from(&p_up);
                a_eq.view_mut((n_u * t_ini, 0), (n_y * t_ini, nb)).copy_from(&p_yp);
                for j in 0..n_sigma {
                    a_eq[(n_u * t_ini + j, nb + j)] = -1.0;
                }
                if config.enforce_continuity {
                    a_eq.view_mut((m_eq_core, 0), (n_u, nb)).copy_from(&p_uf.rows(0, n_u));
                    a_eq.view_mut((m_eq_core + n_u, 0), (n_y, nb)).copy_from(&p_yf.rows(0, n_y));
                }

                let mut a_in = DMatrix::zeros(nu_all + ny_all, n);
                a_in.view_mut((0, 0), (nu_all, nb)).copy_from(&p_uf);
                a_in.view_mut((nu_all, 0), (ny_all, nb)).copy_from(&p_yf);

                builder.g_ref = p_yf.tr_mul(&builder.q_bar) * -2.0;
                builder.g_uprev = p_uf.rows(0, n_u).tr_mul(&tuning.r) * -2.0;
                builder.h = h;
                builder.a_eq = a_eq;
                builder.a_in = a_in;
            }
        }
        builder.p_uf = p_uf;
        builder.p_yf = p_yf;
        Ok(builder)
    }

    pub fn config(&self) -> &DeepcConfig {
        &self.config
    }

    pub fn dimensions(&self) -> DeepcDimensions {
        DeepcDimensions {
            columns: self.columns,
            coefficients: self.p_uf.ncols(),
            variables: self.h.nrows(),
            equalities: self.a_eq.nrows(),
            inequalities: self.a_in.nrows(),
        }
    }

    /// Counts derived from the layout alone, independent of the assembled matrices.
    pub fn expected_dimensions(&self) -> DeepcDimensions {
        let c = &self.config;
        let n = c.tuning.horizon;
        let nb = self.p_uf.ncols();
        let n_sigma = if c.has_slack() { self.n_y * c.t_ini } else { 0 };
        let cont = if c.enforce_continuity { self.n_u + self.n_y } else { 0 };
        let past = (self.n_u + self.n_y) * c.t_ini;
        let future = (self.n_u + self.n_y) * n;
        let (variables, equalities) = match c.mode {
            DeepcMode::Full => (nb + future + n_sigma, past + future + cont),
            _ => (nb + n_sigma, past + cont),
        };
        DeepcDimensions { columns: self.columns, coefficients: nb, variables, equalities, inequalities: future }
    }

    /// QP for one sample. `reference` is `N × n_y`; all data scaled.
    pub fn build(&self, window: &MeasurementWindow, reference: &DMatrix<f64>, u_prev: &DVector<f64>) -> Result<DeepcQp> {
        window.ensure_ready()?;
        let c = &self.config;
        let horizon = c.tuning.horizon;
        if window.t_ini() != c.t_ini || window.n_u != self.n_u || window.n_y != self.n_y {
            return Err(dim_err("window does not match T_ini or channel counts"));
        }
        if reference.nrows() == 0 {
            return Err(Error::EmptyReference);
        }
        if reference.shape() != (horizon, self.n_y) {
            return Err(dim_err(format!("reference is {:?}, expected ({horizon}, {})", reference.shape(), self.n_y)));
        }
        if u_prev.len() != self.n_u {
            return Err(dim_err("u_prev length differs from n_u"));
        }

        let u_ini = window.u_ini();
        let y_ini = window.y_ini();
        let r = stack_rows(reference);
        let offset = r.dot(&(&self.q_bar * &r)) + u_prev.dot(&(&c.tuning.r * u_prev));

        let n = self.h.nrows();
        let nb = self.p_uf.ncols();
        let mut f = DVector::zeros(n);
        match c.mode {
            DeepcMode::Full => {
                let (ou, oy) = (nb, nb + self.n_u * horizon);
                let fu = &c.tuning.r * u_prev * -2.0;
                f.rows_mut(ou, self.n_u).copy_from(&fu);
                let fy = &self.q_bar * &r * -2.0;
                f.rows_mut(oy, self.n_y * horizon).copy_from(&fy);
            }
            _ => {
                let fb = &self.g_ref * &r + &self.g_uprev * u_prev;
                f.rows_mut(0, nb).copy_from(&fb);
            }
        }

        let mut b_eq = DVector::zeros(self.a_eq.nrows());
        let past_u = stack_rows(&u_ini);
        let past_y = stack_rows(&y_ini);
        b_eq.rows_mut(0, past_u.len()).copy_from(&past_u);
        b_eq.rows_mut(past_u.len(), past_y.len()).copy_from(&past_y);
        if c.enforce_continuity {
            let (u_last, y_last) = window.newest().expect("window is ready");
            let start = self.a_eq.nrows() - self.n_u - self.n_y;
            b_eq.rows_mut(start, self.n_u).copy_from(u_last);
            b_eq.rows_mut(start + self.n_u, self.n_y).copy_from(y_last);
        }

        let problem = QpProblem {
            h: self.h.clone(),
            f,
            a_eq: self.a_eq.clone(),
            b_eq,
            a_in: self.a_in.clone(),
            lb_in: self.lb_in.clone(),
            ub_in: self.ub_in.clone(),
        };
        Ok(DeepcQp { problem, objective_offset: offset })
    }

    /// Interprets a QP solution.
    pub fn record(&self, qp: &DeepcQp, solution: &QpSolution) -> DeepcSolveRecord {
        let c = &self.config;
        let horizon = c.tuning.horizon;
        let nb = self.p_uf.ncols();
        let coef = solution.x.rows(0, nb).into_owned();
        let g = match &self.basis {
            Some(v) => v * &coef,
            None => coef.clone(),
        };
        let (u, y) = match c.mode {
            DeepcMode::Full => (
                solution.x.rows(nb, self.n_u * horizon).into_owned(),
                solution.x.rows(nb + self.n_u * horizon, self.n_y * horizon).into_owned(),
            ),
            _ => (&self.p_uf * &coef, &self.p_yf * &coef),
        };
        let n_sigma = self.n_y * c.t_ini;
        let sigma_y = if c.has_slack() {
            let start = solution.x.len() - n_sigma;
            solution.x.rows(start, n_sigma).into_owned()
        } else {
            DVector::zeros(n_sigma)
        };
        DeepcSolveRecord {
            g,
            u_plan: unstack(&u, self.n_u),
            y_plan: unstack(&y, self.n_y),
            sigma_y,
            objective: solution.objective + qp.objective_offset,
            status: solution.status,
        }
    }
}

/// Orthonormal basis `V_r` of the row space of `w` and the projection `w V_r`.
fn row_space_basis(w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    // Decompose the tall transpose: wᵀ = U S Vᵀ, so w = V S Uᵀ and the row
    // space of w is spanned by the leading columns of U.
    let svd = w.transpose().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let largest = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| largest > 0.0 && svd.singular_values[i] > RANK_TOLERANCE * largest)
        .collect();
    let basis = DMatrix::from_fn(w.ncols(), keep.len(), |i, j| u[(i, keep[j])]);
    let proj = DMatrix::from_fn(w.nrows(), keep.len(), |i, j| v_t[(keep[j], i)] * svd.singular_values[keep[j]]);
    (basis, proj)
}

/// `DᵀR̄D` where `D` maps a stacked input plan to its increments.
fn rate_hessian(r: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n_u = r.nrows();
    let mut out = DMatrix::zeros(n_u * horizon, n_u * horizon);
    for k in 0..horizon {
        // Term k: (u_k − u_{k−1})ᵀ R (u_k − u_{k−1}).
        let i = k * n_u;
        let mut add = |a: usize, b: usize, sign: f64| {
            let mut view = out.view_mut((a, b), (n_u, n_u));
            view += r * sign;
        };
        add(i, i, 1.0);
        if k > 0 {
            let j = i - n_u;
            add(j, j, 1.0);
            add(i, j, -1.0);
            add(j, i, -1.0);
        }
    }
    out
}

fn tile_bounds(bounds: &[(f64, f64)], horizon: usize, lower: bool) -> DVector<f64> {
    let n = bounds.len();
    DVector::from_fn(n * horizon, |i, _| {
        let (lo, hi) = bounds[i % n];
        if lower {
            lo
        } else {
            hi
        }
    })
}

/// Convenience wrapper: assemble the QP for a single sample.
pub fn build_deepc_qp(
    blocks: &HankelBlocks,
    window: &MeasurementWindow,
    reference: &DMatrix<f64>,
    config: &DeepcConfig,
    u_prev: &DVector<f64>,
    scaler: &ScalerParams,
) -> Result<(DeepcQpBuilder, DeepcQp)> {
    let builder = DeepcQpBuilder::new(
        blocks,
        config,
        &scaler.scale_u_bounds(&config.tuning.u_bounds),
        &scaler.scale_y_bounds(&config.tuning.y_bounds),
    )?;
    let qp = builder.build(window, reference, u_prev)?;
    Ok((builder, qp))
}

/// Relative bound violation tolerated (and clipped) after unscaling.
pub(crate) const ROUNDOFF_BOUND_SLACK: f64 = 1e-6;

/// Maps a planned scaled input to engineering units. Returns `None` when it
/// violates the bounds by more than roundoff.
pub(crate) fn admissible_input(u_scaled: &DVector<f64>, scaler: &ScalerParams, bounds: &[(f64, f64)]) -> Option<DVector<f64>> {
    let mut u = scaler.unscale_u(u_scaled);
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        let slack = ROUNDOFF_BOUND_SLACK * (hi - lo).abs().max(1.0);
        if !u[i].is_finite() || u[i] < lo - slack || u[i] > hi + slack {
            return None;
        }
        u[i] = u[i].clamp(lo, hi);
    }
    Some(u)
}

/// Receding-horizon DeePC controller.
#[derive(Debug, Clone)]
pub struct DeepcController {
    builder: DeepcQpBuilder,
    scaler: ScalerParams,
    window: MeasurementWindow,
    solver: QpSolver,
    options: SolverOptions,
    warm: Option<QpSolution>,
    last_applied: Option<DVector<f64>>,
    last_record: Option<DeepcSolveRecord>,
}

impl DeepcController {
    /// `blocks` must be built from data scaled with `scaler`.
    pub fn new(blocks: &HankelBlocks, config: DeepcConfig, scaler: ScalerParams, options: SolverOptions) -> Result<Self> {
        scaler.validate()?;
        options.validate()?;
        let builder = DeepcQpBuilder::new(
            blocks,
            &config,
            &scaler.scale_u_bounds(&config.tuning.u_bounds),
            &scaler.scale_y_bounds(&config.tuning.y_bounds),
        )?;
        let window = MeasurementWindow::new(config.t_ini, blocks.n_u, blocks.n_y);
        Ok(DeepcController {
            builder,
            scaler,
            window,
            solver: QpSolver::new(),
            options,
            warm: None,
            last_applied: None,
            last_record: None,
        })
    }

    pub fn builder(&self) -> &DeepcQpBuilder {
        &self.builder
    }

    /// Window contents in scaled coordinates.
    pub fn window(&self) -> &MeasurementWindow {
        &self.window
    }

    pub fn last_record(&self) -> Option<&DeepcSolveRecord> {
        self.last_record.as_ref()
    }
}

impl PredictiveController for DeepcController {
    fn name(&self) -> String {
        "deepc".into()
    }

    fn tuning(&self) -> &SharedTuning {
        &self.builder.config.tuning
    }

    fn observe(&mut self, u_applied: &DVector<f64>, y_measured: &DVector<f64>) -> Result<()> {
        self.window.push(&self.scaler.scale_u(u_applied), &self.scaler.scale_y(y_measured))?;
        self.last_applied = Some(u_applied.clone());
        Ok(())
    }

    fn compute(&mut self, reference: &DMatrix<f64>) -> Result<StepOutcome> {
        self.window.ensure_ready()?;
        let u_prev = self.window.newest().expect("window is ready").0.clone();
        let reference = self.scaler.scale_y_rows(reference);
        let qp = self.builder.build(&self.window, &reference, &u_prev)?;
        let options = SolverOptions { warm_start: self.warm.take(), ..self.options.clone() };
        let solution = self.solver.solve(&qp.problem, &options)?;
        let record = self.builder.record(&qp, &solution);

        let hold = self.last_applied.clone().unwrap_or_else(|| self.scaler.unscale_u(&u_prev));
        let admissible = if solution.status.is_optimal() {
            let first = record.u_plan.row(0).transpose();
            admissible_input(&first, &self.scaler, &self.builder.config.tuning.u_bounds)
        } else {
            None
        };
        let outcome = StepOutcome {
            u: admissible.clone().unwrap_or(hold),
            status: solution.status,
            objective: record.objective,
            iterations: solution.iterations,
            solve_time: solution.solve_time,
            fallback: admissible.is_none(),
        };
        if admissible.is_some() {
            self.warm = Some(solution);
        }
        self.last_record = Some(record);
        Ok(outcome)
    }

    fn last_applied(&self) -> Option<&DVector<f64>> {
        self.last_applied.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tuning(horizon: usize) -> Arc<SharedTuning> {
        SharedTuning::new(
            horizon,
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1) * 0.1,
            vec![(-100.0, 100.0)],
            vec![(-100.0, 100.0)],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn window_from_tail_and_shift() {
        let u = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DMatrix::from_column_slice(3, 1, &[5.0, 6.0, 7.0]);
        let mut w = MeasurementWindow::from_tail(&u, &y, 2).unwrap();
        assert_eq!(w.u_ini().as_slice(), &[2.0, 3.0]);
        assert_eq!(w.y_ini().as_slice(), &[6.0, 7.0]);
        w.push(&DVector::from_element(1, 4.0), &DVector::from_element(1, 8.0)).unwrap();
        assert_eq!(w.u_ini().as_slice(), &[3.0, 4.0]);
        assert_eq!(w.y_ini().as_slice(), &[7.0, 8.0]);
        assert!(MeasurementWindow::from_tail(&u, &y, 4).is_err());
    }

    #[test]
    fn unready_window_is_an_error() {
        let w = MeasurementWindow::new(2, 1, 1);
        assert_eq!(w.ensure_ready(), Err(Error::WindowNotInitialized { have: 0, need: 2 }));
    }

    #[test]
    fn rate_hessian_matches_explicit_difference_operator() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let n = 3;
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            for c in 0..2 {
                d[(2 * k + c, 2 * k + c)] = 1.0;
                if k > 0 {
                    d[(2 * k + c, 2 * (k - 1) + c)] = -1.0;
                }
            }
        }
        let explicit = d.transpose() * repeat_block_diag(&r, n) * &d;
        assert!((rate_hessian(&r, n) - explicit).amax() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = DeepcConfig::new(tuning(2), 1, 1.0, 1.0);
        assert!(c.validate().is_ok());
        c.lambda_sigma = 0.0;
        assert!(c.validate().is_err());
        c.lambda_sigma = f64::INFINITY;
        assert!(c.validate().is_ok());
        c.lambda_g = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [DeepcMode::Full, DeepcMode::Condensed, DeepcMode::Reduced] {
            assert_eq!(DeepcMode::parse(m.as_str()), Some(m));
        }
    }

    #[test]
    fn admissible_input_clips_roundoff_only() {
        let s = ScalerParams::identity(1, 1);
        let b = [(0.0, 1.0)];
        assert_eq!(admissible_input(&DVector::from_element(1, 1.0 + 1e-9), &s, &b).unwrap()[0], 1.0);
        assert!(admissible_input(&DVector::from_element(1, 1.1), &s, &b).is_none());
    }
}

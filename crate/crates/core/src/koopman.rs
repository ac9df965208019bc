//! Koopman MPC with an output-disturbance estimator.
//!
//! A lifted linear model `z⁺ = A z + B u`, `y = C z` is identified by least
//! squares on a fixed time-delay dictionary (EDMD). The model is augmented
//! with a constant output disturbance `d`,
//!
//! ```text
//! ξ = [z; d],   Ā = [A 0; 0 I],   B̄ = [B; 0],   C̄ = [C I],
//! ```
//!
//! and a Kalman filter estimates `ξ`. The controller predicts with `d`
//! frozen at its estimate, which removes steady-state offset under constant
//! model mismatch.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::controller::{PredictiveController, StepOutcome};
use crate::dataio::{ScalerParams, TrajectoryDataset};
use crate::deepc::admissible_input;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{numerical_rank, pinv, repeat_block_diag, stack_rows, unstack, RANK_TOLERANCE};
use crate::math::sqrt;
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus, SolverOptions};
use crate::tuning::SharedTuning;

/// Dictionary mapping measured history to the lifted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lift {
    /// `z_t = y_t`.
    Identity,
    /// `z_t = [y_t; y_{t−1}; …; y_{t−p}; u_{t−1}; …; u_{t−q}]`.
    DelayEmbedding { output_delays: usize, input_delays: usize },
    /// Matrices supplied directly; no dictionary is attached.
    External,
}

impl Lift {
    /// Lifted dimension for the given channel counts (`None` for `External`).
    pub fn dimension(&self, n_y: usize, n_u: usize) -> Option<usize> {
        match *self {
            Lift::Identity => Some(n_y),
            Lift::DelayEmbedding { output_delays, input_delays } => Some(n_y * (output_delays + 1) + n_u * input_delays),
            Lift::External => None,
        }
    }

    /// Samples of history needed before the first lifted state.
    pub fn history(&self) -> usize {
        match *self {
            Lift::DelayEmbedding { output_delays, input_delays } => output_delays.max(input_delays),
            _ => 0,
        }
    }

    /// Delay embedding with `n_z` states, balancing output and input delays.
    pub fn delay_embedding_for(n_z: usize, n_y: usize, n_u: usize) -> Result<Self> {
        if n_z == n_y {
            return Ok(Lift::Identity);
        }
        let mut best: Option<(usize, usize)> = None;
        for p in 0..=n_z / n_y.max(1) {
            let used = n_y * (p + 1);
            if used > n_z || n_u == 0 {
                continue;
            }
            let rest = n_z - used;
            if rest % n_u != 0 {
                continue;
            }
            let q = rest / n_u;
            let better = best.map_or(true, |(bp, bq)| p.abs_diff(q) < bp.abs_diff(bq));
            if better {
                best = Some((p, q));
            }
        }
        best.map(|(p, q)| Lift::DelayEmbedding { output_delays: p, input_delays: q }).ok_or_else(|| {
            Error::InvalidConfig(format!("no delay embedding of {n_y} outputs and {n_u} inputs has {n_z} states"))
        })
    }

    /// Lifted state at sample `t` of a trajectory (`t ≥ history()`).
    pub fn lift_at(&self, u: &DMatrix<f64>, y: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        let (n_u, n_y) = (u.ncols(), y.ncols());
        if t < self.history() || t >= y.nrows() {
            return Err(Error::TooShort { needed: self.history() + 1, got: t + 1 });
        }
        match *self {
            Lift::Identity => Ok(y.row(t).transpose()),
            Lift::DelayEmbedding { output_delays, input_delays } => {
                let n_z = n_y * (output_delays + 1) + n_u * input_delays;
                let mut z = DVector::zeros(n_z);
                for k in 0..=output_delays {
                    z.rows_mut(k * n_y, n_y).copy_from(&y.row(t - k).transpose());
                }
                let base = n_y * (output_delays + 1);
                for k in 1..=input_delays {
                    z.rows_mut(base + (k - 1) * n_u, n_u).copy_from(&u.row(t - k).transpose());
                }
                Ok(z)
            }
            Lift::External => Err(Error::InvalidConfig("external models have no dictionary".into())),
        }
    }
}

/// Lifted linear model `z⁺ = A z + B u`, `y = C z`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub lift: Lift,
}

impl KoopmanModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, lift: Lift) -> Result<Self> {
        let m = KoopmanModel { a, b, c, lift };
        m.validate()?;
        Ok(m)
    }

    pub fn n_z(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n || self.b.nrows() != n || self.c.ncols() != n || n == 0 {
            return Err(dim_err(format!(
                "A {:?}, B {:?}, C {:?} are inconsistent",
                self.a.shape(),
                self.b.shape(),
                self.c.shape()
            )));
        }
        if let Some(dim) = self.lift.dimension(self.n_y(), self.n_u()) {
            if dim != n {
                return Err(dim_err(format!("dictionary has {dim} states, model has {n}")));
            }
        }
        if self.a.iter().chain(self.b.iter()).chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }
}

/// Fit quality of an identified model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentificationReport {
    /// RMS one-step error of the lifted-state regression.
    pub state_residual: f64,
    /// RMS error of the output reconstruction `y ≈ C z`.
    pub output_residual: f64,
    pub transitions: usize,
}

/// Least-squares EDMD on a time-delay dictionary.
pub fn identify_edmd(dataset: &TrajectoryDataset, n_z: usize, lift: Lift) -> Result<(KoopmanModel, IdentificationReport)> {
    let (n_u, n_y) = (dataset.n_u(), dataset.n_y());
    match lift.dimension(n_y, n_u) {
        Some(d) if d == n_z => {}
        Some(d) => return Err(dim_err(format!("dictionary has {d} states, requested {n_z}"))),
        None => return Err(Error::InvalidConfig("identification needs a dictionary".into())),
    }
    let needed = n_z + 10 + lift.history();
    if dataset.len() < needed {
        return Err(Error::TooShort { needed, got: dataset.len() });
    }
    let start = lift.history();
    let count = dataset.len() - 1 - start;

    let mut z_now = DMatrix::zeros(n_z, count);
    let mut z_next = DMatrix::zeros(n_z, count);
    let mut regressor = DMatrix::zeros(n_z + n_u, count);
    let mut outputs = DMatrix::zeros(n_y, count);
    for (j, t) in (start..dataset.len() - 1).enumerate() {
        let z = lift.lift_at(&dataset.u, &dataset.y, t)?;
        let zn = lift.lift_at(&dataset.u, &dataset.y, t + 1)?;
        z_now.set_column(j, &z);
        z_next.set_column(j, &zn);
        regressor.view_mut((0, j), (n_z, 1)).copy_from(&z);
        regressor.view_mut((n_z, j), (n_u, 1)).copy_from(&dataset.u.row(t).transpose());
        outputs.set_column(j, &dataset.y.row(t).transpose());
    }

    let rank = numerical_rank(&regressor, 1e-9);
    if rank < n_z + n_u {
        return Err(Error::RankDeficient { rank, required: n_z + n_u });
    }
    let ab = &z_next * pinv(&regressor, RANK_TOLERANCE);
    let c = &outputs * pinv(&z_now, RANK_TOLERANCE);
    let a = ab.columns(0, n_z).into_owned();
    let b = ab.columns(n_z, n_u).into_owned();

    let rms = |m: &DMatrix<f64>| sqrt(m.norm_squared() / m.len().max(1) as f64);
    let report = IdentificationReport {
        state_residual: rms(&(&z_next - &ab * &regressor)),
        output_residual: rms(&(&outputs - &c * &z_now)),
        transitions: count,
    };
    Ok((KoopmanModel::new(a, b, c, lift)?, report))
}

/// Disturbance-augmented model.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub n_z: usize,
    pub n_d: usize,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        self.n_z + self.n_d
    }

    /// The `C` block acting on the lifted state.
    pub fn c_z(&self) -> DMatrix<f64> {
        self.c_bar.columns(0, self.n_z).into_owned()
    }
}

/// Appends a constant output disturbance with `n_d = n_y`.
pub fn augment_model(model: &KoopmanModel) -> AugmentedModel {
    let (n_z, n_u, n_y) = (model.n_z(), model.n_u(), model.n_y());
    let dim = n_z + n_y;
    let mut a_bar = DMatrix::zeros(dim, dim);
    a_bar.view_mut((0, 0), (n_z, n_z)).copy_from(&model.a);
    a_bar.view_mut((n_z, n_z), (n_y, n_y)).fill_with_identity();
    let mut b_bar = DMatrix::zeros(dim, n_u);
    b_bar.view_mut((0, 0), (n_z, n_u)).copy_from(&model.b);
    let mut c_bar = DMatrix::zeros(n_y, dim);
    c_bar.view_mut((0, 0), (n_y, n_z)).copy_from(&model.c);
    c_bar.view_mut((0, n_z), (n_y, n_y)).fill_with_identity();
    AugmentedModel { a_bar, b_bar, c_bar, n_z, n_d: n_y }
}

/// Diagonal noise levels of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanSettings {
    /// Process variance on each lifted state.
    pub q_z: f64,
    /// Process variance on each disturbance state.
    pub q_d: f64,
    /// Measurement variance per output.
    pub r: f64,
    /// Initial variance on every augmented state.
    pub p0: f64,
}

impl Default for KalmanSettings {
    fn default() -> Self {
        KalmanSettings { q_z: 0.1, q_d: 1.0, r: 0.5, p0: 1.0 }
    }
}

impl KalmanSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_z >= 0.0 && self.q_d >= 0.0 && self.r > 0.0 && self.p0 >= 0.0) {
            return Err(Error::InvalidConfig("Kalman variances must be >= 0 (measurement > 0)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// `[ẑ; d̂]`.
    pub xi_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q_kf: DMatrix<f64>,
    pub r_kf: DMatrix<f64>,
}

impl KalmanState {
    pub fn z_hat(&self, model: &AugmentedModel) -> DVector<f64> {
        self.xi_hat.rows(0, model.n_z).into_owned()
    }

    pub fn d_hat(&self, model: &AugmentedModel) -> DVector<f64> {
        self.xi_hat.rows(model.n_z, model.n_d).into_owned()
    }
}

/// `ẑ = C⁺ y0`, `d̂ = 0`, `P = p0·I`.
pub fn kalman_init(model: &AugmentedModel, y0: &DVector<f64>, settings: &KalmanSettings) -> Result<KalmanState> {
    settings.validate()?;
    if y0.len() != model.n_d {
        return Err(dim_err("initial output length differs from n_y"));
    }
    let dim = model.dim();
    let mut xi_hat = DVector::zeros(dim);
    xi_hat.rows_mut(0, model.n_z).copy_from(&(pinv(&model.c_z(), RANK_TOLERANCE) * y0));
    let mut q_diag = DVector::from_element(dim, settings.q_z);
    q_diag.rows_mut(model.n_z, model.n_d).fill(settings.q_d);
    Ok(KalmanState {
        xi_hat,
        p: DMatrix::identity(dim, dim) * settings.p0,
        q_kf: DMatrix::from_diagonal(&q_diag),
        r_kf: DMatrix::identity(model.n_d, model.n_d) * settings.r,
    })
}

/// Predict with `u_applied`, then correct with `y_measured` (Joseph form).
pub fn kalman_step(state: &KalmanState, model: &AugmentedModel, u_applied: &DVector<f64>, y_measured: &DVector<f64>) -> Result<KalmanState> {
    let dim = model.dim();
    if u_applied.len() != model.b_bar.ncols() || y_measured.len() != model.n_d || state.xi_hat.len() != dim {
        return Err(dim_err("Kalman step dimensions do not match the model"));
    }
    let xi_pred = &model.a_bar * &state.xi_hat + &model.b_bar * u_applied;
    let p_pred = &model.a_bar * &state.p * model.a_bar.transpose() + &state.q_kf;

    let c = &model.c_bar;
    let s = c * &p_pred * c.transpose() + &state.r_kf;
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P Cᵀ S⁻¹, computed as (S⁻¹ C P)ᵀ.
    let gain = chol.solve(&(c * &p_pred)).transpose();
    let innovation = y_measured - c * &xi_pred;
    let xi_hat = xi_pred + &gain * innovation;

    let i_kc = DMatrix::identity(dim, dim) - &gain * c;
    let p = &i_kc * p_pred * i_kc.transpose() + &gain * &state.r_kf * gain.transpose();
    let p = (&p + p.transpose()) * 0.5;
    if xi_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(KalmanState { xi_hat, p, q_kf: state.q_kf.clone(), r_kf: state.r_kf.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmpcMode {
    /// Decision vector `(u, z, y)` with dynamics as equalities.
    Full,
    /// Decision vector `u` only.
    Condensed,
}

/// Counts of an assembled KMPC QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmpcDimensions {
    pub variables: usize,
    pub equalities: usize,
    /// Two-sided inequality rows.
    pub inequalities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmpcQp {
    pub problem: QpProblem,
    /// Added to the QP objective to recover the full cost.
    pub objective_offset: f64,
    /// Output prediction with zero input plan: `Φ z₀ + d` stacked (condensed only).
    free_response: Option<DVector<f64>>,
}

/// Planned trajectories of one KMPC solve (scaled coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct KmpcPlan {
    /// `N × n_u`.
    pub u_plan: DMatrix<f64>,
    /// `N × n_y`.
    pub y_plan: DMatrix<f64>,
    pub objective: f64,
    pub status: QpStatus,
}

/// Sample-independent parts of the KMPC QP.
#[derive(Debug, Clone)]
pub struct KmpcQpBuilder {
    model: KoopmanModel,
    tuning: Arc<SharedTuning>,
    mode: KmpcMode,
    h: DMatrix<f64>,
    a_eq: DMatrix<f64>,
    a_in: DMatrix<f64>,
    u_lb: DVector<f64>,
    u_ub: DVector<f64>,
    y_lb: DVector<f64>,
    y_ub: DVector<f64>,
    q_bar: DMatrix<f64>,
    /// Condensed prediction `y = Φ z₀ + Γ u + 1⊗d`.
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
}

impl KmpcQpBuilder {
    /// Bounds are in scaled coordinates.
    pub fn new(
        model: &KoopmanModel,
        tuning: Arc<SharedTuning>,
        mode: KmpcMode,
        u_bounds: &[(f64, f64)],
        y_bounds: &[(f64, f64)],
    ) -> Result<Self> {
        model.validate()?;
        tuning.validate()?;
        let (n_z, n_u, n_y) = (model.n_z(), model.n_u(), model.n_y());
        if tuning.n_u() != n_u || tuning.n_y() != n_y || u_bounds.len() != n_u || y_bounds.len() != n_y {
            return Err(dim_err("channel counts of model, tuning and bounds differ"));
        }
        let horizon = tuning.horizon;
        let (nu_all, ny_all, nz_all) = (n_u * horizon, n_y * horizon, n_z * horizon);
        let q_bar = repeat_block_diag(&tuning.q, horizon);
        let rate = rate_hessian(&tuning.r, horizon);
        let tile = |b: &[(f64, f64)], lower: bool| {
            DVector::from_fn(b.len() * horizon, |i, _| if lower { b[i % b.len()].0 } else { b[i % b.len()].1 })
        };

        let (phi, gamma) = prediction_matrices(model, horizon);
        let (h, a_eq, a_in) = match mode {
            KmpcMode::Full => {
                let n = nu_all + nz_all + ny_all;
                let (oz, oy) = (nu_all, nu_all + nz_all);
                let mut h = DMatrix::zeros(n, n);
                h.view_mut((0, 0), (nu_all, nu_all)).copy_from(&(&rate * 2.0));
                h.view_mut((oy, oy), (ny_all, ny_all)).copy_from(&(&q_bar * 2.0));

                let m_eq = n_z + (horizon - 1) * n_z + ny_all;
                let mut a_eq = DMatrix::zeros(m_eq, n);
                // z_0 = ẑ
                a_eq.view_mut((0, oz), (n_z, n_z)).fill_with_identity();
                // z_{k+1} − A z_k − B u_k = 0
                for k in 0..horizon - 1 {
                    let row = n_z + k * n_z;
                    a_eq.view_mut((row, oz + (k + 1) * n_z), (n_z, n_z)).fill_with_identity();
                    a_eq.view_mut((row, oz + k * n_z), (n_z, n_z)).copy_from(&(-&model.a));
                    a_eq.view_mut((row, k * n_u), (n_z, n_u)).copy_from(&(-&model.b));
                }
                // y_k − C z_k = d
                for k in 0..horizon {
                    let row = n_z * horizon + k * n_y;
                    a_eq.view_mut((row, oy + k * n_y), (n_y, n_y)).fill_with_identity();
                    a_eq.view_mut((row, oz + k * n_z), (n_y, n_z)).copy_from(&(-&model.c));
                }
                let mut a_in = DMatrix::zeros(nu_all + ny_all, n);
                a_in.view_mut((0, 0), (nu_all, nu_all)).fill_with_identity();
                a_in.view_mut((nu_all, oy), (ny_all, ny_all)).fill_with_identity();
                (h, a_eq, a_in)
            }
            KmpcMode::Condensed => {
                let mut h = gamma.tr_mul(&(&q_bar * &gamma)) + &rate;
                h *= 2.0;
                let h = (&h + h.transpose()) * 0.5;
                let mut a_in = DMatrix::zeros(nu_all + ny_all, nu_all);
                a_in.view_mut((0, 0), (nu_all, nu_all)).fill_with_identity();
                a_in.view_mut((nu_all, 0), (ny_all, nu_all)).copy_from(&gamma);
                (h, DMatrix::zeros(0, nu_all), a_in)
            }
        };

        Ok(KmpcQpBuilder {
            model: model.clone(),
            mode,
            h,
            a_eq,
            a_in,
            u_lb: tile(u_bounds, true),
            u_ub: tile(u_bounds, false),
            y_lb: tile(y_bounds, true),
            y_ub: tile(y_bounds, false),
            q_bar,
            phi,
            gamma,
            tuning,
        })
    }

    pub fn tuning(&self) -> &Arc<SharedTuning> {
        &self.tuning
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }

    pub fn dimensions(&self) -> KmpcDimensions {
        KmpcDimensions { variables: self.h.nrows(), equalities: self.a_eq.nrows(), inequalities: self.a_in.nrows() }
    }

    /// Counts derived from the layout alone.
    pub fn expected_dimensions(&self) -> KmpcDimensions {
        let n = self.tuning.horizon;
        let (n_z, n_u, n_y) = (self.model.n_z(), self.model.n_u(), self.model.n_y());
        match self.mode {
            KmpcMode::Full => KmpcDimensions {
                variables: n * (n_u + n_z + n_y),
                equalities: n_z + (n - 1) * n_z + n * n_y,
                inequalities: n * (n_u + n_y),
            },
            KmpcMode::Condensed => KmpcDimensions { variables: n * n_u, equalities: 0, inequalities: n * (n_u + n_y) },
        }
    }

    /// QP from the predicted lifted state `z0`, disturbance `d`, reference
    /// (`N × n_y`) and previous input; all scaled.
    pub fn build(&self, z0: &DVector<f64>, d: &DVector<f64>, reference: &DMatrix<f64>, u_prev: &DVector<f64>) -> Result<KmpcQp> {
        let horizon = self.tuning.horizon;
        let (n_z, n_u, n_y) = (self.model.n_z(), self.model.n_u(), self.model.n_y());
        if reference.nrows() == 0 {
            return Err(Error::EmptyReference);
        }
        if reference.shape() != (horizon, n_y) || z0.len() != n_z || d.len() != n_y || u_prev.len() != n_u {
            return Err(dim_err("KMPC build arguments do not match the model and horizon"));
        }
        let r = stack_rows(reference);
        let nu_all = n_u * horizon;
        let mut f = DVector::zeros(self.h.nrows());
        let ru = &self.tuning.r * u_prev;
        f.rows_mut(0, n_u).copy_from(&(&ru * -2.0));
        let mut offset = u_prev.dot(&ru);

        let d_all = DVector::from_fn(n_y * horizon, |i, _| d[i % n_y]);
        let mut lb_in = crate::linalg::vcat(&[&self.u_lb, &self.y_lb]);
        let mut ub_in = crate::linalg::vcat(&[&self.u_ub, &self.y_ub]);

        let (b_eq, free_response) = match self.mode {
            KmpcMode::Full => {
                let oy = nu_all + n_z * horizon;
                f.rows_mut(oy, n_y * horizon).copy_from(&(&self.q_bar * &r * -2.0));
                offset += r.dot(&(&self.q_bar * &r));
                let mut b_eq = DVector::zeros(self.a_eq.nrows());
                b_eq.rows_mut(0, n_z).copy_from(z0);
                b_eq.rows_mut(n_z * horizon, n_y * horizon).copy_from(&d_all);
                (b_eq, None)
            }
            KmpcMode::Condensed => {
                let free = &self.phi * z0 + &d_all;
                let e = &free - &r;
                let qe = &self.q_bar * &e;
                let fu = self.gamma.tr_mul(&qe) * 2.0;
                let mut fu_total = f.rows(0, nu_all).into_owned();
                fu_total += fu;
                f.rows_mut(0, nu_all).copy_from(&fu_total);
                offset += e.dot(&qe);
                for i in 0..n_y * horizon {
                    lb_in[nu_all + i] -= free[i];
                    ub_in[nu_all + i] -= free[i];
                }
                (DVector::zeros(0), Some(free))
            }
        };
        let problem = QpProblem { h: self.h.clone(), f, a_eq: self.a_eq.clone(), b_eq, a_in: self.a_in.clone(), lb_in, ub_in };
        Ok(KmpcQp { problem, objective_offset: offset, free_response })
    }

    pub fn plan(&self, qp: &KmpcQp, solution: &QpSolution) -> KmpcPlan {
        let horizon = self.tuning.horizon;
        let (n_z, n_u, n_y) = (self.model.n_z(), self.model.n_u(), self.model.n_y());
        let u = solution.x.rows(0, n_u * horizon).into_owned();
        let y = match (&self.mode, &qp.free_response) {
            (KmpcMode::Condensed, Some(free)) => free + &self.gamma * &u,
            _ => solution.x.rows(n_u * horizon + n_z * horizon, n_y * horizon).into_owned(),
        };
        KmpcPlan {
            u_plan: unstack(&u, n_u),
            y_plan: unstack(&y, n_y),
            objective: solution.objective + qp.objective_offset,
            status: solution.status,
        }
    }
}

/// `y = Φ z₀ + Γ u` over the horizon with `y_k = C z_k`.
fn prediction_matrices(model: &KoopmanModel, horizon: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n_z, n_u, n_y) = (model.n_z(), model.n_u(), model.n_y());
    let mut phi = DMatrix::zeros(n_y * horizon, n_z);
    let mut gamma = DMatrix::zeros(n_y * horizon, n_u * horizon);
    let mut ak = DMatrix::identity(n_z, n_z);
    // Markov parameters C A^j B, j = 0..N−2.
    let mut markov: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut akb = model.b.clone();
    for k in 0..horizon {
        phi.view_mut((k * n_y, 0), (n_y, n_z)).copy_from(&(&model.c * &ak));
        ak = &model.a * ak;
        markov.push(&model.c * &akb);
        akb = &model.a * akb;
    }
    for i in 1..horizon {
        for j in 0..i {
            gamma.view_mut((i * n_y, j * n_u), (n_y, n_u)).copy_from(&markov[i - 1 - j]);
        }
    }
    (phi, gamma)
}

fn rate_hessian(r: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n_u = r.nrows();
    let mut out = DMatrix::zeros(n_u * horizon, n_u * horizon);
    for k in 0..horizon {
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

/// Convenience wrapper: assemble the QP for a single sample.
#[allow(clippy::too_many_arguments)]
pub fn build_kmpc_qp(
    model: &KoopmanModel,
    z0: &DVector<f64>,
    d_hat: &DVector<f64>,
    reference: &DMatrix<f64>,
    tuning: Arc<SharedTuning>,
    u_prev: &DVector<f64>,
    mode: KmpcMode,
    scaler: &ScalerParams,
) -> Result<(KmpcQpBuilder, KmpcQp)> {
    let ub = scaler.scale_u_bounds(&tuning.u_bounds);
    let yb = scaler.scale_y_bounds(&tuning.y_bounds);
    let builder = KmpcQpBuilder::new(model, tuning, mode, &ub, &yb)?;
    let qp = builder.build(z0, d_hat, reference, u_prev)?;
    Ok((builder, qp))
}

/// Receding-horizon offset-free KMPC.
#[derive(Debug, Clone)]
pub struct KmpcController {
    builder: KmpcQpBuilder,
    augmented: AugmentedModel,
    scaler: ScalerParams,
    settings: KalmanSettings,
    filter: Option<KalmanState>,
    /// Scaled input applied with the latest observed output.
    pending_u: Option<DVector<f64>>,
    solver: QpSolver,
    options: SolverOptions,
    warm: Option<QpSolution>,
    last_applied: Option<DVector<f64>>,
    last_plan: Option<KmpcPlan>,
}

impl KmpcController {
    /// `model` must be identified in the coordinates defined by `scaler`.
    pub fn new(
        model: &KoopmanModel,
        tuning: Arc<SharedTuning>,
        mode: KmpcMode,
        scaler: ScalerParams,
        settings: KalmanSettings,
        options: SolverOptions,
    ) -> Result<Self> {
        scaler.validate()?;
        settings.validate()?;
        options.validate()?;
        let ub = scaler.scale_u_bounds(&tuning.u_bounds);
        let yb = scaler.scale_y_bounds(&tuning.y_bounds);
        let builder = KmpcQpBuilder::new(model, tuning, mode, &ub, &yb)?;
        Ok(KmpcController {
            augmented: augment_model(model),
            builder,
            scaler,
            settings,
            filter: None,
            pending_u: None,
            solver: QpSolver::new(),
            options,
            warm: None,
            last_applied: None,
            last_plan: None,
        })
    }

    pub fn filter(&self) -> Option<&KalmanState> {
        self.filter.as_ref()
    }

    pub fn augmented(&self) -> &AugmentedModel {
        &self.augmented
    }

    pub fn last_plan(&self) -> Option<&KmpcPlan> {
        self.last_plan.as_ref()
    }

    pub fn builder(&self) -> &KmpcQpBuilder {
        &self.builder
    }
}

impl PredictiveController for KmpcController {
    fn name(&self) -> String {
        "kmpc".into()
    }

    fn tuning(&self) -> &SharedTuning {
        &self.builder.tuning
    }

    fn observe(&mut self, u_applied: &DVector<f64>, y_measured: &DVector<f64>) -> Result<()> {
        let u = self.scaler.scale_u(u_applied);
        let y = self.scaler.scale_y(y_measured);
        if u.len() != self.augmented.b_bar.ncols() {
            return Err(dim_err("input length differs from the model"));
        }
        self.filter = Some(match (&self.filter, &self.pending_u) {
            (Some(state), Some(prev)) => kalman_step(state, &self.augmented, prev, &y)?,
            _ => kalman_init(&self.augmented, &y, &self.settings)?,
        });
        self.pending_u = Some(u);
        self.last_applied = Some(u_applied.clone());
        Ok(())
    }

    fn compute(&mut self, reference: &DMatrix<f64>) -> Result<StepOutcome> {
        let (Some(state), Some(u_prev)) = (&self.filter, &self.pending_u) else {
            return Err(Error::WindowNotInitialized { have: 0, need: 1 });
        };
        let model = &self.builder.model;
        let z0 = &model.a * state.z_hat(&self.augmented) + &model.b * u_prev;
        let d = state.d_hat(&self.augmented);
        let reference = self.scaler.scale_y_rows(reference);
        let qp = self.builder.build(&z0, &d, &reference, u_prev)?;
        let options = SolverOptions { warm_start: self.warm.take(), ..self.options.clone() };
        let solution = self.solver.solve(&qp.problem, &options)?;
        let plan = self.builder.plan(&qp, &solution);

        let hold = self.last_applied.clone().unwrap_or_else(|| self.scaler.unscale_u(u_prev));
        let admissible = if solution.status.is_optimal() {
            admissible_input(&plan.u_plan.row(0).transpose(), &self.scaler, &self.builder.tuning.u_bounds)
        } else {
            None
        };
        let outcome = StepOutcome {
            u: admissible.clone().unwrap_or(hold),
            status: solution.status,
            objective: plan.objective,
            iterations: solution.iterations,
            solve_time: solution.solve_time,
            fallback: admissible.is_none(),
        };
        if admissible.is_some() {
            self.warm = Some(solution);
        }
        self.last_plan = Some(plan);
        Ok(outcome)
    }

    fn last_applied(&self) -> Option<&DVector<f64>> {
        self.last_applied.as_ref()
    }
}

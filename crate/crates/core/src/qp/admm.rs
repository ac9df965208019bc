//! Operator-splitting QP solver with active-set polishing.
//!
//! The ADMM iteration works on the stacked form `l ≤ A x ≤ u` (equalities
//! are rows with `l = u`) after Ruiz equilibration. Once the iterate is close
//! enough to identify the active set, a polishing step solves the reduced KKT
//! system directly, corrects the active set for a few rounds, and the result
//! is only reported `Optimal` after its KKT residuals are certified in the
//! original (unscaled) problem.
//!
//! The workspace caches the equilibration and the factorization of
//! `P + σI + Aᵀ diag(ρ) A`. Receding-horizon problems keep `H` and the
//! constraint matrices fixed between samples, so consecutive solves reuse it.

use alloc::vec::Vec;

use nalgebra::linalg::{Cholesky, LU};
use nalgebra::{DMatrix, DVector, Dyn};

use super::{
    residuals_and_scales, Clock, KktResiduals, QpProblem, QpSolution, QpStatus, SolverOptions,
    INFINITE_BOUND,
};
use crate::error::Result;
use crate::linalg::inf_norm;
use crate::math::sqrt;

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RUIZ_PASSES: usize = 10;
const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;
const CHECK_EVERY: usize = 5;
const ADAPT_EVERY: usize = 25;
const ADAPT_TRIGGER: f64 = 5.0;
const INFEASIBILITY_TOL: f64 = 1e-6;
const FIRST_STAGE_TOL: f64 = 1e-4;
const POLISH_DELTA: f64 = 1e-9;
const POLISH_REFINEMENTS: usize = 8;
const POLISH_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

#[derive(Debug, Clone)]
struct Equilibrated {
    // Cache key (original data).
    h: DMatrix<f64>,
    a: DMatrix<f64>,
    kinds: Vec<RowKind>,
    // Scaled data: P = c·D H D, A = E A D.
    p: DMatrix<f64>,
    a_s: DMatrix<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
    rho: f64,
    rho_vec: DVector<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl Equilibrated {
    fn new(h: &DMatrix<f64>, a: &DMatrix<f64>, kinds: Vec<RowKind>, rho: f64) -> Self {
        let n = h.nrows();
        let m = a.nrows();
        let mut p = h.clone();
        let mut a_s = a.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);

        let clip = |norm: f64| {
            if norm < SCALING_MIN {
                1.0
            } else {
                norm.min(SCALING_MAX)
            }
        };
        for _ in 0..RUIZ_PASSES {
            let mut delta = DVector::zeros(n);
            for j in 0..n {
                let mut norm = 0.0f64;
                for i in 0..n {
                    norm = norm.max(p[(i, j)].abs());
                }
                for i in 0..m {
                    norm = norm.max(a_s[(i, j)].abs());
                }
                delta[j] = 1.0 / sqrt(clip(norm));
            }
            let mut eps = DVector::zeros(m);
            for i in 0..m {
                let mut norm = 0.0f64;
                for j in 0..n {
                    norm = norm.max(a_s[(i, j)].abs());
                }
                eps[i] = 1.0 / sqrt(clip(norm));
            }
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= delta[i] * delta[j];
                }
                for i in 0..m {
                    a_s[(i, j)] *= eps[i] * delta[j];
                }
            }
            d.component_mul_assign(&delta);
            e.component_mul_assign(&eps);
        }

        let mean_col_norm = if n == 0 {
            1.0
        } else {
            (0..n)
                .map(|j| p.column(j).iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
                .sum::<f64>()
                / n as f64
        };
        let c = 1.0 / clip(mean_col_norm);
        p *= c;

        let mut eq = Equilibrated {
            h: h.clone(),
            a: a.clone(),
            kinds,
            p,
            a_s,
            d,
            e,
            c,
            rho,
            rho_vec: DVector::zeros(m),
            factor: None,
        };
        eq.set_rho(rho);
        eq
    }

    fn matches(&self, h: &DMatrix<f64>, a: &DMatrix<f64>, kinds: &[RowKind]) -> bool {
        self.h == *h && self.a == *a && self.kinds == kinds
    }

    fn set_rho(&mut self, rho: f64) {
        self.rho = rho.clamp(RHO_MIN, RHO_MAX);
        for (i, kind) in self.kinds.iter().enumerate() {
            self.rho_vec[i] = match kind {
                RowKind::Equality => RHO_EQ_FACTOR * self.rho,
                RowKind::Inequality => self.rho,
                RowKind::Free => RHO_MIN,
            };
        }
        let n = self.p.nrows();
        let mut weighted = self.a_s.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= self.rho_vec[i];
        }
        let mut kkt = self.a_s.tr_mul(&weighted);
        kkt += &self.p;
        for j in 0..n {
            kkt[(j, j)] += SIGMA;
        }
        self.factor = Cholesky::new(kkt);
    }
}

/// Reusable solver workspace.
///
/// Holds no global state; separate instances are independent.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    cache: Option<Equilibrated>,
}

struct Iterate {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl QpSolver {
    pub fn new() -> Self {
        QpSolver { cache: None }
    }

    /// Drops the cached factorization.
    pub fn reset(&mut self) {
        self.cache = None;
    }

    pub fn solve(&mut self, problem: &QpProblem, options: &SolverOptions) -> Result<QpSolution> {
        #[cfg(feature = "std")]
        {
            self.solve_with_clock(problem, options, &super::WallClock::start())
        }
        #[cfg(not(feature = "std"))]
        {
            self.solve_with_clock(problem, options, &super::NoClock)
        }
    }

    pub fn solve_with_clock(
        &mut self,
        problem: &QpProblem,
        options: &SolverOptions,
        clock: &dyn Clock,
    ) -> Result<QpSolution> {
        options.validate()?;
        problem.check_dimensions()?;
        problem.check_bounds()?;

        let m_eq = problem.num_equalities();
        let m = m_eq + problem.num_inequalities();

        let a = crate::linalg::vstack(&[&problem.a_eq, &problem.a_in]);
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        let mut kinds = Vec::with_capacity(m);
        for i in 0..m {
            let (lo, hi) = if i < m_eq {
                (problem.b_eq[i], problem.b_eq[i])
            } else {
                (problem.lb_in[i - m_eq], problem.ub_in[i - m_eq])
            };
            let lo = if lo <= -INFINITE_BOUND { f64::NEG_INFINITY } else { lo };
            let hi = if hi >= INFINITE_BOUND { f64::INFINITY } else { hi };
            l[i] = lo;
            u[i] = hi;
            kinds.push(if lo == hi {
                RowKind::Equality
            } else if lo.is_infinite() && hi.is_infinite() {
                RowKind::Free
            } else {
                RowKind::Inequality
            });
        }

        let cached = self.cache.take().filter(|c| c.matches(&problem.h, &a, &kinds));
        let mut eq = match cached {
            Some(c) => c,
            None => {
                problem.validate()?;
                Equilibrated::new(&problem.h, &a, kinds, RHO_INIT)
            }
        };
        let solution = run(&mut eq, problem, &l, &u, options, clock);
        self.cache = Some(eq);
        Ok(solution)
    }
}

fn run(
    eq: &mut Equilibrated,
    problem: &QpProblem,
    l: &DVector<f64>,
    u: &DVector<f64>,
    options: &SolverOptions,
    clock: &dyn Clock,
) -> QpSolution {
    let n = problem.num_variables();
    let m_eq = problem.num_equalities();
    let m = l.len();

    let q = eq.c * problem.f.component_mul(&eq.d);
    let l_s = l.component_mul(&eq.e);
    let u_s = u.component_mul(&eq.e);

    let mut it = initial_iterate(eq, problem, options, &l_s, &u_s);

    let finish = |eq: &Equilibrated, x_s: &DVector<f64>, y_s: &DVector<f64>, status, iterations| {
        let (x, dual_eq, dual_in) = unscale(eq, x_s, y_s, m_eq);
        QpSolution {
            objective: problem.objective(&x),
            x,
            dual_eq,
            dual_in,
            status,
            iterations,
            solve_time: clock.elapsed_seconds(),
        }
    };

    let certify = |eq: &Equilibrated, x_s: &DVector<f64>, y_s: &DVector<f64>| -> bool {
        let (x, dual_eq, dual_in) = unscale(eq, x_s, y_s, m_eq);
        let (res, scales) = residuals_and_scales(problem, &x, &dual_eq, &dual_in);
        finite(&res) && scales.accepts(&res, options.abs_tol, options.rel_tol)
    };

    if eq.factor.is_none() {
        // P + σI + AᵀρA failed to factor: H is not PSD or data are not finite.
        return finish(eq, &it.x, &it.y, QpStatus::MaxIter, 0);
    }

    let mut stage_abs = FIRST_STAGE_TOL.max(options.abs_tol);
    let mut stage_rel = FIRST_STAGE_TOL.max(options.rel_tol);
    let mut y_prev = it.y.clone();
    let mut floor_polish_countdown = 0usize;

    let mut x_tilde = DVector::zeros(n);
    let mut z_tilde = DVector::zeros(m);
    let mut tmp_m = DVector::zeros(m);

    for iter in 1..=options.max_iterations {
        if clock.elapsed_seconds() > options.time_limit {
            return finish(eq, &it.x, &it.y, QpStatus::TimeLimit, iter - 1);
        }
        y_prev.copy_from(&it.y);

        // x-update: (P + σI + AᵀρA) x̃ = σx − q + Aᵀ(ρ∘z − y)
        for i in 0..m {
            tmp_m[i] = eq.rho_vec[i] * it.z[i] - it.y[i];
        }
        x_tilde.copy_from(&it.x);
        x_tilde *= SIGMA;
        x_tilde -= &q;
        x_tilde.gemv_tr(1.0, &eq.a_s, &tmp_m, 1.0);
        eq.factor.as_ref().expect("checked above").solve_mut(&mut x_tilde);

        z_tilde.gemv(1.0, &eq.a_s, &x_tilde, 0.0);

        for j in 0..n {
            it.x[j] = ALPHA * x_tilde[j] + (1.0 - ALPHA) * it.x[j];
        }
        for i in 0..m {
            let relaxed = ALPHA * z_tilde[i] + (1.0 - ALPHA) * it.z[i];
            let z_new = (relaxed + it.y[i] / eq.rho_vec[i]).clamp(l_s[i], u_s[i]);
            it.y[i] += eq.rho_vec[i] * (relaxed - z_new);
            it.z[i] = z_new;
        }

        if iter % CHECK_EVERY != 0 && iter != options.max_iterations {
            continue;
        }

        let r = admm_residuals(eq, &it, &q);
        if !(r.prim.is_finite() && r.dual.is_finite()) {
            return finish(eq, &it.x, &it.y, QpStatus::MaxIter, iter);
        }

        if primal_infeasible(eq, &it.y, &y_prev, l, u) {
            return finish(eq, &it.x, &it.y, QpStatus::Infeasible, iter);
        }

        let stage_met = r.prim <= stage_abs + stage_rel * r.prim_scale
            && r.dual <= stage_abs + stage_rel * r.dual_scale;
        let at_floor = stage_abs <= options.abs_tol && stage_rel <= options.rel_tol;

        if stage_met {
            if certify(eq, &it.x, &it.y) {
                return finish(eq, &it.x, &it.y, QpStatus::Optimal, iter);
            }
            let try_polish = if at_floor {
                floor_polish_countdown = floor_polish_countdown.saturating_sub(1);
                floor_polish_countdown == 0
            } else {
                true
            };
            if try_polish {
                if let Some((xp, yp)) = polish(eq, &it, &q, &l_s, &u_s) {
                    if certify(eq, &xp, &yp) {
                        return finish(eq, &xp, &yp, QpStatus::Optimal, iter);
                    }
                }
                if at_floor {
                    floor_polish_countdown = 10;
                }
            }
            stage_abs = (stage_abs * 0.1).max(options.abs_tol);
            stage_rel = (stage_rel * 0.1).max(options.rel_tol);
        }

        if iter % ADAPT_EVERY == 0 && m > 0 {
            let num = r.prim / r.prim_scale.max(1e-30);
            let den = r.dual / r.dual_scale.max(1e-30);
            if num > 0.0 && den > 0.0 {
                let proposed = (eq.rho * sqrt(num / den)).clamp(RHO_MIN, RHO_MAX);
                if proposed > ADAPT_TRIGGER * eq.rho || proposed < eq.rho / ADAPT_TRIGGER {
                    eq.set_rho(proposed);
                    if eq.factor.is_none() {
                        return finish(eq, &it.x, &it.y, QpStatus::MaxIter, iter);
                    }
                }
            }
        }
    }

    // Last chance before reporting the iteration limit.
    if let Some((xp, yp)) = polish(eq, &it, &q, &l_s, &u_s) {
        if certify(eq, &xp, &yp) {
            return finish(eq, &xp, &yp, QpStatus::Optimal, options.max_iterations);
        }
    }
    finish(eq, &it.x, &it.y, QpStatus::MaxIter, options.max_iterations)
}

fn finite(r: &KktResiduals) -> bool {
    r.stationarity.is_finite()
        && r.primal_eq.is_finite()
        && r.primal_in.is_finite()
        && r.complementarity.is_finite()
}

fn initial_iterate(
    eq: &Equilibrated,
    problem: &QpProblem,
    options: &SolverOptions,
    l_s: &DVector<f64>,
    u_s: &DVector<f64>,
) -> Iterate {
    let n = problem.num_variables();
    let m = l_s.len();
    let m_eq = problem.num_equalities();
    let warm = options.warm_start.as_ref().filter(|w| {
        w.x.len() == n
            && w.dual_eq.len() == m_eq
            && w.dual_in.len() == m - m_eq
            && w.x.iter().chain(w.dual_eq.iter()).chain(w.dual_in.iter()).all(|v| v.is_finite())
    });
    match warm {
        Some(w) => {
            let x = w.x.component_div(&eq.d);
            // y (solver sign) = −[ν; λ]; scaled ȳ = c E⁻¹ y.
            let mut y = DVector::zeros(m);
            for i in 0..m {
                let dual = if i < m_eq { w.dual_eq[i] } else { w.dual_in[i - m_eq] };
                y[i] = -dual * eq.c / eq.e[i];
            }
            let mut z = &eq.a_s * &x;
            for i in 0..m {
                z[i] = z[i].clamp(l_s[i], u_s[i]);
            }
            Iterate { x, z, y }
        }
        None => {
            let mut z = DVector::zeros(m);
            for i in 0..m {
                z[i] = 0.0f64.clamp(l_s[i], u_s[i]);
            }
            Iterate { x: DVector::zeros(n), z, y: DVector::zeros(m) }
        }
    }
}

fn unscale(
    eq: &Equilibrated,
    x_s: &DVector<f64>,
    y_s: &DVector<f64>,
    m_eq: usize,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let x = x_s.component_mul(&eq.d);
    let m = y_s.len();
    let y: DVector<f64> = DVector::from_fn(m, |i, _| y_s[i] * eq.e[i] / eq.c);
    let dual_eq = -y.rows(0, m_eq).into_owned();
    let dual_in = -y.rows(m_eq, m - m_eq).into_owned();
    (x, dual_eq, dual_in)
}

struct AdmmResiduals {
    prim: f64,
    prim_scale: f64,
    dual: f64,
    dual_scale: f64,
}

fn admm_residuals(eq: &Equilibrated, it: &Iterate, q: &DVector<f64>) -> AdmmResiduals {
    let ax = &eq.a_s * &it.x;
    let mut prim = 0.0f64;
    let mut ax_norm = 0.0f64;
    let mut z_norm = 0.0f64;
    for i in 0..ax.len() {
        let inv = 1.0 / eq.e[i];
        prim = prim.max(((ax[i] - it.z[i]) * inv).abs());
        ax_norm = ax_norm.max((ax[i] * inv).abs());
        z_norm = z_norm.max((it.z[i] * inv).abs());
    }
    let px = &eq.p * &it.x;
    let aty = eq.a_s.tr_mul(&it.y);
    let mut dual = 0.0f64;
    let (mut px_norm, mut aty_norm, mut q_norm) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..px.len() {
        let inv = 1.0 / (eq.d[j] * eq.c);
        dual = dual.max(((px[j] + q[j] + aty[j]) * inv).abs());
        px_norm = px_norm.max((px[j] * inv).abs());
        aty_norm = aty_norm.max((aty[j] * inv).abs());
        q_norm = q_norm.max((q[j] * inv).abs());
    }
    AdmmResiduals {
        prim,
        prim_scale: ax_norm.max(z_norm),
        dual,
        dual_scale: px_norm.max(aty_norm).max(q_norm),
    }
}

/// Farkas-type certificate on the dual increment.
fn primal_infeasible(
    eq: &Equilibrated,
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
) -> bool {
    let m = y.len();
    if m == 0 {
        return false;
    }
    let delta_s = y - y_prev;
    let delta: DVector<f64> = DVector::from_fn(m, |i, _| delta_s[i] * eq.e[i] / eq.c);
    let norm = inf_norm(&delta);
    if norm <= INFEASIBILITY_TOL {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        if delta[i] > 0.0 {
            if u[i].is_infinite() {
                return false;
            }
            support += u[i] * delta[i];
        } else if delta[i] < 0.0 {
            if l[i].is_infinite() {
                return false;
            }
            support += l[i] * delta[i];
        }
    }
    if support >= -INFEASIBILITY_TOL * norm {
        return false;
    }
    let at_delta = eq.a_s.tr_mul(&delta_s);
    let mut worst = 0.0f64;
    for j in 0..at_delta.len() {
        worst = worst.max((at_delta[j] / (eq.d[j] * eq.c)).abs());
    }
    worst <= INFEASIBILITY_TOL * norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    No,
    Lower,
    Upper,
    Fixed,
}

/// Solves the equality-constrained problem on the guessed active set, then
/// corrects the set (drop wrong-sign multipliers, add violated rows).
fn polish(
    eq: &Equilibrated,
    it: &Iterate,
    q: &DVector<f64>,
    l_s: &DVector<f64>,
    u_s: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = l_s.len();
    let mut active: Vec<Active> = (0..m)
        .map(|i| {
            if eq.kinds[i] == RowKind::Equality {
                Active::Fixed
            } else if it.z[i] - l_s[i] < -it.y[i] {
                Active::Lower
            } else if u_s[i] - it.z[i] < it.y[i] {
                Active::Upper
            } else {
                Active::No
            }
        })
        .collect();

    let mut result = None;
    for _ in 0..POLISH_ROUNDS {
        let rows: Vec<usize> = (0..m).filter(|&i| active[i] != Active::No).collect();
        let (x, y_act) = solve_reduced_kkt(eq, q, l_s, u_s, &rows, &active)?;
        let mut y = DVector::zeros(m);
        for (k, &i) in rows.iter().enumerate() {
            y[i] = y_act[k];
        }

        let ax = &eq.a_s * &x;
        let mut changed = false;
        let mut next = active.clone();
        for i in 0..m {
            let tol = 1e-12 * (1.0 + ax[i].abs());
            match active[i] {
                Active::Lower if y[i] > tol => {
                    next[i] = Active::No;
                    changed = true;
                }
                Active::Upper if y[i] < -tol => {
                    next[i] = Active::No;
                    changed = true;
                }
                Active::No if ax[i] < l_s[i] - tol => {
                    next[i] = Active::Lower;
                    changed = true;
                }
                Active::No if ax[i] > u_s[i] + tol => {
                    next[i] = Active::Upper;
                    changed = true;
                }
                _ => {}
            }
        }
        result = Some((x, y));
        if !changed {
            break;
        }
        active = next;
    }
    result
}

fn solve_reduced_kkt(
    eq: &Equilibrated,
    q: &DVector<f64>,
    l_s: &DVector<f64>,
    u_s: &DVector<f64>,
    rows: &[usize],
    active: &[Active],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = eq.p.nrows();
    let k = rows.len();
    let a_act = DMatrix::from_fn(k, n, |r, j| eq.a_s[(rows[r], j)]);
    let b_act = DVector::from_fn(k, |r, _| {
        let i = rows[r];
        match active[i] {
            Active::Lower | Active::Fixed => l_s[i],
            _ => u_s[i],
        }
    });

    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&eq.p);
    for j in 0..n {
        kkt[(j, j)] += POLISH_DELTA;
    }
    kkt.view_mut((n, 0), (k, n)).copy_from(&a_act);
    kkt.view_mut((0, n), (n, k)).copy_from(&a_act.transpose());
    for r in 0..k {
        kkt[(n + r, n + r)] = -POLISH_DELTA;
    }
    let lu = LU::new(kkt);

    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, k).copy_from(&b_act);

    let mut sol = lu.solve(&rhs)?;
    // Iterative refinement against the unregularized system.
    for _ in 0..POLISH_REFINEMENTS {
        let x = sol.rows(0, n);
        let y = sol.rows(n, k);
        let mut resid = rhs.clone();
        {
            let top = &eq.p * x + a_act.tr_mul(&y);
            let bottom = &a_act * x;
            let mut r_top = resid.rows_mut(0, n);
            r_top -= top;
            let mut r_bottom = resid.rows_mut(n, k);
            r_bottom -= bottom;
        }
        if inf_norm(&resid) <= 1e-15 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        let corr = lu.solve(&resid)?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let y = sol.rows(n, k).into_owned();
    Some((x, y))
}

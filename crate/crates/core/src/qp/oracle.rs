//! Exhaustive active-set enumeration for small QPs.
//!
//! Every assignment of the inequality rows to {inactive, lower-active,
//! upper-active} is tried. Each candidate gives an equality-constrained
//! problem whose KKT system is solved directly; candidates that are
//! singular, infeasible, or carry wrong-sign multipliers are discarded, and
//! the feasible candidate with the smallest objective wins. Intended for
//! tests only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{QpProblem, QpSolution, QpStatus, INFINITE_BOUND};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, RANK_TOLERANCE};

/// Largest number of inequality rows the oracle accepts.
pub const ORACLE_MAX_INEQUALITIES: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Choice {
    Inactive,
    Lower,
    Upper,
}

/// Global optimum of a small convex QP by active-set enumeration.
///
/// Returns `Infeasible` when no candidate survives.
pub fn brute_force_qp_oracle(problem: &QpProblem) -> Result<QpSolution> {
    problem.validate()?;
    let m_in = problem.num_inequalities();
    if m_in > ORACLE_MAX_INEQUALITIES {
        return Err(Error::OracleTooLarge { rows: m_in, max: ORACLE_MAX_INEQUALITIES });
    }
    let n = problem.num_variables();
    let m_eq = problem.num_equalities();

    let scale = problem
        .h
        .abs()
        .max()
        .max(inf_norm(&problem.f))
        .max(problem.a_eq.abs().max())
        .max(problem.a_in.abs().max())
        .max(1.0);
    let tol = 1e-9 * scale;

    let mut choices = vec![Choice::Inactive; m_in];
    let mut best: Option<QpSolution> = None;

    loop {
        if admissible(problem, &choices) {
            if let Some(candidate) = solve_candidate(problem, &choices, n, m_eq) {
                if accept(problem, &candidate, &choices, tol) {
                    let better = best
                        .as_ref()
                        .map_or(true, |b| candidate.objective < b.objective - 1e-14 * scale);
                    if better {
                        best = Some(candidate);
                    }
                }
            }
        }
        if !advance(&mut choices) {
            break;
        }
    }

    Ok(best.unwrap_or_else(|| QpSolution {
        x: DVector::zeros(n),
        dual_eq: DVector::zeros(m_eq),
        dual_in: DVector::zeros(m_in),
        objective: f64::INFINITY,
        status: QpStatus::Infeasible,
        iterations: 0,
        solve_time: 0.0,
    }))
}

fn advance(choices: &mut [Choice]) -> bool {
    for c in choices.iter_mut() {
        match *c {
            Choice::Inactive => {
                *c = Choice::Lower;
                return true;
            }
            Choice::Lower => {
                *c = Choice::Upper;
                return true;
            }
            Choice::Upper => *c = Choice::Inactive,
        }
    }
    false
}

fn admissible(problem: &QpProblem, choices: &[Choice]) -> bool {
    choices.iter().enumerate().all(|(i, c)| match c {
        Choice::Inactive => true,
        Choice::Lower => problem.lb_in[i] > -INFINITE_BOUND,
        // A row with lb = ub is covered by the Lower choice.
        Choice::Upper => problem.ub_in[i] < INFINITE_BOUND && problem.ub_in[i] != problem.lb_in[i],
    })
}

fn solve_candidate(problem: &QpProblem, choices: &[Choice], n: usize, m_eq: usize) -> Option<QpSolution> {
    let active: Vec<usize> = (0..choices.len()).filter(|&i| choices[i] != Choice::Inactive).collect();
    let k = m_eq + active.len();
    let dim = n + k;

    // [H  −Aᵀ; A  0] [x; μ] = [−f; b]
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.h);
    rhs.rows_mut(0, n).copy_from(&(-&problem.f));
    for r in 0..k {
        let (row, b) = if r < m_eq {
            (problem.a_eq.row(r), problem.b_eq[r])
        } else {
            let i = active[r - m_eq];
            let b = if choices[i] == Choice::Lower { problem.lb_in[i] } else { problem.ub_in[i] };
            (problem.a_in.row(i), b)
        };
        for j in 0..n {
            kkt[(n + r, j)] = row[j];
            kkt[(j, n + r)] = -row[j];
        }
        rhs[n + r] = b;
    }

    let svd = kkt.svd(true, true);
    let largest = svd.singular_values.max();
    if !(largest > 0.0) || svd.singular_values.min() <= RANK_TOLERANCE * largest {
        return None;
    }
    let sol = svd.solve(&rhs, 0.0).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let x = sol.rows(0, n).into_owned();
    let dual_eq = sol.rows(n, m_eq).into_owned();
    let mut dual_in = DVector::zeros(choices.len());
    for (idx, &i) in active.iter().enumerate() {
        dual_in[i] = sol[n + m_eq + idx];
    }
    Some(QpSolution {
        objective: problem.objective(&x),
        x,
        dual_eq,
        dual_in,
        status: QpStatus::Optimal,
        iterations: 0,
        solve_time: 0.0,
    })
}

fn accept(problem: &QpProblem, cand: &QpSolution, choices: &[Choice], tol: f64) -> bool {
    let ax = &problem.a_in * &cand.x;
    choices.iter().enumerate().all(|(i, c)| {
        let (lo, hi) = (problem.lb_in[i], problem.ub_in[i]);
        let feasible = (lo <= -INFINITE_BOUND || ax[i] >= lo - tol * (1.0 + lo.abs()))
            && (hi >= INFINITE_BOUND || ax[i] <= hi + tol * (1.0 + hi.abs()));
        let sign_ok = match c {
            Choice::Inactive => true,
            // Equal bounds act as an equality; either sign is valid.
            Choice::Lower if lo == hi => true,
            Choice::Lower => cand.dual_in[i] >= -tol,
            Choice::Upper => cand.dual_in[i] <= tol,
        };
        feasible && sign_ok
    })
}

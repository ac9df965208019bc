//! Helpers shared by integration tests: random LTI systems, direct
//! simulation and a closed-form model-based MPC used as an oracle.
#![allow(dead_code)]

use dpc_core::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Lti {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Lti {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Outputs `y_k = C x_k` for inputs `u` (one row per sample) from `x0`.
    /// Returns the outputs and the state after the last sample.
    pub fn simulate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut x = x0.clone();
        let mut y = DMatrix::zeros(u.nrows(), self.n_y());
        for k in 0..u.nrows() {
            let uk = u.row(k).transpose();
            y.row_mut(k).copy_from(&(&self.c * &x).transpose());
            x = &self.a * &x + &self.b * uk;
        }
        (y, x)
    }

    pub fn observability(&self, depth: usize) -> DMatrix<f64> {
        let mut o = DMatrix::zeros(depth * self.n_y(), self.n());
        let mut ak = DMatrix::identity(self.n(), self.n());
        for k in 0..depth {
            o.view_mut((k * self.n_y(), 0), (self.n_y(), self.n())).copy_from(&(&self.c * &ak));
            ak = &self.a * ak;
        }
        o
    }

    pub fn controllability(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n * self.n_u());
        let mut akb = self.b.clone();
        for k in 0..n {
            m.view_mut((0, k * self.n_u()), (n, self.n_u())).copy_from(&akb);
            akb = &self.a * akb;
        }
        m
    }

    /// State at the end of a window, reconstructed from its inputs and
    /// outputs by least squares (exact when the window is at least the lag).
    pub fn deadbeat_state(&self, u: &DMatrix<f64>, y: &DMatrix<f64>) -> DVector<f64> {
        let t = u.nrows();
        let (free, _) = self.simulate(&DVector::zeros(self.n()), u);
        let rhs = stack(&(y - free));
        let o = self.observability(t);
        let x0 = o.svd(true, true).solve(&rhs, 1e-12).unwrap();
        self.simulate(&x0, u).1
    }
}

pub fn stack(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |i, _| m[(i / c, i % c)])
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-8 * top).count()
}

/// Stable, diagonalizable, controllable and observable system.
pub fn random_minimal_lti(rng: &mut ChaCha8Rng, n: usize, n_u: usize, n_y: usize) -> Lti {
    loop {
        let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let Some(s_inv) = s.clone().try_inverse() else { continue };
        if s.clone().svd(false, false).singular_values.min() < 0.2 {
            continue;
        }
        let poles = DVector::from_fn(n, |_, _| rng.random_range(-0.85..0.85));
        let a = &s * DMatrix::from_diagonal(&poles) * s_inv;
        let b = DMatrix::from_fn(n, n_u, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(n_y, n, |_, _| rng.random_range(-1.0..1.0));
        let sys = Lti { a, b, c };
        if rank(&sys.controllability()) == n && rank(&sys.observability(n)) == n {
            return sys;
        }
    }
}

pub fn white_noise(rng: &mut ChaCha8Rng, t: usize, channels: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t, channels, |_, _| rng.random_range(-1.0..1.0))
}

/// First input of the unconstrained finite-horizon problem
/// `Σ ‖C xₖ − rₖ‖²_Q + ‖uₖ − uₖ₋₁‖²_R`, `k = 0..N−1`, from state `x`,
/// solved directly from its normal equations.
pub fn mpc_oracle_input(
    sys: &Lti,
    x: &DVector<f64>,
    u_prev: &DVector<f64>,
    reference: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> DVector<f64> {
    let horizon = reference.nrows();
    let (n, n_u, n_y) = (sys.n(), sys.n_u(), sys.n_y());
    // y = Φ x + Γ u
    let mut phi = DMatrix::zeros(horizon * n_y, n);
    let mut gamma = DMatrix::zeros(horizon * n_y, horizon * n_u);
    let mut ak = DMatrix::identity(n, n);
    for k in 0..horizon {
        phi.view_mut((k * n_y, 0), (n_y, n)).copy_from(&(&sys.c * &ak));
        ak = &sys.a * ak;
    }
    for k in 0..horizon {
        let mut m = sys.b.clone();
        for i in (k + 1)..horizon {
            gamma.view_mut((i * n_y, k * n_u), (n_y, n_u)).copy_from(&(&sys.c * &m));
            m = &sys.a * m;
        }
    }
    let mut q_bar = DMatrix::zeros(horizon * n_y, horizon * n_y);
    let mut r_bar = DMatrix::zeros(horizon * n_u, horizon * n_u);
    let mut d = DMatrix::zeros(horizon * n_u, horizon * n_u);
    for k in 0..horizon {
        q_bar.view_mut((k * n_y, k * n_y), (n_y, n_y)).copy_from(q);
        r_bar.view_mut((k * n_u, k * n_u), (n_u, n_u)).copy_from(r);
        for c in 0..n_u {
            d[(k * n_u + c, k * n_u + c)] = 1.0;
            if k > 0 {
                d[(k * n_u + c, (k - 1) * n_u + c)] = -1.0;
            }
        }
    }
    let mut shift = DVector::zeros(horizon * n_u);
    shift.rows_mut(0, n_u).copy_from(u_prev);
    let lhs = gamma.transpose() * &q_bar * &gamma + d.transpose() * &r_bar * &d;
    let rhs = gamma.transpose() * &q_bar * (stack(reference) - &phi * x) + d.transpose() * &r_bar * shift;
    let u = lhs.lu().solve(&rhs).expect("oracle normal equations are nonsingular");
    u.rows(0, n_u).into_owned()
}

//! Simulated plants.
//!
//! Every plant follows the same sampling convention: `step(u)` returns the
//! output of the current state (with `u` feeding through `D` where present)
//! and then advances the state by one sample under `u`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::inf_norm;

pub trait Plant {
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    /// Sampling time in seconds.
    fn ts(&self) -> f64;
    fn state(&self) -> DVector<f64>;
    /// Replaces the state and restarts the sample counter.
    fn reset(&mut self, state: DVector<f64>) -> Result<()>;
    /// Measures the output, then advances one sample.
    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// State after one sample from `x` under `u` (noise- and disturbance-free).
    fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Zero-mean Gaussian measurement noise with a fixed seed.
#[derive(Debug, Clone)]
pub struct MeasurementNoise {
    pub std: DVector<f64>,
    rng: ChaCha8Rng,
}

impl MeasurementNoise {
    pub fn new(std: DVector<f64>, seed: u64) -> Self {
        MeasurementNoise { std, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn sample(&mut self) -> DVector<f64> {
        let n = self.std.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            out[i] = self.std[i] * z;
        }
        out
    }
}

/// Discrete LTI system `x⁺ = Ax + Bu`, `y = Cx + Du + d(k) + noise`.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    x: DVector<f64>,
    k: usize,
    ts: f64,
    /// Output disturbance switching to `value` from sample `start` on.
    disturbance: Vec<(usize, DVector<f64>)>,
    noise: Option<MeasurementNoise>,
}

impl LtiPlant {
    /// Plant with `D = 0`, zero initial state and no disturbance or noise.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, ts: f64) -> Result<Self> {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        Self::with_feedthrough(a, b, c, d, ts)
    }

    pub fn with_feedthrough(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, ts: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.shape() != (c.nrows(), b.ncols()) {
            return Err(dim_err(format!(
                "A {:?}, B {:?}, C {:?}, D {:?} are inconsistent",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if !(ts > 0.0) {
            return Err(Error::InvalidConfig("sampling time must be positive".into()));
        }
        Ok(LtiPlant { a, b, c, d, x: DVector::zeros(n), k: 0, ts, disturbance: Vec::new(), noise: None })
    }

    /// Adds an output disturbance step to `value` at sample `start`.
    pub fn add_disturbance_step(&mut self, start: usize, value: DVector<f64>) -> Result<()> {
        if value.len() != self.c.nrows() {
            return Err(dim_err("disturbance length differs from output count"));
        }
        self.disturbance.push((start, value));
        self.disturbance.sort_by_key(|(s, _)| *s);
        Ok(())
    }

    pub fn set_noise(&mut self, noise: Option<MeasurementNoise>) -> Result<()> {
        if let Some(n) = &noise {
            if n.std.len() != self.c.nrows() {
                return Err(dim_err("noise std length differs from output count"));
            }
        }
        self.noise = noise;
        Ok(())
    }

    fn disturbance_at(&self, k: usize) -> DVector<f64> {
        self.disturbance
            .iter()
            .rev()
            .find(|(s, _)| *s <= k)
            .map_or_else(|| DVector::zeros(self.c.nrows()), |(_, v)| v.clone())
    }

    /// Steady state `(I − A)⁻¹ B u`, if `I − A` is invertible.
    pub fn equilibrium(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.a.nrows();
        (DMatrix::identity(n, n) - &self.a).lu().solve(&(&self.b * u))
    }
}

impl Plant for LtiPlant {
    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn n_y(&self) -> usize {
        self.c.nrows()
    }

    fn ts(&self) -> f64 {
        self.ts
    }

    fn state(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn reset(&mut self, state: DVector<f64>) -> Result<()> {
        if state.len() != self.a.nrows() {
            return Err(dim_err("state length differs from A"));
        }
        self.x = state;
        self.k = 0;
        Ok(())
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.n_u() {
            return Err(dim_err(format!("input has {} entries, expected {}", u.len(), self.n_u())));
        }
        let mut y = &self.c * &self.x + &self.d * u + self.disturbance_at(self.k);
        if let Some(noise) = self.noise.as_mut() {
            y += noise.sample();
        }
        self.x = &self.a * &self.x + &self.b * u;
        self.k += 1;
        Ok(y)
    }

    fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.n_u() || x.len() != self.a.nrows() {
            return Err(dim_err("state or input length mismatch"));
        }
        Ok(&self.a * x + &self.b * u)
    }
}

/// Physical constants of the pasteurizer surrogate.
///
/// States are the holding-tube outlet `T1`, hot-water tank `T2` and
/// exchanger product outlet `T3` (all °C). Inputs are feed flow `u1`,
/// hot-water circulation `u2` and heater power `u3`:
///
/// ```text
/// C2 dT2/dt = p1·u3 − p2·u2·(T2 − T3) − p3·(T2 − Tamb)
/// C3 dT3/dt = p4·u2·(T2 − T3) − p5·u1·(T3 − Tin) − p6·(T3 − Tamb)
/// V  dT1/dt = u1·(T3 − T1) − p7·(T1 − Tamb)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct PasteurizerParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
    pub p7: f64,
    pub c2: f64,
    pub c3: f64,
    pub v: f64,
    pub t_amb: f64,
    pub t_in: f64,
    /// Sampling time in seconds.
    pub ts: f64,
    /// RK4 sub-steps per sample.
    pub substeps: usize,
}

impl Default for PasteurizerParams {
    fn default() -> Self {
        PasteurizerParams {
            p1: 80.0,
            p2: 3.0,
            p3: 1.0,
            p4: 3.0,
            p5: 0.5,
            p6: 0.5,
            p7: 5.0,
            c2: 20000.0,
            c3: 3000.0,
            v: 5000.0,
            t_amb: 20.0,
            t_in: 10.0,
            ts: 10.0,
            substeps: 10,
        }
    }
}

impl PasteurizerParams {
    /// Name/value pairs, in a fixed order, for logs and hashing.
    pub fn entries(&self) -> [(&'static str, f64); 14] {
        [
            ("p1", self.p1),
            ("p2", self.p2),
            ("p3", self.p3),
            ("p4", self.p4),
            ("p5", self.p5),
            ("p6", self.p6),
            ("p7", self.p7),
            ("C2", self.c2),
            ("C3", self.c3),
            ("V", self.v),
            ("Tamb", self.t_amb),
            ("Tin", self.t_in),
            ("Ts", self.ts),
            ("substeps", self.substeps as f64),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.c2, self.c3, self.v, self.ts];
        if positive.iter().any(|v| !(*v > 0.0)) || self.substeps == 0 {
            return Err(Error::InvalidConfig("capacities, V, Ts and substeps must be positive".into()));
        }
        if self.entries().iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidConfig("surrogate parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Nonlinear three-temperature pasteurization surrogate.
#[derive(Debug, Clone)]
pub struct PasteurizerSurrogate {
    pub params: PasteurizerParams,
    /// (T1, T2, T3).
    x: DVector<f64>,
    noise: Option<MeasurementNoise>,
}

impl PasteurizerSurrogate {
    /// Starts with every temperature at ambient.
    pub fn new(params: PasteurizerParams) -> Result<Self> {
        params.validate()?;
        let x = DVector::from_element(3, params.t_amb);
        Ok(PasteurizerSurrogate { params, x, noise: None })
    }

    pub fn set_noise(&mut self, noise: Option<MeasurementNoise>) -> Result<()> {
        if let Some(n) = &noise {
            if n.std.len() != 3 {
                return Err(dim_err("noise std must have 3 entries"));
            }
        }
        self.noise = noise;
        Ok(())
    }

    fn derivative(&self, x: &[f64; 3], u: &[f64; 3]) -> [f64; 3] {
        let p = &self.params;
        let (t1, t2, t3) = (x[0], x[1], x[2]);
        let (u1, u2, u3) = (u[0], u[1], u[2]);
        let exchange = u2 * (t2 - t3);
        [
            (u1 * (t3 - t1) - p.p7 * (t1 - p.t_amb)) / p.v,
            (p.p1 * u3 - p.p2 * exchange - p.p3 * (t2 - p.t_amb)) / p.c2,
            (p.p4 * exchange - p.p5 * u1 * (t3 - p.t_in) - p.p6 * (t3 - p.t_amb)) / p.c3,
        ]
    }

    fn integrate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != 3 || x.len() != 3 {
            return Err(dim_err("surrogate has 3 inputs and 3 states"));
        }
        let uu = [u[0], u[1], u[2]];
        let mut s = [x[0], x[1], x[2]];
        let h = self.params.ts / self.params.substeps as f64;
        let add = |a: &[f64; 3], k: &[f64; 3], f: f64| [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2]];
        for _ in 0..self.params.substeps {
            let k1 = self.derivative(&s, &uu);
            let k2 = self.derivative(&add(&s, &k1, 0.5 * h), &uu);
            let k3 = self.derivative(&add(&s, &k2, 0.5 * h), &uu);
            let k4 = self.derivative(&add(&s, &k3, h), &uu);
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(DVector::from_row_slice(&s))
    }
}

impl Plant for PasteurizerSurrogate {
    fn n_u(&self) -> usize {
        3
    }

    fn n_y(&self) -> usize {
        3
    }

    fn ts(&self) -> f64 {
        self.params.ts
    }

    fn state(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn reset(&mut self, state: DVector<f64>) -> Result<()> {
        if state.len() != 3 {
            return Err(dim_err("surrogate state has 3 entries"));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.x = state;
        Ok(())
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let next = self.integrate(&self.x, u)?;
        let mut y = self.x.clone();
        if let Some(noise) = self.noise.as_mut() {
            y += noise.sample();
        }
        self.x = next;
        Ok(y)
    }

    fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.integrate(x, u)
    }
}

/// Maximum number of fixed-point iterations in [`steady_state_solve`].
pub const STEADY_STATE_MAX_ITERATIONS: usize = 100_000;

/// Fixed point of the one-sample state map under a constant input, found by
/// damped iteration from the plant's current state. The damping factor is
/// halved whenever the step residual grows.
pub fn steady_state_solve(plant: &dyn Plant, u: &DVector<f64>) -> Result<DVector<f64>> {
    const TOL: f64 = 1e-8;
    let mut x = plant.state();
    let mut omega = 1.0;
    let mut last = f64::INFINITY;
    for _ in 0..STEADY_STATE_MAX_ITERATIONS {
        let fx = plant.next_state(&x, u)?;
        let step = &fx - &x;
        let residual = inf_norm(&step);
        if !residual.is_finite() {
            return Err(Error::NonFinite);
        }
        if residual <= TOL {
            return Ok(fx);
        }
        if residual > last {
            omega = (omega * 0.5f64).max(1e-3);
        }
        last = residual;
        x += step * omega;
    }
    let residual = inf_norm(&(plant.next_state(&x, u)? - &x));
    Err(Error::NoConvergence { iterations: STEADY_STATE_MAX_ITERATIONS, residual })
}

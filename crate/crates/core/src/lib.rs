//! Data-driven predictive control.
//!
//! Two controllers built from recorded input/output data and compared under
//! one shared tuning:
//!
//! * regularized DeePC ([`deepc`]), which predicts directly from block-Hankel
//!   matrices of a persistently exciting trajectory ([`hankel`]);
//! * offset-free Koopman MPC ([`koopman`]), which identifies a lifted linear
//!   model, augments it with a constant output disturbance and estimates both
//!   with a Kalman filter.
//!
//! Both controllers solve one convex QP per sample with the embedded solver in
//! [`qp`]. Simulated plants live in [`plant`], data generation and scaling in
//! [`dataio`], and closed-loop performance measures in [`metrics`].
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. The only thing `std` adds is a wall clock for QP time limits.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod dataio;
pub mod deepc;
pub mod error;
pub mod hankel;
pub mod koopman;
pub mod linalg;
pub mod metrics;
pub mod plant;
pub mod qp;
pub mod tuning;

mod math;

pub use controller::{PredictiveController, StepOutcome};
pub use error::{Error, Result};
pub use tuning::SharedTuning;

pub use nalgebra::{DMatrix, DVector};

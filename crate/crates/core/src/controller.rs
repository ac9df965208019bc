//! Receding-horizon controller interface shared by DeePC and KMPC.

use alloc::string::String;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::qp::QpStatus;
use crate::tuning::SharedTuning;

/// Result of one control computation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Input to apply, engineering units.
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// QP objective of the solve (scaled coordinates).
    pub objective: f64,
    pub iterations: usize,
    pub solve_time: f64,
    /// True when the solve failed and the previous input was held.
    pub fallback: bool,
}

/// A controller driven one sample at a time.
///
/// The loop is `compute` → apply the input → `observe(u, y)`, where `y` is
/// the output measured in the same sample as `u` was applied.
pub trait PredictiveController {
    fn name(&self) -> String;

    fn tuning(&self) -> &SharedTuning;

    /// Records an applied input and the output measured with it.
    fn observe(&mut self, u_applied: &DVector<f64>, y_measured: &DVector<f64>) -> Result<()>;

    /// Plans over the horizon and returns the next input. `reference` has
    /// one row per horizon step (engineering units).
    fn compute(&mut self, reference: &DMatrix<f64>) -> Result<StepOutcome>;

    /// Most recent input applied to the plant, if any.
    fn last_applied(&self) -> Option<&DVector<f64>>;
}

/// Fails unless every controller carries identical tuning.
pub fn ensure_shared_tuning(controllers: &[&dyn PredictiveController]) -> Result<()> {
    if let Some((first, rest)) = controllers.split_first() {
        for other in rest {
            first.tuning().ensure_same(other.tuning())?;
        }
    }
    Ok(())
}

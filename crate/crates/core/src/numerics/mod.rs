//! Dense linear algebra and deterministic randomness shared by all modules.

mod factor;
mod matrix;
mod power;
mod prng;

pub use factor::{ldlt_solve, LdltFactor, PIVOT_REL_TOL};
pub use matrix::{Matrix, Vector};
pub use power::{
    spectral_radius_estimate, top_right_singular_vector, POWER_FAIL_TOL, POWER_MAX_ITER, POWER_TOL,
};
pub use prng::{standard_normal, Prng};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("power iteration did not converge (direction change {0:.3e})")]
    DidNotConverge(f64),
    #[error("non-finite entry")]
    NonFinite,
}

//! Numeric tolerances shared across modules.

use serde::{Deserialize, Serialize};

/// Largest |j| for which 2^{-j} and lattice corners stay exact in `f64`.
pub const MAX_SCALE: i32 = 40;

/// Cap on the number of cubes a window may enumerate at a single scale.
pub const MAX_WINDOW_CUBES: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Relative tolerance on `‖A − A*‖` for accepting a matrix as Hermitian.
    pub hermitian_tol: f64,
    /// Eigenvalues below `eig_floor · λ_max` make a matrix non positive-definite.
    pub eig_floor: f64,
    /// Sweep cap for the cyclic Jacobi eigensolver.
    pub jacobi_max_sweeps: usize,
    /// Relative slack for pointwise sandwich checks.
    pub sandwich_slack: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        POLICY
    }
}

pub const POLICY: NumericPolicy = NumericPolicy {
    hermitian_tol: 1e-10,
    eig_floor: 1e-14,
    jacobi_max_sweeps: 64,
    sandwich_slack: 1e-10,
};

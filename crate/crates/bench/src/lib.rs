//! Benchmark fixtures.

use homog_core::{build_lagrangian, HamiltonianSpec, LagrangianField};

/// `V = 2 + cos 2πx` in one dimension.
pub fn cosine_1d() -> LagrangianField {
    build_lagrangian(&HamiltonianSpec::cosine(1, 2.0, &[(1.0, &[1])]).unwrap()).unwrap()
}

/// `V = 3 + cos 2πx₁ + cos 2πx₂`.
pub fn cosine_2d() -> LagrangianField {
    build_lagrangian(&HamiltonianSpec::cosine(2, 3.0, &[(1.0, &[1, 0]), (1.0, &[0, 1])]).unwrap())
        .unwrap()
}

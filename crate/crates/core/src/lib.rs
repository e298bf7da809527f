//! Numerical homogenization of periodic convex Hamilton-Jacobi equations
//! through the optimal-control (metric) formulation.

pub mod alexander;
pub mod config;
pub mod effective;
pub mod error;
pub mod fit;
pub mod hamiltonian;
pub mod harness;
pub mod lattice;
pub mod legendre;
pub mod metric;
pub mod solver;

pub use config::Config;
pub use error::{Error, Result};
pub use fit::RateReport;
pub use hamiltonian::{evaluate_hamiltonian, normalize, HamiltonianSpec, Potential};
pub use lattice::{Discretization, Quadrature};
pub use legendre::{build_lagrangian, legendre_transform, ConvexFunctionTable, LagrangianField};
pub use metric::{
    compute_metric_table, extract_minimizing_path, metric_point, round_into_cone, Cone,
    DiscretePath, MetricTable,
};

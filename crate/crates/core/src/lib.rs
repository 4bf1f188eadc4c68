//! Large-deviation laboratory for population jump processes with boundaries.
//!
//! State spaces are polyhedra, dynamics are jump processes whose limiting
//! Hamiltonians come in families indexed by boundary faces. The crate computes
//! Lagrangians and path actions, integrates zero-cost and controlled flows,
//! simulates the finite-n processes exactly, and probes the conditions under
//! which the boundary Hamilton-Jacobi equations admit a comparison principle.

pub mod action;
pub mod conditions;
pub mod expr;
pub mod flows;
pub mod geometry;
pub mod hj1d;
pub mod ldp_verify;
pub mod legendre;
pub mod models;
pub mod numerics;
pub mod simulator;

pub use expr::{parse_rate_expr, CompiledExpr, ExprError, RateExpr};
pub use geometry::{FaceIndex, GeometryError, HalfSpace, Polyhedron, PolyhedronSpec};
pub use models::{GeneratingHamiltonians, HamiltonianError, Model, ModelError, ModelSpec};

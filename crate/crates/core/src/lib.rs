//! Dynamical systems method (DSM) for ill-posed linear equations `A u = f`
//! with a discrepancy-principle stopping time, plus the analogous
//! discrepancy principle for nonlinear monotone operators.
//!
//! The linear pipeline is:
//!
//! 1. decompose the operator ([`operators::decompose`]),
//! 2. assemble the discrepancy profile of the noisy data
//!    ([`discrepancy::build_profile`]) and solve
//!    `‖A(B+ε)⁻¹A*f_δ − f_δ‖ = Cδ` for `ε*`,
//! 3. map `ε*` to the stopping time `t_δ` through the schedule `ε(t)`,
//! 4. integrate `u' = −u + (B+ε(t))⁻¹A*f_δ` from `0` to `t_δ`
//!    ([`dsm::evolve`]).
//!
//! [`dsm::run_dsm`] does all of the above in one call.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discrepancy;
pub mod dsm;
pub mod error;
pub mod nonlinear;
pub mod operators;
pub mod problems;
pub mod schedule;

pub use discrepancy::{DiscrepancyProfile, StoppingResult};
pub use dsm::{DsmConfig, DsmResult, Integrator, Trajectory};
pub use error::{Error, Result, Stage};
pub use nonlinear::{MonotoneOperator, NearMinimizer, SeparableOperator};
pub use operators::{DenseOperator, SpectralDecomposition, Vector};
pub use problems::{NoiseSpec, TestProblem};
pub use schedule::{PowerSchedule, Schedule};

//! Solvers for entropy-regularized equitable and optimal transport.
//!
//! Given marginals `a`, `b` and one cost matrix per agent, the equitable
//! transport problem splits the mass among the agents so that the largest
//! agent cost is as small as possible. This crate solves its entropic dual
//! with three first-order methods, rounds the result to a feasible plan, and
//! certifies it with a duality gap.
//!
//! ```
//! use eot::{default_schedule, solve_pam, duality_gap, Algorithm, Problem};
//! use ndarray::array;
//!
//! let problem = Problem::from_matrices(
//!     vec![0.5, 0.5],
//!     vec![0.5, 0.5],
//!     &[array![[0.0, 1.0], [1.0, 0.0]], array![[1.0, 0.0], [0.0, 1.0]]],
//! )?;
//! let config = default_schedule(&problem, 0.1, Algorithm::Pam)?;
//! let result = solve_pam(&problem, &config)?;
//! let report = duality_gap(&result.plan, &result.lambda_hat, &problem)?;
//! assert!(report.gap <= 0.1);
//! # Ok::<(), eot::EotError>(())
//! ```
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, with `F32` variants alongside.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod oracle;
pub mod problem;
pub mod rounding;
pub mod scalar;
pub mod solvers;

pub use datasets::{gen_fragmented_hypercube, gen_gaussian, gen_metric_suite, generate, DatasetKind, DatasetSpec};
pub use diagnostics::{
    cost_spread, duality_gap, duality_gap_with, eot_error, exact_ot, g_range_check, max_over_lambda, min_over_pi,
    primal_value, GapReport, OtMethod,
};
pub use error::{EotError, Result};
pub use kernels::{dual_objective, evaluate, project_simplex, Evaluation};
pub use oracle::{brute_saddle, enumerate_transport_vertices, GridSpec, SaddleOracle};
pub use problem::{default_schedule, validate_problem, Algorithm, DualState, EotProblem, PlanTensor, SolverConfig, StopThresholds};
pub use rounding::{margins, recover_primal, round_plan, MarginPair};
pub use scalar::Scalar;
pub use solvers::{solve, solve_apga, solve_pam, solve_pame, IterationRecord, SolveResult, Termination};

pub type Problem = EotProblem<f64>;
pub type State = DualState<f64>;
pub type Plan = PlanTensor<f64>;
pub type Config = SolverConfig<f64>;
pub type Solution = SolveResult<f64>;
pub type Gap = GapReport<f64>;

pub type ProblemF32 = EotProblem<f32>;
pub type StateF32 = DualState<f32>;
pub type PlanF32 = PlanTensor<f32>;
pub type ConfigF32 = SolverConfig<f32>;
pub type SolutionF32 = SolveResult<f32>;
pub type GapF32 = GapReport<f32>;

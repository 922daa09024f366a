//! Iteratively reweighted ℓ1 methods for ℓp-regularized problems
//! `min f(x) + λ Σ |x_i|^p` with `0 < p < 1`.
//!
//! The solver replaces the nonsmooth penalty by the smoothed weights
//! `w_i = p (|x_i| + ε_i)^(p-1)`, solves a weighted-ℓ1 local model at each
//! step, and drives `ε` to zero. An optional backtracking line search adds a
//! proximal term until a sufficient-decrease test holds.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod format;
pub mod instance;
pub mod problem;
pub mod reweighting;
pub mod solver;
pub mod subproblem;

pub use error::{Error, Result};
pub use instance::{generate_ensemble, generate_instance, Profile, RecoveryInstance};
pub use problem::{LeastSquares, LpProblem, MatrixContainer, SmoothObjective};
pub use reweighting::{compute_weights, EpsStrategy, EpsilonState, WeightVector};
pub use solver::{irl1_ls_solve, irl1_solve, solve, IterateRecord, SolveResult, SolveStatus, SolverOptions};
pub use subproblem::{LocalModel, ModelKind};

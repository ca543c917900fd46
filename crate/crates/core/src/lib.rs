//! Natural and vanilla policy gradients on small control problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`distributions`]: Gaussian and softmax policy families, scores, KL, exact Fisher.
//! - [`fisher`]: sampled and finite-difference Fisher estimates, damping.
//! - [`solver`]: Cholesky and conjugate-gradient solves of `F x = g`.
//! - [`env`]: bandit and gridworld environments, rollouts, REINFORCE.
//! - [`natural_gradient`]: KL-budgeted natural gradient steps and the vanilla step.
//! - [`experiment`]: config-driven training runs, method comparisons and diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod env;
pub mod error;
pub mod experiment;
pub mod fisher;
pub mod linalg;
pub mod natural_gradient;
pub mod solver;

pub use distributions::{Action, Chart, FamilyKind, ParamVector, PolicyFamily};
pub use error::{Error, Result};
pub use fisher::{FisherEstimate, Provenance};
pub use natural_gradient::{NpgOptions, PolicyGeometry, UpdateReport};
pub use solver::{SolveReport, SolverChoice};

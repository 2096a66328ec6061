//! Stochastic proximal iteration (SPI) for ridge-regularized logistic
//! regression on a discretized function space, with an SGD baseline, a
//! multi-path convergence experiment and numerical checks of the inequalities
//! the convergence analysis rests on.

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiment;
pub mod function_space;
pub mod lemma_oracles;
pub mod model;
pub mod plot;
pub mod solvers;

pub use error::{Error, Result};
pub use function_space::{generate_dataset, Dataset, GridFunction, Label, Sample};
pub use model::{ParamState, Problem};
pub use solvers::{run_chain, ChainResult, Method, Schedule, StepRule};

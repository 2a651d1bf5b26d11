//! Robust hyperspectral unmixing by maximizing correntropy.
//!
//! The crate is `no_std` and only needs `alloc`. It carries the numerical
//! pieces: dense linear algebra, the problem types, the correntropy objective
//! and its gradients, the ADMM solvers (fully-constrained and sparse), the
//! quadratic baselines, a synthetic data generator and the evaluation metrics.
//! File formats, the experiment runner and the command line live in the
//! `unmix` crate.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code, rust_2018_idioms)]

extern crate alloc;

pub mod baselines;
pub mod correntropy;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod problem;
pub mod solvers;
pub mod synth;

pub use error::{Result, UnmixError};
pub use linalg::Matrix;
pub use problem::{
    project_nonnegative, soft_threshold, validate_problem, AbundanceMatrix, Constraint,
    EndmemberMatrix, ObservationMatrix, ProblemHandle, SolverConfig, SolverReport,
    TerminationReason, Warning,
};

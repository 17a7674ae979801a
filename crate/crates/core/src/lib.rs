//! Committor functions in tensor-train format.
//!
//! Solves the penalized variational formulation of the backward Kolmogorov
//! equation by discretizing in a tensor product basis and parametrizing both
//! the equilibrium density and the unknown committor as matrix product
//! states / tensor trains. Optimization is alternating least squares over
//! the TT cores, with O(d) cost per sweep.
//!
//! Module layout:
//! - [`tt`]: TT/MPO containers, contraction, rounding, quadratic forms
//! - [`quadrature`], [`basis`]: Gauss-Legendre rules and univariate bases
//! - [`density`]: equilibrium densities and soft boundary measures in TT form
//! - [`assembly`]: Galerkin operator assembly (energy and penalty MPOs)
//! - [`solver`]: ALS minimization of the discretized objective
//! - [`validation`]: finite-difference references, Langevin and jump-process
//!   simulators, isosurface hitting tests, clustering, reactive flow
//! - [`io`]: text serialization (TTv1/MPOv1) and CSV output
//! - [`config`]: flat key-value run configuration and manifests

pub mod assembly;
pub mod basis;
pub mod config;
pub mod dense;
pub mod density;
pub mod error;
pub mod io;
pub mod parallel;
pub mod pipeline;
pub mod quadrature;
pub mod solver;
pub mod tt;
pub mod validation;

pub use error::{Error, Result};
pub use tt::{MatrixProductOperator, TensorTrain};

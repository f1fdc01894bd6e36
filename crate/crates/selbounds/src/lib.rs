//! Bounds on marginal treatment effects for the always-observed subpopulation
//! when both treatment take-up and sample selection are endogenous.
//!
//! The pipeline:
//!
//! 1. [`data_io`] loads weighted micro-data and estimates discrete propensity scores.
//! 2. [`mtr_bernstein`] fits Bernstein-polynomial marginal treatment response
//!    (MTR) functions for the outcome and the selection indicator by
//!    constrained least squares; [`liv`] recovers MTRs from continuous
//!    propensity variation instead.
//! 3. [`bounds_engine`] turns the four MTR curves into per-`u` bounds on the
//!    always-observed marginal treatment effect under several assumption sets.
//! 4. [`effects`] integrates those bounds into ATE/ATT/ATU/LATE intervals.
//! 5. [`inference`] bootstraps the whole pipeline for confidence intervals.
//!
//! [`outer_set`] computes nonparametric outer sets by linear programming,
//! [`witness`] constructs distributions that attain interior points of the
//! bounds (a sharpness check), and [`mc_harness`] simulates the Monte Carlo
//! designs used to study coverage.

pub mod bounds_engine;
pub mod data_io;
pub mod effects;
pub mod error;
pub mod inference;
pub mod liv;
pub mod mc_harness;
pub mod mtr_bernstein;
pub mod outer_set;
pub mod qp;
pub mod quadrature;
pub mod rng;
pub mod simplex;
pub mod witness;

pub use error::{Error, Result};

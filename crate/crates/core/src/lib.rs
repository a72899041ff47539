//! Subsampling designs for logistic regression on large cohorts.
//!
//! When a binary outcome is expensive to validate (chart review, lab
//! confirmation) or the cohort is too large to fit directly, one selects a
//! subsample, observes the outcome there, and solves an inverse-probability
//! weighted score equation. This crate implements and compares the two main
//! families of subsampling designs for that problem:
//!
//! - **Individualized** designs assign each unit its own inclusion
//!   probability and sample units independently: A-optimal probabilities
//!   proportional to influence-function norms ([`designs::osmac`]) and their
//!   surrogate-assisted two-step approximation ([`designs::ossat`]).
//! - **Stratified** designs partition the cohort and run simple random
//!   sampling within strata: Neyman allocation on influence-function
//!   variances ([`designs::neyman_allocation`]) and an adaptive two-wave
//!   variant driven by a pilot sample ([`designs::adaptive_two_wave`]).
//!
//! Closed-form design variances for both families live in [`variance`],
//! together with an exact enumeration oracle for small populations. The
//! [`simgen`] module generates the benchmark scenarios (seven covariate
//! distributions, differentially misclassified surrogate outcomes), and
//! [`harness`] runs full strategy-vs-strategy Monte Carlo grids with
//! reproducible parallel replicates.

pub mod designs;
pub mod error;
pub mod harness;
pub mod logistic;
pub mod numerics;
pub mod sampling;
pub mod simgen;
pub mod variance;

pub use error::{Error, Result};

pub use numerics::{Matrix, RngStream};

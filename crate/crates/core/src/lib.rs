//! Exchange-driven growth with continuous cluster sizes.
//!
//! * [`kernels`]: exchange kernels, envelope checks, admissible moments
//! * [`measures`]: grid measures, tails, exact W1, moments
//! * [`particle_sim`]: exact stochastic simulation of the cluster process
//! * [`master_oracle`]: forward equation of the empirical-measure chain for tiny systems
//! * [`mean_field`]: conservative deterministic solver for the limit equation
//! * [`init`]: initial data, fiber sampling and initial relative entropy
//! * [`harness`]: convergence, moment, Aldous and oracle studies

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod init;
pub mod io;
pub mod kernels;
pub mod master_oracle;
pub mod mean_field;
pub mod measures;
pub mod numeric;
pub mod particle_sim;
pub mod rng;

pub use error::{Error, Result};
pub use kernels::{builtin_kernel, AdmissibleMoment, Kernel, KernelSpec};
pub use measures::{w1, GridMeasure, MeasureKind, Trajectory};

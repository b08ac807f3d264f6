//! Numerical laboratory for metric mean dimension of random dynamical systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`base`]: the driving ergodic system (symbol streams, circle rotations) with
//!   counter-based seeded sampling.
//! * [`fiber`]: compact sequence fibers, their weighted metrics and candidate clouds.
//! * [`rds`]: random maps, the skew product, Bowen metrics, Birkhoff sums and potentials.
//! * [`packing`]: maximal separated sets, log-domain partition functions and
//!   cover/partition pressures.
//! * [`estimation`]: pressure curves, fiber entropy, mdim slope fits and the finite-n
//!   partition-function property suite.
//! * [`measure`]: measures with marginal ℙ, Cesàro push-forwards and the
//!   measure-theoretic metric mean dimension.
//! * [`experiments`]: configuration-driven runner behind the `rmdim` binary.
//!
//! Work that is data-parallel (ω-samples, task grids, optimizer generations) goes
//! through [`exec`], which uses rayon when the `parallel` feature is on and plain
//! iteration otherwise. Results are identical either way.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod experiments;
pub mod fiber;
pub mod measure;
pub mod numeric;
pub mod optimize;
pub mod packing;
pub mod rds;

pub use error::{Error, Result};

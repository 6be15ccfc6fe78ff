//! Toolkit for training and evaluating neural-network approximations of
//! constrained linear MPC.
//!
//! The pipeline: compute the maximal control invariant set of a constrained
//! linear system, sample it uniformly with a hit-and-run walker, label the
//! samples by solving the finite-horizon MPC QP, train plain and
//! projection-constrained ReLU networks on the labels, and score the result
//! with NMSE and normalized closed-loop cost.

pub mod acquisition;
pub mod benchmarks;
pub mod dataset;
pub mod eval;
pub mod hash;
pub mod mpc;
pub mod network;
pub mod numerics;
pub mod optimize;
pub mod polytope;
pub mod sampler;

#[cfg(test)]
pub(crate) mod testutil;

pub use numerics::{Matrix, Prng, Vector};

#![no_std]

//! Tabular episodic reinforcement learning under stepwise group-fairness
//! constraints.
//!
//! The crate is split along the learning loop:
//!
//! - [`mdp`] holds the finite-horizon model (states `s = 2x + y`, binary
//!   actions, one kernel per group) and the exact forward/backward
//!   recursions used everywhere else.
//! - [`sim`] rolls stochastic episodes from a [`mdp::ProblemSpec`] with
//!   counter-based per-individual random streams ([`rng`]).
//! - [`estimation`] turns episodes into counts, empirical kernels, the
//!   optimistic reward and the relaxation schedule.
//! - [`solver`] optimizes group policies subject to demographic-parity or
//!   equal-opportunity constraints at every step.
//! - [`metrics`] evaluates policies against the ground truth.
//! - [`datagen`] builds the synthetic and score-based benchmark instances.
//!
//! Everything here is `no_std` + `alloc`; file formats, the experiment
//! driver and the command line live in the companion `fairstep` crate.

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod error;
pub mod estimation;
mod math;
pub mod mdp;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use mdp::{
    GroupModel, OccupancyMeasure, PlanningModel, Policy, ProblemSpec, RewardModel, RewardNoise,
    StateSpace, TransitionKernel, ValueFunctions,
};

/// Number of actions (reject = 0, accept = 1).
pub const ACTIONS: usize = 2;

/// Minimum conditioning mass accepted by conditional probabilities.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;

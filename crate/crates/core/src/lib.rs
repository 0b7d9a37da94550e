//! Simulation, optimal-control and stability tooling for the two-class,
//! two-pool N-network in the Halfin–Whitt regime.
//!
//! Layout:
//! - [`model`]: rate parameters, fluid quantities, finite-n instances, costs.
//! - [`policies`]: scheduling maps (static priority, joint work conservation,
//!   policies induced by a diffusion control field).
//! - [`ctmc_sim`]: exact event-driven simulation with cost accounting.
//! - [`diffusion`]: the limiting controlled diffusion.
//! - [`hjb`]: finite-difference solver for the ergodic HJB problems.
//! - [`mdp_oracle`]: relative value iteration on the truncated finite-n chain.
//! - [`lyapunov`]: numerical Foster–Lyapunov drift checks.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc_sim;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod hjb;
mod linalg;
pub mod lyapunov;
pub mod mdp_oracle;
pub mod model;
pub mod policies;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;

//! Deterministic single-process simulator for federated optimization with
//! control variates in random subspaces.
//!
//! * [`problem`]: heterogeneous federated ridge matrix regression with a
//!   closed-form optimum.
//! * [`subspace`]: shared orthonormal projectors and the
//!   decompose / lift / backfill mechanics.
//! * [`algorithms`]: FedAvg, SCAFFOLD, SSF (subspace SCAFFOLD with
//!   full-dimensional controls) and FedSub round engines.
//! * [`theory`]: stepsize rules and Monte-Carlo checks of the convergence
//!   inequalities.
//! * [`harness`]: configuration files, learning-rate search, sweeps, CSV and
//!   report output.

pub mod algorithms;
mod dense;
pub mod error;
pub mod harness;
pub mod problem;
pub mod rng;
pub mod subspace;
pub mod theory;

pub use algorithms::{
    Algorithm, ControlState, ModelState, OptimizerConfig, RoundOutput, RunRecord, Simulation,
};
pub use error::{FedError, Result};
pub use nalgebra::DMatrix;
pub use problem::{ClientDataset, Federation, ProblemConfig};
pub use subspace::{Decomposition, Projector};

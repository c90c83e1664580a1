//! Kernel-weighted sparse additive action-value estimation for batch
//! reinforcement learning.
//!
//! A grid of local linear models is fitted along one candidate variable (a
//! state feature, a per-trajectory covariate, or a continuous action). Each
//! local model is an additive B-spline expansion of the remaining features,
//! estimated by a kernel-weighted least-squares fixed point with a
//! group-Lasso penalty. Greedy policies read off the grid drive approximate
//! policy iteration.

pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernel;
pub mod modelsel;
pub mod policy;
pub mod sim;
pub mod solver;

pub use basis::{BasisSpec, FeatureMap, NextAction};
pub use data::{Action, ActionSpace, BatchDataset, CandidateChoice, Transition};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use policy::{GreedyPolicy, Policy};
pub use solver::{FitMethod, LocalModelGrid, SolverConfig};

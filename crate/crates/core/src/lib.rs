//! Distributed event localization over clustered sensor networks.
//!
//! A network of range sensors is split into clusters. Each cluster head solves
//! a convex relaxation of the maximum-likelihood localization problem over its
//! own measurements and exchanges position estimates with neighbouring heads.
//! Consensus is driven by ADMM, either sequentially (Gauss-Seidel, [`Variant::Gs`])
//! or in parallel with a proximal term (Jacobian, [`Variant::J`]). Isolated
//! ([`Variant::Scl`]) and centralized ([`Variant::Tcl`]) baselines are provided
//! for comparison, together with a Monte Carlo harness.
//!
//! Modules, bottom-up:
//! - [`model`]: scenarios and the Gaussian range measurement generator.
//! - [`graph`]: cluster-head topology, incidence matrix and its spectral bound.
//! - [`subsolver`]: per-cluster relaxed subproblem and its log-barrier solver.
//! - [`engine`]: GS/J-ADMM rounds, dual bookkeeping and convergence diagnostics.
//! - [`harness`]: RMSE metrics, Monte Carlo trials and parameter sweeps.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod subsolver;

pub use engine::{RunConfig, RunRecord, Variant};
pub use error::{Error, Result};
pub use graph::ClusterGraph;
pub use model::{Cluster, MeasurementSet, Scenario, Sensor};
pub use subsolver::{BarrierSettings, LocalState};

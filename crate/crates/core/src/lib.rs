//! Network-based neighborhood regression.
//!
//! A node's response is modeled as a community-weighted sum of the covariates
//! of its network neighbors (itself included):
//! `y = (Z β Zᵀ ∗ A) x + ε`, with `A` the adjacency matrix, `Z` the one-hot
//! community membership, and `β` a K×K matrix of directional effects.
//!
//! - [`graph`]: adjacency matrices, stochastic block model sampling, edge lists
//! - [`community`]: spectral detection, k-means, label alignment
//! - [`regression`]: community-wise least squares and structured variants
//! - [`inference`]: Hessians, homoskedastic and HC covariances, Wald tests
//! - [`baseline`]: the network-cohesion (netcoh) estimator and network ablations
//! - [`metrics`]: estimation/prediction errors and the network-adjusted R²
//! - [`sim`]: synthetic experiments and Monte Carlo checks

pub mod baseline;
pub mod community;
pub mod error;
pub mod graph;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod regression;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra;

//! Coalitional (Möbius) decompositions of quantities of interest.
//!
//! A quantity `φ` defined on every subset of the inputs of a model is split
//! into dividends `ψ_A = Σ_{B ⊆ A} (−1)^{|A∖B|} φ_B`, which sum back to the
//! total `φ_D`. Variances, covariances, covariance matrices (under the
//! Hadamard product) and the mean MMD are supported.

pub mod engine;
pub mod estimators;
pub mod inputs;
pub mod lattice;
pub mod models;
pub mod ring;
pub mod rng;

pub use engine::{decompose, DecomposeError, DecompositionReport};
pub use estimators::{Bandwidth, EstimatorBudget, KernelSpec, QoISpec};
pub use inputs::{InputModel, Marginal};
pub use lattice::{SetFunctionTable, SubsetMask};
pub use models::Model;
pub use ring::{Ring, RingValue, SymMatrix};

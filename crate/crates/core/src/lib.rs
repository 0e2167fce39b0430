//! Deformed semicircle laws for sparse random matrices.
//!
//! This crate computes the equilibrium measures of matrices `H = W + lambda V`,
//! where `W` is a sparse Wigner-type matrix and `V` a diagonal potential:
//! the deformed semicircle law, its sparsity-refined version, spectral edges,
//! and classical eigenvalue locations. It also samples the matrix ensemble and
//! runs statistical experiments that confront Monte Carlo spectra with the
//! theoretical error envelopes.
//!
//! Modules:
//! - [`measure`]: compactly supported probability measures and their calculus.
//! - [`dsclaw`]: self-consistent Stieltjes-transform solvers, edges, envelopes.
//! - [`ensemble`]: seeded sampling of deformed sparse matrices and resolvents.
//! - [`verify`]: Monte Carlo experiments with pass/fail reports.

pub mod dsclaw;
pub mod ensemble;
mod error;
pub mod measure;
mod quad;
pub mod verify;

pub use error::Error;

/// Convenient result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

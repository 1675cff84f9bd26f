//! Bi-level protected compressive sampling.
//!
//! The encoder applies a non-RIP measurement matrix `Φ = A_K Ψ_K⁻¹`; the
//! legitimate decoder, who knows the key, splits it back into a Gaussian
//! sensing matrix `A_K` and a key-dependent sparsifying basis `Ψ_K` and
//! reconstructs in two steps. The crate also carries the baseline scrambling
//! and phase-mask ciphers, chosen-plaintext attacks against them, and the
//! column-parallel image pipeline.

pub mod attacks;
pub mod bases;
pub mod cipher;
pub mod ensembles;
pub mod experiments;
pub mod error;
pub mod imaging;
pub mod keyrand;
pub mod matrix;
pub mod solvers;

pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, DenseMatrix};

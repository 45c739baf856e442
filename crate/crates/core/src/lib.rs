//! Membership-mapping learning and secure fuzzy-rule inference.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the numeric
//! pieces of the pipeline:
//!
//! * [`kernel`]: the ARD squared-exponential kernel and Gram matrices.
//! * [`learner`]: the globally convergent variational learner for a bank of
//!   membership-mappings, prediction and the robustness diagnostic.
//! * [`autoencoder`]: conditionally deep (CDMMA) and wide autoencoders built
//!   from membership-mappings, and their filtering rules.
//! * [`fuzzy`]: fuzzy attributes induced by autoencoders, local classifiers
//!   and the plaintext global classifier.
//! * [`gates`]: bit encoding, the encrypted-bit backend abstraction, a
//!   plaintext simulation backend and the boolean argmin circuits.
//!
//! IO, wire formats and the CLI live in the `mmfhe` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autoencoder;
pub mod error;
pub mod fuzzy;
pub mod gates;
pub mod kernel;
pub mod kmeans;
pub mod learner;

pub use error::{Error, Result};

/// Row-major list of points stored as the rows of a dense matrix.
pub type Points = nalgebra::DMatrix<f64>;

//! Streaming second-order optimization with a masked online estimator of the
//! inverse Hessian.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedules`]: step-size, ridge and averaging-weight sequences.
//! - [`linalg`]: dense symmetric storage and the masked row/column kernels.
//! - [`hessian_inverse`]: the recursive estimator `A_n` of `H^{-1}`.
//! - [`optim`]: SGD, averaged SGD, mSNA and averaged mSNA drivers.
//! - [`problems`]: gradient and masked-Hessian oracles for linear, logistic and
//!   ridge-logistic regression.
//! - [`data`]: synthetic generators, CSV/libsvm loaders, splits and batching.
//! - [`verify`]: dense reference oracles used by tests and `bench verify`.
//! - [`bench`]: experiment configuration, orchestration, CSV/JSON/SVG output.

pub mod bench;
pub mod data;
pub mod error;
pub mod hessian_inverse;
pub mod linalg;
pub mod optim;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod verify;

pub use error::{Error, Result};

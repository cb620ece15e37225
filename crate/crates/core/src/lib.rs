//! Kernel learning on random Fourier features.
//!
//! * [`feature_map`]: reparameterized random Fourier embeddings and their
//!   derivatives in the kernel hyperparameters.
//! * [`exact_kernels`]: closed-form kernels used as ground truth.
//! * [`skl`]: single-kernel hyperparameter learning by validation-error descent.
//! * [`mkl`]: multiple kernel learning as a group Lasso over concatenated
//!   feature blocks, with an alternating kernel-weight reference solver.
//! * [`data_io`]: datasets, run configuration and artifacts.
//! * [`bench`] and [`verify`]: scaling harness and invariant suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data_io;
pub mod error;
pub mod exact_kernels;
pub mod feature_map;
pub mod linalg;
pub mod mkl;
pub mod skl;
pub mod verify;

pub use error::{Error, Result};
pub use feature_map::{embed, sample_base, BaseSample, FeatureMatrix, KernelFamily, KernelSpec};

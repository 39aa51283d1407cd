//! Set Flow: invertible, permutation-equivariant normalizing flows over
//! finite exchangeable sets, with exact log-likelihoods.
//!
//! - [`numerics`]: tensors, MLPs, the gradient tape, Adam, Gaussian densities
//! - [`flow`]: affine coupling, batch-norm bijection, Real NVP blocks
//! - [`model`]: Deep Set pooling, set-coupling stacks, the full model,
//!   sampling, interpolation and training
//! - [`data`]: circle-set generator, circle fitting, OFF meshes, point clouds

pub mod data;
pub mod error;
pub mod exec;
pub mod flow;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::Tensor;

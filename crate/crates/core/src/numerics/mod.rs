//! Tensor arithmetic, multilayer perceptrons, reverse-mode gradients, Adam
//! and Gaussian log-densities.

mod adam;
mod gaussian;
mod gradcheck;
pub mod linalg;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{gaussian_entropy_total, gaussian_logpdf, gaussian_logpdf_rows, LN_2PI};
pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport, REL_ERROR_FLOOR};
pub use mlp::{Activation, Linear, Mlp};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use tape::{StatUpdate, Tape, Var};
pub use tensor::Tensor;

//! Bijections on a single vector space: affine coupling, batch
//! normalization, Real NVP blocks, and a numerical Jacobian oracle.

mod batchnorm;
mod coupling;
mod jacobian;
mod realnvp;

pub use batchnorm::BatchNormBijection;
pub use coupling::{AffineCoupling, CouplingSpec, Parity};
pub use jacobian::{numerical_jacobian, numerical_jacobian_logdet};
pub use realnvp::{Bijection, BlockSpec, RealNvpBlock};

use crate::numerics::{Tape, Var};

/// Default bound on effective log-scales.
pub const DEFAULT_SCALE_CLAMP: f64 = 5.0;

/// `c * tanh(raw / c)`: smooth, odd, bounded by `c`, identity near zero.
pub fn soft_clamp(tape: &mut Tape, raw: &Var, c: f64) -> Var {
    let scaled = tape.scale(raw, 1.0 / c);
    let squashed = tape.tanh(&scaled);
    tape.scale(&squashed, c)
}

/// Inverse of [`soft_clamp`] on `(-c, c)`.
pub fn soft_clamp_inverse(value: f64, c: f64) -> f64 {
    c * (value / c).atanh()
}

use std::f64::consts::PI;

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// `ln(2 pi)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard-normal log-density of every trailing vector of `x`.
///
/// A `[n, D]` input yields `[n]`; a `[D]` input yields a scalar.
pub fn gaussian_logpdf(x: &Tensor) -> Tensor {
    let d = *x.shape().last().unwrap_or(&1);
    let norm = d as f64 * LN_2PI;
    let out: Vec<f64> = if d == 0 {
        vec![0.0; x.shape().iter().rev().skip(1).product()]
    } else {
        x.data()
            .chunks(d)
            .map(|row| (row.iter().map(|v| v * v).sum::<f64>() + norm) * -0.5)
            .collect()
    };
    let shape = if x.rank() == 0 {
        Vec::new()
    } else {
        x.shape()[..x.rank() - 1].to_vec()
    };
    Tensor::new(shape, out).expect("leading dims")
}

/// Row-wise standard-normal log-density of a `[n, D]` variable, as `[n]`.
/// Performs the same floating-point operations as [`gaussian_logpdf`].
pub fn gaussian_logpdf_rows(tape: &mut Tape, x: &Var) -> Result<Var> {
    let d = x.value().cols();
    let sq = tape.mul(x, x)?;
    let ss = tape.sum_cols(&sq);
    let shifted = tape.add_scalar(&ss, d as f64 * LN_2PI);
    Ok(tape.scale(&shifted, -0.5))
}

/// Differential entropy of a `dims`-dimensional standard normal:
/// `dims * 0.5 * ln(2 pi e)`.
pub fn gaussian_entropy_total(dims: usize) -> f64 {
    dims as f64 * 0.5 * (2.0 * PI * std::f64::consts::E).ln()
}

use crate::error::{Error, Result};
use crate::numerics::linalg;

/// Central-difference Jacobian of `f` at `x`, row-major `[out, in]`.
pub fn numerical_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> Vec<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![0.0; m * n];
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + step;
        let plus = f(&probe);
        probe[j] = x[j] - step;
        let minus = f(&probe);
        probe[j] = x[j];
        for i in 0..m {
            jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    jac
}

/// `ln|det J_f(x)|` from a central-difference Jacobian and a pivoted LU.
/// A singular Jacobian means `f` is not locally invertible at `x`.
pub fn numerical_jacobian_logdet(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], step: f64) -> Result<f64> {
    let n = x.len();
    let jac = numerical_jacobian(f, x, step);
    if jac.len() != n * n {
        return Err(Error::dim(format!(
            "Jacobian of R^{n} -> R^{} is not square",
            jac.len() / n.max(1)
        )));
    }
    linalg::log_abs_det(&jac, n)
        .map_err(|e| Error::Degenerate(format!("map is not invertible here: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_logdet() {
        let ld = numerical_jacobian_logdet(|v| v.to_vec(), &[0.3, -1.0, 2.0, 0.0], 1e-5).unwrap();
        assert!(ld.abs() < 1e-10);
    }

    #[test]
    fn doubling_map() {
        let ld = numerical_jacobian_logdet(|v| v.iter().map(|x| 2.0 * x).collect(), &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!((ld - 2.0794415).abs() < 1e-7);
    }

    #[test]
    fn collapsing_map_is_singular() {
        let f = |v: &[f64]| vec![v[0] + v[1], v[0] + v[1]];
        assert!(matches!(numerical_jacobian_logdet(f, &[1.0, 1.0], 1e-5), Err(Error::Degenerate(_))));
    }
}

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, StatUpdate, Tape, Tensor, Var};

/// Batch normalization as a bijection:
/// `y = (x - mean) / sqrt(var + eps) * exp(log_gamma) + beta`.
///
/// Training tapes normalize with batch statistics and queue a running-stat
/// update; inference tapes (and every inverse) use the running statistics.
/// The per-row log-determinant is `sum_j (log_gamma_j - 0.5 ln(var_j + eps))`
/// with the statistics actually applied.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormBijection {
    dim: usize,
    log_gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    momentum: f64,
    eps: f64,
}

impl BatchNormBijection {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Usage(format!("batch-norm momentum must be in (0, 1), got {momentum}")));
        }
        if !(eps >= 0.0) {
            return Err(Error::Usage(format!("batch-norm eps must be >= 0, got {eps}")));
        }
        Ok(Self {
            dim,
            log_gamma: store.register(format!("{prefix}.log_gamma"), Tensor::zeros(&[dim]), true),
            beta: store.register(format!("{prefix}.beta"), Tensor::zeros(&[dim]), true),
            running_mean: store.register(format!("{prefix}.running_mean"), Tensor::zeros(&[dim]), false),
            running_var: store.register(format!("{prefix}.running_var"), Tensor::full(&[dim], 1.0), false),
            momentum,
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_gamma(&self) -> ParamId {
        self.log_gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_mean(&self) -> ParamId {
        self.running_mean
    }

    pub fn running_var(&self) -> ParamId {
        self.running_var
    }

    fn check(&self, x: &Var) -> Result<()> {
        if x.value().rank() != 2 || x.value().cols() != self.dim {
            return Err(Error::dim(format!(
                "batch norm over dim {} got {:?}",
                self.dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Per-row log-determinant `[n]` for the given variance.
    fn logdet_rows(&self, tape: &mut Tape, var: &Var, rows: usize) -> Result<Var> {
        let log_gamma = tape.param(self.log_gamma);
        let shifted = tape.add_scalar(var, self.eps);
        let log_var = tape.log(&shifted);
        let half = tape.scale(&log_var, -0.5);
        let per_dim = tape.add(&log_gamma, &half)?;
        let total = tape.sum_all(&per_dim);
        let rows_col = tape.broadcast_rows(&total, rows);
        tape.reshape(&rows_col, &[rows])
    }

    fn inv_std(&self, tape: &mut Tape, var: &Var) -> Var {
        let shifted = tape.add_scalar(var, self.eps);
        let log_var = tape.log(&shifted);
        let half = tape.scale(&log_var, -0.5);
        tape.exp(&half)
    }

    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<(Var, Var)> {
        self.check(x)?;
        let n = x.value().rows();
        let (mean, var) = if tape.is_training() {
            if n < 2 {
                return Err(Error::Contract(format!(
                    "batch norm in training mode needs >= 2 rows, got {n}"
                )));
            }
            let sum = tape.sum_rows(x);
            let mean = tape.scale(&sum, 1.0 / n as f64);
            let centered = tape.sub(x, &mean)?;
            let sq = tape.mul(&centered, &centered)?;
            let sq_sum = tape.sum_rows(&sq);
            let var = tape.scale(&sq_sum, 1.0 / n as f64);
            tape.push_stat_update(StatUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean: mean.value().clone(),
                batch_var: var.value().clone(),
                momentum: self.momentum,
            });
            (mean, var)
        } else {
            (tape.param(self.running_mean), tape.param(self.running_var))
        };
        let centered = tape.sub(x, &mean)?;
        let inv_std = self.inv_std(tape, &var);
        let normalized = tape.mul(&centered, &inv_std)?;
        let log_gamma = tape.param(self.log_gamma);
        let gamma = tape.exp(&log_gamma);
        let scaled = tape.mul(&normalized, &gamma)?;
        let beta = tape.param(self.beta);
        let y = tape.add(&scaled, &beta)?;
        let logdet = self.logdet_rows(tape, &var, n)?;
        Ok((y, logdet))
    }

    /// Inverts with the running statistics; returns the forward log-determinant.
    pub fn inverse(&self, tape: &mut Tape, y: &Var) -> Result<(Var, Var)> {
        self.check(y)?;
        let n = y.value().rows();
        let mean = tape.param(self.running_mean);
        let var = tape.param(self.running_var);
        let beta = tape.param(self.beta);
        let log_gamma = tape.param(self.log_gamma);
        let neg_log_gamma = tape.scale(&log_gamma, -1.0);
        let inv_gamma = tape.exp(&neg_log_gamma);
        let unshifted = tape.sub(y, &beta)?;
        let normalized = tape.mul(&unshifted, &inv_gamma)?;
        let shifted = tape.add_scalar(&var, self.eps);
        let log_var = tape.log(&shifted);
        let half = tape.scale(&log_var, 0.5);
        let std = tape.exp(&half);
        let centered = tape.mul(&normalized, &std)?;
        let x = tape.add(&centered, &mean)?;
        let logdet = self.logdet_rows(tape, &var, n)?;
        Ok((x, logdet))
    }
}

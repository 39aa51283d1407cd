use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{AffineCoupling, BatchNormBijection, CouplingSpec, Parity};
use crate::numerics::{Activation, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum Bijection {
    Coupling(AffineCoupling),
    BatchNorm(BatchNormBijection),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub dim: usize,
    pub ctx_dim: usize,
    pub couplings: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub clamp: f64,
    /// `(momentum, eps)`; when set, a batch-norm bijection follows every coupling.
    pub batch_norm: Option<(f64, f64)>,
}

/// Couplings with alternating parity (first one [`Parity::Even`]),
/// optionally interleaved with batch-norm bijections.
#[derive(Clone, Debug, PartialEq)]
pub struct RealNvpBlock {
    layers: Vec<Bijection>,
    dim: usize,
}

impl RealNvpBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.couplings == 0 {
            return Err(Error::Usage("a Real NVP block needs at least one coupling".into()));
        }
        let mut layers = Vec::new();
        let mut parity = Parity::Even;
        for i in 0..spec.couplings {
            let cs = CouplingSpec {
                dim: spec.dim,
                ctx_dim: spec.ctx_dim,
                parity,
                hidden: spec.hidden.clone(),
                activation: spec.activation,
                clamp: spec.clamp,
            };
            layers.push(Bijection::Coupling(AffineCoupling::new(
                store,
                &format!("{prefix}.c{i}"),
                &cs,
                rng,
            )?));
            if let Some((momentum, eps)) = spec.batch_norm {
                layers.push(Bijection::BatchNorm(BatchNormBijection::new(
                    store,
                    &format!("{prefix}.bn{i}"),
                    spec.dim,
                    momentum,
                    eps,
                )?));
            }
            parity = parity.flip();
        }
        Ok(Self { layers, dim: spec.dim })
    }

    pub fn layers(&self) -> &[Bijection] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn couplings(&self) -> impl Iterator<Item = &AffineCoupling> {
        self.layers.iter().filter_map(|l| match l {
            Bijection::Coupling(c) => Some(c),
            Bijection::BatchNorm(_) => None,
        })
    }

    /// Applies every member in order; the log-determinant `[n]` is the sum of
    /// the members'.
    pub fn forward(&self, tape: &mut Tape, x: &Var, ctx: Option<&Var>) -> Result<(Var, Var)> {
        let mut h = x.clone();
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let (out, ld) = match layer {
                Bijection::Coupling(c) => c.forward(tape, &h, ctx)?,
                Bijection::BatchNorm(bn) => bn.forward(tape, &h)?,
            };
            h = out;
            total = Some(match total {
                Some(t) => tape.add(&t, &ld)?,
                None => ld,
            });
        }
        Ok((h, total.expect("block is non-empty")))
    }

    /// Applies member inverses in reverse order; returns the forward
    /// log-determinant at the recovered input.
    pub fn inverse(&self, tape: &mut Tape, y: &Var, ctx: Option<&Var>) -> Result<(Var, Var)> {
        let mut h = y.clone();
        let mut total: Option<Var> = None;
        for layer in self.layers.iter().rev() {
            let (out, ld) = match layer {
                Bijection::Coupling(c) => c.inverse(tape, &h, ctx)?,
                Bijection::BatchNorm(bn) => bn.inverse(tape, &h)?,
            };
            h = out;
            total = Some(match total {
                Some(t) => tape.add(&t, &ld)?,
                None => ld,
            });
        }
        Ok((h, total.expect("block is non-empty")))
    }

    pub fn forward_tensor(&self, store: &ParamStore, x: &Tensor, ctx: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference(store);
        let xv = tape.constant(x.clone());
        let cv = ctx.map(|c| tape.constant(c.clone()));
        let (y, ld) = self.forward(&mut tape, &xv, cv.as_ref())?;
        Ok((y.into_tensor(), ld.into_tensor()))
    }

    pub fn inverse_tensor(&self, store: &ParamStore, y: &Tensor, ctx: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::inference(store);
        let yv = tape.constant(y.clone());
        let cv = ctx.map(|c| tape.constant(c.clone()));
        let (x, ld) = self.inverse(&mut tape, &yv, cv.as_ref())?;
        Ok((x.into_tensor(), ld.into_tensor()))
    }
}

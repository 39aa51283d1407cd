use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::soft_clamp;
use crate::numerics::{Activation, Mlp, ParamStore, Tape, Tensor, Var};

/// Which block of coordinates passes through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// The first `floor(D/2)` coordinates pass through.
    Even,
    /// The last `D - floor(D/2)` coordinates pass through.
    Odd,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSpec {
    pub dim: usize,
    pub ctx_dim: usize,
    pub parity: Parity,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub clamp: f64,
}

/// Real NVP affine coupling:
///
/// ```text
/// y_pass  = x_pass
/// y_trans = x_trans * exp(ls) + t,   ls = clamp(s([x_pass, ctx])), t = t([x_pass, ctx])
/// ```
///
/// The log-determinant of each row is `sum(ls)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineCoupling {
    dim: usize,
    ctx_dim: usize,
    parity: Parity,
    pass: Range<usize>,
    transformed: Range<usize>,
    scale_net: Mlp,
    shift_net: Mlp,
    clamp: f64,
}

impl AffineCoupling {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &CouplingSpec, rng: &mut impl Rng) -> Result<Self> {
        if spec.dim < 2 {
            return Err(Error::dim(format!("coupling needs dim >= 2, got {}", spec.dim)));
        }
        if !(spec.clamp > 0.0) {
            return Err(Error::Usage(format!("scale clamp must be positive, got {}", spec.clamp)));
        }
        let split = spec.dim / 2;
        let (pass, transformed) = match spec.parity {
            Parity::Even => (0..split, split..spec.dim),
            Parity::Odd => (split..spec.dim, 0..split),
        };
        let mut widths = vec![pass.len() + spec.ctx_dim];
        widths.extend(&spec.hidden);
        widths.push(transformed.len());
        let scale_net = Mlp::new(store, &format!("{prefix}.s"), &widths, spec.activation, true, rng)?;
        let shift_net = Mlp::new(store, &format!("{prefix}.t"), &widths, spec.activation, true, rng)?;
        Ok(Self {
            dim: spec.dim,
            ctx_dim: spec.ctx_dim,
            parity: spec.parity,
            pass,
            transformed,
            scale_net,
            shift_net,
            clamp: spec.clamp,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ctx_dim(&self) -> usize {
        self.ctx_dim
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Number of pass-through coordinates.
    pub fn pass_through(&self) -> usize {
        self.pass.len()
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &Mlp {
        &self.shift_net
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    fn check(&self, x: &Var, ctx: Option<&Var>) -> Result<()> {
        if x.value().cols() != self.dim || x.value().rank() != 2 {
            return Err(Error::dim(format!(
                "coupling over dim {} got input {:?}",
                self.dim,
                x.shape()
            )));
        }
        match (ctx, self.ctx_dim) {
            (None, 0) => Ok(()),
            (Some(_), 0) => Err(Error::Usage("context supplied to an unconditioned coupling".into())),
            (None, _) => Err(Error::Usage("conditioned coupling needs a context".into())),
            (Some(c), k) if c.value().cols() != k || c.value().rows() != x.value().rows() => {
                Err(Error::dim(format!(
                    "context must be [{}, {}], got {:?}",
                    x.value().rows(),
                    k,
                    c.shape()
                )))
            }
            (Some(_), _) => Ok(()),
        }
    }

    /// Effective log-scale and shift for the pass-through block.
    fn scale_shift(&self, tape: &mut Tape, pass: &Var, ctx: Option<&Var>) -> Result<(Var, Var)> {
        let input = match ctx {
            Some(c) => tape.concat_cols(pass, c)?,
            None => pass.clone(),
        };
        let raw = self.scale_net.forward(tape, &input)?;
        let log_scale = soft_clamp(tape, &raw, self.clamp);
        let shift = self.shift_net.forward(tape, &input)?;
        Ok((log_scale, shift))
    }

    fn join(&self, tape: &mut Tape, pass: &Var, trans: &Var) -> Result<Var> {
        match self.parity {
            Parity::Even => tape.concat_cols(pass, trans),
            Parity::Odd => tape.concat_cols(trans, pass),
        }
    }

    /// `x: [n, D]`, `ctx: [n, ctx_dim]` -> `(y: [n, D], logdet: [n])`.
    pub fn forward(&self, tape: &mut Tape, x: &Var, ctx: Option<&Var>) -> Result<(Var, Var)> {
        self.check(x, ctx)?;
        let pass = tape.slice_cols(x, self.pass.start, self.pass.end)?;
        let trans = tape.slice_cols(x, self.transformed.start, self.transformed.end)?;
        let (log_scale, shift) = self.scale_shift(tape, &pass, ctx)?;
        let scale = tape.exp(&log_scale);
        let scaled = tape.mul(&trans, &scale)?;
        let out = tape.add(&scaled, &shift)?;
        let y = self.join(tape, &pass, &out)?;
        let logdet = tape.sum_cols(&log_scale);
        Ok((y, logdet))
    }

    /// Exact inverse of [`AffineCoupling::forward`]; also returns the forward
    /// log-determinant at the recovered point.
    pub fn inverse(&self, tape: &mut Tape, y: &Var, ctx: Option<&Var>) -> Result<(Var, Var)> {
        self.check(y, ctx)?;
        let pass = tape.slice_cols(y, self.pass.start, self.pass.end)?;
        let trans = tape.slice_cols(y, self.transformed.start, self.transformed.end)?;
        let (log_scale, shift) = self.scale_shift(tape, &pass, ctx)?;
        let neg = tape.scale(&log_scale, -1.0);
        let inv_scale = tape.exp(&neg);
        let centered = tape.sub(&trans, &shift)?;
        let out = tape.mul(&centered, &inv_scale)?;
        let x = self.join(tape, &pass, &out)?;
        let logdet = tape.sum_cols(&log_scale);
        Ok((x, logdet))
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

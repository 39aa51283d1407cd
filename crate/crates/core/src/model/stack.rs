use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{soft_clamp, BlockSpec, RealNvpBlock};
use crate::model::{DeepSet, ModelConfig};
use crate::numerics::{Mlp, ParamStore, Tape, Var};

/// One set-coupling stack: `(z, X) -> (z', Y)`.
///
/// 1. every entity goes through the same affine map conditioned on `z`
///    (or `concat(z, h)`),
/// 2. entities pass independently through a shared Real NVP block (D > 1),
/// 3. `z` is updated by an affine map conditioned on a Deep Set of the
///    transformed entities.
#[derive(Clone, Debug, PartialEq)]
pub struct SetCouplingStack {
    s1: Mlp,
    t1: Mlp,
    inner: Option<RealNvpBlock>,
    pool: DeepSet,
    s2: Mlp,
    t2: Mlp,
    clamp: f64,
    global_dim: usize,
    entity_dim: usize,
    label_dim: usize,
}

/// Output of [`SetCouplingStack::forward`]. Log-determinants are scalars.
pub struct StackOutput {
    pub global: Var,
    pub entities: Var,
    pub entity_logdet: Var,
    pub global_logdet: Var,
}

impl SetCouplingStack {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d, g, h) = (cfg.entity_dim, cfg.global_dim, cfg.label_dim);
        let widths = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend_from_slice(&cfg.hidden);
            w.push(b);
            w
        };
        let s1 = Mlp::new(store, &format!("{prefix}.s1"), &widths(g + h, d), cfg.activation, true, rng)?;
        let t1 = Mlp::new(store, &format!("{prefix}.t1"), &widths(g + h, d), cfg.activation, true, rng)?;
        let inner = if d > 1 {
            let spec = BlockSpec {
                dim: d,
                ctx_dim: 0,
                couplings: cfg.inner_couplings,
                hidden: cfg.hidden.clone(),
                activation: cfg.activation,
                clamp: cfg.clamp,
                batch_norm: cfg.batch_norm.then_some((cfg.bn_momentum, cfg.bn_eps)),
            };
            Some(RealNvpBlock::new(store, &format!("{prefix}.nvp"), &spec, rng)?)
        } else {
            None
        };
        let pool = DeepSet::new(
            store,
            &format!("{prefix}.pool"),
            d,
            &cfg.hidden,
            cfg.pool_features,
            cfg.pool_out,
            cfg.activation,
            cfg.pooling,
            rng,
        )?;
        let s2 = Mlp::new(store, &format!("{prefix}.s2"), &widths(cfg.pool_out, g), cfg.activation, true, rng)?;
        let t2 = Mlp::new(store, &format!("{prefix}.t2"), &widths(cfg.pool_out, g), cfg.activation, true, rng)?;
        Ok(Self {
            s1,
            t1,
            inner,
            pool,
            s2,
            t2,
            clamp: cfg.clamp,
            global_dim: g,
            entity_dim: d,
            label_dim: h,
        })
    }

    pub fn inner(&self) -> Option<&RealNvpBlock> {
        self.inner.as_ref()
    }

    pub fn deep_set(&self) -> &DeepSet {
        &self.pool
    }

    /// The four affine-map networks `s1, t1, s2, t2`.
    pub fn affine_nets(&self) -> [&Mlp; 4] {
        [&self.s1, &self.t1, &self.s2, &self.t2]
    }

    fn check(&self, z: &Var, x: &Var, h: Option<&Var>) -> Result<()> {
        if z.shape() != [1, self.global_dim] {
            return Err(Error::dim(format!("global vector must be [1, {}], got {:?}", self.global_dim, z.shape())));
        }
        if x.value().rank() != 2 || x.value().cols() != self.entity_dim || x.value().rows() == 0 {
            return Err(Error::dim(format!("entities must be [s >= 1, {}], got {:?}", self.entity_dim, x.shape())));
        }
        match (h, self.label_dim) {
            (None, 0) => Ok(()),
            (Some(_), 0) => Err(Error::Usage("label embedding given to an unconditional model".into())),
            (None, _) => Err(Error::Usage("conditional model needs a label".into())),
            (Some(h), k) if h.shape() != [1, k] => {
                Err(Error::dim(format!("label embedding must be [1, {k}], got {:?}", h.shape())))
            }
            (Some(_), _) => Ok(()),
        }
    }

    /// Log-scale and shift `[1, D]` for the entity map.
    fn entity_affine(&self, tape: &mut Tape, z: &Var, h: Option<&Var>) -> Result<(Var, Var)> {
        let ctx = match h {
            Some(h) => tape.concat_cols(z, h)?,
            None => z.clone(),
        };
        let raw = self.s1.forward(tape, &ctx)?;
        let log_scale = soft_clamp(tape, &raw, self.clamp);
        let shift = self.t1.forward(tape, &ctx)?;
        Ok((log_scale, shift))
    }

    /// Log-scale and shift `[1, G]` for the global map.
    fn global_affine(&self, tape: &mut Tape, y: &Var) -> Result<(Var, Var)> {
        let pooled = self.pool.pool(tape, y)?;
        let raw = self.s2.forward(tape, &pooled)?;
        let log_scale = soft_clamp(tape, &raw, self.clamp);
        let shift = self.t2.forward(tape, &pooled)?;
        Ok((log_scale, shift))
    }

    /// `z: [1, G]`, `x: [s, D]`, `h: [1, H]`.
    pub fn forward(&self, tape: &mut Tape, z: &Var, x: &Var, h: Option<&Var>) -> Result<StackOutput> {
        self.check(z, x, h)?;
        let s = x.value().rows();

        let (ls1, t1) = self.entity_affine(tape, z, h)?;
        let scale1 = tape.exp(&ls1);
        let scaled = tape.mul(x, &scale1)?;
        let mut y = tape.add(&scaled, &t1)?;
        let ls1_sum = tape.sum_all(&ls1);
        let mut entity_logdet = tape.scale(&ls1_sum, s as f64);

        if let Some(block) = &self.inner {
            let (out, ld) = block.forward(tape, &y, None)?;
            y = out;
            let ld_sum = tape.sum_all(&ld);
            entity_logdet = tape.add(&entity_logdet, &ld_sum)?;
        }

        let (ls2, t2) = self.global_affine(tape, &y)?;
        let scale2 = tape.exp(&ls2);
        let scaled_z = tape.mul(z, &scale2)?;
        let global = tape.add(&scaled_z, &t2)?;
        let global_logdet = tape.sum_all(&ls2);

        Ok(StackOutput {
            global,
            entities: y,
            entity_logdet,
            global_logdet,
        })
    }

    /// Exact inverse of [`SetCouplingStack::forward`]: returns `(z, X)`.
    pub fn inverse(&self, tape: &mut Tape, z_next: &Var, y: &Var, h: Option<&Var>) -> Result<(Var, Var)> {
        self.check(z_next, y, h)?;
        let (ls2, t2) = self.global_affine(tape, y)?;
        let neg2 = tape.scale(&ls2, -1.0);
        let inv2 = tape.exp(&neg2);
        let centered_z = tape.sub(z_next, &t2)?;
        let z = tape.mul(&centered_z, &inv2)?;

        let y_hat = match &self.inner {
            Some(block) => block.inverse(tape, y, None)?.0,
            None => y.clone(),
        };

        let (ls1, t1) = self.entity_affine(tape, &z, h)?;
        let neg1 = tape.scale(&ls1, -1.0);
        let inv1 = tape.exp(&neg1);
        let centered = tape.sub(&y_hat, &t1)?;
        let x = tape.mul(&centered, &inv1)?;
        Ok((z, x))
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

/// `rho(pool_i phi(x_i))`: a permutation-invariant summary of a set.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSet {
    phi: Mlp,
    rho: Mlp,
    pooling: Pooling,
}

impl DeepSet {
    /// `phi: D -> hidden -> features`, `rho: features -> hidden -> out`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        entity_dim: usize,
        hidden: &[usize],
        features: usize,
        out: usize,
        activation: Activation,
        pooling: Pooling,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let widths = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend_from_slice(hidden);
            w.push(b);
            w
        };
        let phi = Mlp::new(store, &format!("{prefix}.phi"), &widths(entity_dim, features), activation, false, rng)?;
        let rho = Mlp::new(store, &format!("{prefix}.rho"), &widths(features, out), activation, false, rng)?;
        Ok(Self { phi, rho, pooling })
    }

    pub fn phi(&self) -> &Mlp {
        &self.phi
    }

    pub fn rho(&self) -> &Mlp {
        &self.rho
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn output_dim(&self) -> usize {
        self.rho.output_dim()
    }

    /// `entities: [s, D]` -> `[1, out]`.
    pub fn pool(&self, tape: &mut Tape, entities: &Var) -> Result<Var> {
        let s = entities.value().rows();
        if s == 0 || entities.value().rank() != 2 {
            return Err(Error::Contract(format!(
                "deep set pooling needs a non-empty [s, D] set, got {:?}",
                entities.shape()
            )));
        }
        let features = self.phi.forward(tape, entities)?;
        let summed = tape.sum_rows(&features);
        let pooled = match self.pooling {
            Pooling::Sum => summed,
            Pooling::Mean => tape.scale(&summed, 1.0 / s as f64),
        };
        let row = tape.reshape(&pooled, &[1, self.phi.output_dim()])?;
        self.rho.forward(tape, &row)
    }

    pub fn pool_tensor(&self, store: &ParamStore, entities: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference(store);
        let x = tape.constant(entities.clone());
        Ok(self.pool(&mut tape, &x)?.into_tensor())
    }
}

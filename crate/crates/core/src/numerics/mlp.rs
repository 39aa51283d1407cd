use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Fully connected network. Weights are `[in, out]` so a batch of row
/// vectors maps as `x W + b`. Hidden layers use `activation`; the last layer
/// is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
    activation: Activation,
    zero_init_last: bool,
}

impl Mlp {
    /// Registers parameters under `prefix.l{i}.{weight,bias}`.
    ///
    /// Weights use Glorot-uniform initialization (He-uniform ahead of a ReLU),
    /// biases start at zero. With `zero_init_last` the final layer is all
    /// zeros, so the network outputs exactly zero for every input.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        activation: Activation,
        zero_init_last: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::dim(format!("invalid layer widths {widths:?}")));
        }
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = i + 1 == n_layers;
            let weight = if last && zero_init_last {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                let limit = if !last && activation == Activation::Relu {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                Tensor::matrix(fan_in, fan_out, data)?
            };
            let weight = store.register(format!("{prefix}.l{i}.weight"), weight, true);
            let bias = store.register(format!("{prefix}.l{i}.bias"), Tensor::zeros(&[fan_out]), true);
            layers.push(Linear {
                weight,
                bias,
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            activation,
            zero_init_last,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn zero_init_last(&self) -> bool {
        self.zero_init_last
    }

    pub fn last_layer(&self) -> &Linear {
        self.layers.last().unwrap()
    }

    /// Overwrites the final layer's weights and biases with `U(-limit, limit)`
    /// draws. Used to build non-identity flows for tests and benchmarks.
    pub fn randomize_last(&self, store: &mut ParamStore, rng: &mut impl Rng, limit: f64) {
        let last = self.last_layer();
        for id in [last.weight, last.bias] {
            for v in store.get_mut(id).data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        }
    }

    /// Maps `[n, in]` (or a single `[in]` vector) to `[n, out]`.
    pub fn forward(&self, tape: &mut Tape, x: &Var) -> Result<Var> {
        let in_dim = *x.shape().last().unwrap_or(&0);
        if in_dim != self.input_dim() {
            return Err(Error::dim(format!(
                "mlp expects trailing dim {}, got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            h = tape.matmul(&h, &w)?;
            h = tape.add(&h, &b)?;
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => tape.relu(&h),
                    Activation::Tanh => tape.tanh(&h),
                };
            }
        }
        Ok(h)
    }

    /// Untaped evaluation; leading dimensions of `x` are preserved.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference(store);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &xv)?.into_tensor();
        let mut shape = x.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = self.output_dim(),
            None => return Err(Error::dim("mlp input must have rank >= 1")),
        }
        out.reshape(&shape)
    }
}

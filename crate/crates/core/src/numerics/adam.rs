use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn standard(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every entry of a parameter store. Buffers keep zero
/// moments and are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.value.shape()))
            .collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected descent step on `store` using `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::dim(format!(
                "adam state for {} params, store has {}, gradients {}",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        for id in store.ids() {
            if let Some(g) = grads.raw(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(Error::dim(format!(
                        "gradient for {} has shape {:?}",
                        store.entry(id).name,
                        g.shape()
                    )));
                }
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in store.ids() {
            if !store.entry(id).trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            match grads.raw(id) {
                Some(g) => {
                    for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((p, m), v) in p.iter_mut().zip(m).zip(v) {
                        *m *= beta1;
                        *v *= beta2;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamId;

    fn one_param(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.register("p", Tensor::vector(vec![value]), true);
        (store, id)
    }

    fn grad_of(store: &ParamStore, id: ParamId, g: f64) -> Gradients {
        let mut grads = Gradients::new(store.len());
        grads.add_to(id, &Tensor::vector(vec![g]));
        grads
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let (mut store, id) = one_param(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::standard(5e-4));
        let g = grad_of(&store, id, 1.0);
        adam.step(&mut store, &g).unwrap();
        let delta = store.get(id).data()[0];
        let expected = -5e-4 * (1.0 / (1.0 + 1e-8));
        assert!((delta - expected).abs() < 1e-18, "{delta} vs {expected}");
        assert!((delta + 4.99999995e-4).abs() < 1e-13);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let (mut store, id) = one_param(1.25);
        let mut adam = AdamState::new(&store, AdamConfig::standard(1e-2));
        for t in 1..=50 {
            let g = grad_of(&store, id, 0.0);
            adam.step(&mut store, &g).unwrap();
            adam.step(&mut store, &Gradients::new(1)).unwrap();
            assert_eq!(store.get(id).data()[0], 1.25);
            assert_eq!(adam.t, 2 * t);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // m_hat = g and v_hat = g^2 exactly for constant g, so the step is
        // lr * |g| / (|g| + eps) at every t.
        for &g in &[0.3, -2.0] {
            let (mut store, id) = one_param(0.0);
            let lr = 1e-3;
            let mut adam = AdamState::new(&store, AdamConfig::standard(lr));
            let mut prev = 0.0;
            for _ in 0..2000 {
                let grads = grad_of(&store, id, g);
                adam.step(&mut store, &grads).unwrap();
                let now = store.get(id).data()[0];
                let delta: f64 = now - prev;
                prev = now;
                assert_eq!(delta.signum(), -g.signum());
                assert!((delta.abs() - lr).abs() < 1e-9 * lr + lr * 1e-8 / g.abs());
            }
        }
    }

    #[test]
    fn buffers_are_skipped() {
        let mut store = ParamStore::new();
        let b = store.register("buf", Tensor::vector(vec![3.0]), false);
        let mut adam = AdamState::new(&store, AdamConfig::standard(0.1));
        let mut grads = Gradients::new(1);
        grads.add_to(b, &Tensor::vector(vec![1.0]));
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(b).data()[0], 3.0);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (mut store, id) = one_param(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::standard(0.1));
        let mut grads = Gradients::new(1);
        grads.add_to(id, &Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(adam.step(&mut store, &grads), Err(Error::Dimension(_))));
    }
}

//! Independent oracles for the set flow model: finite-difference gradients,
//! quadrature normalization and the change-of-variables density.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use setflow::exec::Exec;
use setflow::flow::{AffineCoupling, CouplingSpec, Parity};
use setflow::model::{ModelConfig, SetFlowModel};
use setflow::numerics::{gaussian_logpdf, grad_check, Activation, ParamStore, Tape};
use setflow::Tensor;

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn tiny_config(bn: bool) -> ModelConfig {
    ModelConfig {
        entity_dim: 2,
        global_dim: 3,
        stacks: 2,
        hidden: vec![4],
        activation: Activation::Tanh,
        pool_features: 3,
        pool_out: 3,
        batch_norm: bn,
        ..ModelConfig::toy()
    }
}

#[test]
fn full_model_nll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut store = ParamStore::new();
    let model = SetFlowModel::new(tiny_config(false), &mut store, &mut rng).unwrap();
    store.randomize_uniform(&mut rng, 0.5);
    assert!(store.num_trainable() < 2000);
    let x = normal(2, 2, &mut rng);
    let z = normal(1, 3, &mut rng).reshape(&[3]).unwrap();

    let nll = |s: &ParamStore| -model.loglik(s, &x, &z, None).unwrap().joint;
    let mut tape = Tape::gradient(&store);
    let vars = model.loglik_vars(&mut tape, &x, &z, None).unwrap();
    let neg = tape.scale(&vars.joint, -1.0);
    let grads = tape.backward(&neg).unwrap();
    let report = grad_check(nll, &store, &grads, 1e-4, 1e-4);
    assert_eq!(report.entries.len(), store.num_trainable());
    assert!(report.passed(), "max rel error {}", report.max_rel_error());
}

#[test]
fn training_mode_batch_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let model = SetFlowModel::new(tiny_config(true), &mut store, &mut rng).unwrap();
    store.randomize_uniform(&mut rng, 0.5);
    let x = normal(4, 2, &mut rng);
    let z = normal(1, 3, &mut rng).reshape(&[3]).unwrap();
    let joint = |s: &ParamStore| {
        let mut tape = Tape::training(s);
        model.loglik_vars(&mut tape, &x, &z, None).unwrap().joint.value().item()
    };
    let mut tape = Tape::training(&store);
    let vars = model.loglik_vars(&mut tape, &x, &z, None).unwrap();
    let grads = tape.backward(&vars.joint).unwrap();
    let report = grad_check(joint, &store, &grads, 1e-4, 1e-4);
    assert!(report.passed(), "max rel error {}", report.max_rel_error());
}

#[test]
fn single_coupling_loglik_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = ParamStore::new();
    let spec = CouplingSpec {
        dim: 3,
        ctx_dim: 2,
        parity: Parity::Odd,
        hidden: vec![5],
        activation: Activation::Tanh,
        clamp: 5.0,
    };
    let layer = AffineCoupling::new(&mut store, "c", &spec, &mut rng).unwrap();
    store.randomize_uniform(&mut rng, 0.5);
    let x = normal(4, 3, &mut rng);
    let ctx = normal(4, 2, &mut rng);
    let loglik = |s: &ParamStore| {
        let (y, ld) = layer.forward_tensor(s, &x, Some(&ctx)).unwrap();
        gaussian_logpdf(&y).sum() + ld.sum()
    };
    let mut tape = Tape::gradient(&store);
    let xv = tape.constant(x.clone());
    let cv = tape.constant(ctx.clone());
    let (y, ld) = layer.forward(&mut tape, &xv, Some(&cv)).unwrap();
    let rows = setflow::numerics::gaussian_logpdf_rows(&mut tape, &y).unwrap();
    let total = tape.add(&rows, &ld).unwrap();
    let total = tape.sum_all(&total);
    let grads = tape.backward(&total).unwrap();
    let report = grad_check(loglik, &store, &grads, 1e-4, 1e-4);
    assert!(report.passed(), "max rel error {}", report.max_rel_error());
}

/// The joint density over (z_0, x) of a random model with s = 1, D = 2,
/// G = 1 must integrate to one.
#[test]
fn joint_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let cfg = ModelConfig {
        global_dim: 1,
        hidden: vec![8],
        stacks: 2,
        ..tiny_config(false)
    };
    let model = SetFlowModel::new(cfg, &mut store, &mut rng).unwrap();
    model.randomize(&mut store, &mut rng, 0.5);

    let half = 9.0;
    let n = 91;
    let h = 2.0 * half / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| -half + i as f64 * h).collect();
    let slabs = Exec::Parallel.map(&grid, |&z0| {
        let z = Tensor::vector(vec![z0]);
        let mut acc = 0.0;
        for &a in &grid {
            for &b in &grid {
                let x = Tensor::matrix(1, 2, vec![a, b]).unwrap();
                acc += model.loglik(&store, &x, &z, None).unwrap().joint.exp();
            }
        }
        acc
    });
    let mass = slabs.iter().sum::<f64>() * h * h * h;
    assert!((mass - 1.0).abs() < 1e-2, "integrated mass {mass}");
}

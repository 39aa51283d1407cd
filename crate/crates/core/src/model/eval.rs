use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{LabeledSet, LogLikBreakdown, SetFlowModel};
use crate::numerics::{ParamStore, Tensor};

pub const DEFAULT_EVAL_Z_SEED: u64 = 42;

/// Global vector used when evaluating set `index`: a standard-normal draw
/// from stream `index` of the generator seeded with `seed`, so the value
/// does not depend on evaluation order or thread count.
pub fn z_for_set(global_dim: usize, seed: u64, index: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    Tensor::vector((0..global_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    /// Mean per-entity log-likelihood over sets.
    pub mean: f64,
    /// Two standard errors of the mean; 0 when `sem_defined` is false.
    pub two_sem: f64,
    /// False for a single set, where the standard error is undefined.
    pub sem_defined: bool,
    pub z_seed: u64,
    pub per_set: Vec<LogLikBreakdown>,
}

pub fn reported_per_entity_ll(
    model: &SetFlowModel,
    store: &ParamStore,
    sets: &[LabeledSet],
    z_seed: u64,
    exec: Exec,
) -> Result<EvalSummary> {
    if sets.is_empty() {
        return Err(Error::Usage("evaluation needs at least one set".into()));
    }
    let per_set = exec
        .map_range(sets.len(), |i| {
            let z = z_for_set(model.global_dim(), z_seed, i as u64);
            model.loglik(store, &sets[i].entities, &z, sets[i].label)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = per_set.len() as f64;
    let mean = per_set.iter().map(|b| b.per_entity_ll).sum::<f64>() / n;
    let (two_sem, sem_defined) = if per_set.len() > 1 {
        let var = per_set.iter().map(|b| (b.per_entity_ll - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (2.0 * (var / n).sqrt(), true)
    } else {
        (0.0, false)
    };
    Ok(EvalSummary {
        mean,
        two_sem,
        sem_defined,
        z_seed,
        per_set,
    })
}

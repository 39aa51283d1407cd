use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::SetFlowModel;
use crate::numerics::{AdamConfig, AdamState, Gradients, ParamStore, StatUpdate, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Each step draws one size uniformly from this list; every set of the
    /// batch has that size.
    pub set_sizes: Vec<usize>,
    pub steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 16,
            set_sizes: vec![3, 4, 5, 6],
            steps: 12_500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Usage(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be >= 1".into()));
        }
        if self.set_sizes.is_empty() || self.set_sizes.contains(&0) {
            return Err(Error::Usage(format!("set_sizes must be a non-empty list of positive sizes, got {:?}", self.set_sizes)));
        }
        Ok(())
    }
}

/// One set of entities `[s, D]` with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub entities: Tensor,
    pub label: Option<usize>,
}

impl LabeledSet {
    pub fn new(entities: Tensor) -> Self {
        Self { entities, label: None }
    }
}

/// Supplies training batches. Implementations must draw all randomness from
/// the provided generator so that runs are reproducible.
pub trait SetSource {
    fn draw(&mut self, size: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledSet>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub set_size: usize,
    /// Mean joint log-likelihood over the batch.
    pub joint_ll: f64,
    /// Mean reported per-entity log-likelihood over the batch.
    pub per_entity_ll: f64,
}

/// Minibatch maximum-likelihood training with Adam.
///
/// Every set of a batch is evaluated on its own tape (in parallel under
/// [`Exec::Parallel`]); gradients and batch-norm statistic updates are then
/// reduced in set order, so results do not depend on the thread count.
pub struct Trainer {
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    exec: Exec,
}

impl Trainer {
    pub fn new(config: TrainConfig, store: &ParamStore, rng: ChaCha8Rng, exec: Exec) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(store, AdamConfig::standard(config.lr));
        Ok(Self {
            config,
            adam,
            rng,
            step: 0,
            exec,
        })
    }

    /// Restores a trainer from checkpointed parts.
    pub fn from_parts(config: TrainConfig, adam: AdamState, rng: ChaCha8Rng, step: u64, exec: Exec) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            adam,
            rng,
            step,
            exec,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// One optimization step. On a non-finite loss or gradient the parameters
    /// are left untouched and a numeric error is returned.
    pub fn step(&mut self, model: &SetFlowModel, store: &mut ParamStore, source: &mut dyn SetSource) -> Result<StepRecord> {
        let sizes = &self.config.set_sizes;
        let s = sizes[self.rng.gen_range(0..sizes.len())];
        let batch = source.draw(s, self.config.batch_size, &mut self.rng)?;
        if batch.is_empty() {
            return Err(Error::Data("set source returned an empty batch".into()));
        }
        let g = model.global_dim();
        let zs: Vec<Tensor> = batch
            .iter()
            .map(|_| Tensor::vector((0..g).map(|_| StandardNormal.sample(&mut self.rng)).collect()))
            .collect();

        let shared: &ParamStore = store;
        let results = self.exec.map_range(batch.len(), |i| -> Result<(f64, f64, Gradients, Vec<StatUpdate>)> {
            let mut tape = Tape::training(shared);
            let vars = model.loglik_vars(&mut tape, &batch[i].entities, &zs[i], batch[i].label)?;
            let breakdown = model.breakdown(batch[i].entities.rows(), &vars);
            let grads = tape.backward(&vars.joint)?;
            Ok((breakdown.joint, breakdown.per_entity_ll, grads, tape.take_stat_updates()))
        });

        let n = batch.len() as f64;
        let mut total = Gradients::new(store.len());
        let mut updates = Vec::new();
        let (mut joint_sum, mut per_entity_sum) = (0.0, 0.0);
        for r in results {
            let (joint, per_entity, grads, stats) = r?;
            joint_sum += joint;
            per_entity_sum += per_entity;
            total.accumulate(&grads);
            updates.extend(stats);
        }
        let joint_ll = joint_sum / n;
        if !joint_ll.is_finite() {
            return Err(Error::Numeric {
                stack: None,
                what: format!("batch log-likelihood {joint_ll} at step {}", self.step + 1),
            });
        }
        // minimize the negative mean joint log-likelihood
        total.scale(-1.0 / n);
        if !total.all_finite() {
            return Err(Error::Numeric {
                stack: None,
                what: format!("gradient at step {}", self.step + 1),
            });
        }
        for u in &updates {
            u.apply(store);
        }
        self.adam.step(store, &total)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            set_size: s,
            joint_ll,
            per_entity_ll: per_entity_sum / n,
        })
    }
}

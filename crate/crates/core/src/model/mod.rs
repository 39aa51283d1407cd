//! The set flow model: Deep Set pooling, set-coupling stacks, the K-stack
//! model with exact log-likelihoods, sampling, interpolation and training.

mod deepset;
mod eval;
mod setflow;
mod stack;
mod train;

pub use deepset::{DeepSet, Pooling};
pub use eval::{reported_per_entity_ll, z_for_set, EvalSummary, DEFAULT_EVAL_Z_SEED};
pub use setflow::{Encoded, EntitySet, InterpolationLabel, LogLikBreakdown, LogLikVars, SetFlowModel};
pub use stack::{SetCouplingStack, StackOutput};
pub use train::{LabeledSet, SetSource, StepRecord, TrainConfig, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::DEFAULT_SCALE_CLAMP;
use crate::numerics::Activation;

/// Architecture of a [`SetFlowModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// D
    pub entity_dim: usize,
    /// G
    pub global_dim: usize,
    /// H; 0 for an unconditional model.
    pub label_dim: usize,
    pub num_classes: usize,
    /// K
    pub stacks: usize,
    /// Hidden widths shared by every s, t, phi and rho network.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub pooling: Pooling,
    pub pool_features: usize,
    /// S_out
    pub pool_out: usize,
    pub inner_couplings: usize,
    pub clamp: f64,
    pub batch_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// 2D circle sets.
    pub fn toy() -> Self {
        Self {
            entity_dim: 2,
            global_dim: 16,
            label_dim: 0,
            num_classes: 0,
            stacks: 6,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            pooling: Pooling::Mean,
            pool_features: 64,
            pool_out: 32,
            inner_couplings: 2,
            clamp: DEFAULT_SCALE_CLAMP,
            batch_norm: false,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }

    /// 3D point clouds, unconditional.
    pub fn point_cloud() -> Self {
        Self {
            entity_dim: 3,
            global_dim: 90,
            hidden: vec![128, 128],
            pool_features: 128,
            pool_out: 100,
            batch_norm: true,
            ..Self::toy()
        }
    }

    /// 3D point clouds conditioned on one of `num_classes` labels.
    pub fn point_cloud_labeled(num_classes: usize) -> Self {
        Self {
            label_dim: 10,
            num_classes,
            ..Self::point_cloud()
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.num_classes > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Usage(msg));
        if self.entity_dim == 0 || self.global_dim == 0 || self.stacks == 0 {
            return bad("entity_dim, global_dim and stacks must be >= 1".into());
        }
        if self.pool_features == 0 || self.pool_out == 0 || self.hidden.contains(&0) {
            return bad("network widths must be >= 1".into());
        }
        if (self.num_classes > 0) != (self.label_dim > 0) {
            return bad(format!(
                "label_dim ({}) and num_classes ({}) must both be zero or both positive",
                self.label_dim, self.num_classes
            ));
        }
        if self.entity_dim > 1 && self.inner_couplings == 0 {
            return bad("inner_couplings must be >= 1 when entity_dim > 1".into());
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return bad(format!("clamp must be positive, got {}", self.clamp));
        }
        if self.batch_norm && !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0 && self.bn_eps >= 0.0) {
            return bad("bn_momentum must be in (0, 1) and bn_eps >= 0".into());
        }
        Ok(())
    }
}

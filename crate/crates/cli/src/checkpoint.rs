//! Checkpoint files.
//!
//! Layout: the 8-byte magic `SETFLOW\0`, a little-endian `u32` format
//! version, a `u64` byte length, that many bytes of pretty-printed JSON
//! metadata (run config, tensor names and shapes, step, optimizer counters,
//! generator state), then little-endian `f64` blobs: every tensor in
//! canonical (name-sorted) order, followed by the Adam first moments and then
//! the second moments in the same order.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setflow::exec::Exec;
use setflow::model::{SetFlowModel, Trainer};
use setflow::numerics::{AdamConfig, AdamState, ParamStore};
use setflow::{Error, Result, Tensor};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 8] = b"SETFLOW\0";
pub const VERSION: u32 = 1;

/// Position of a ChaCha8 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

/// Adam state with moments in the same order as [`Checkpoint::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerRecord {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: RngState,
    /// Parameters and batch-norm running statistics, sorted by name.
    pub tensors: Vec<TensorRecord>,
    pub optimizer: OptimizerRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: RunConfig,
    step: u64,
    rng: RngMeta,
    tensors: Vec<TensorMeta>,
    optimizer: OptimizerMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngMeta {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    config: AdamConfig,
    t: u64,
}

fn bad(msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("checkpoint: {msg}"))
}

/// Seeds for a fresh run: stream 0 drives training, stream 1 initializes
/// the model.
pub fn run_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let train = ChaCha8Rng::seed_from_u64(seed);
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(1);
    (train, init)
}

/// Fresh model, parameters and trainer for `config`.
pub fn fresh_run(config: &RunConfig, exec: Exec) -> Result<(SetFlowModel, ParamStore, Trainer)> {
    let (train_rng, mut init_rng) = run_rngs(config.train.seed);
    let mut store = ParamStore::new();
    let model = SetFlowModel::new(config.model.clone(), &mut store, &mut init_rng)?;
    let trainer = Trainer::new(config.train.clone(), &store, train_rng, exec)?;
    Ok((model, store, trainer))
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, store: &ParamStore, trainer: &Trainer) -> Self {
        let order = store.canonical_order();
        let adam = trainer.adam();
        Self {
            config: config.clone(),
            step: trainer.step_count(),
            rng: RngState::capture(trainer.rng()),
            tensors: order
                .iter()
                .map(|&id| {
                    let e = store.entry(id);
                    TensorRecord {
                        name: e.name.clone(),
                        trainable: e.trainable,
                        value: e.value.clone(),
                    }
                })
                .collect(),
            optimizer: OptimizerRecord {
                config: adam.config,
                t: adam.t,
                m: order.iter().map(|id| adam.m[id.index()].clone()).collect(),
                v: order.iter().map(|id| adam.v[id.index()].clone()).collect(),
            },
        }
    }

    /// Rebuilds the model and fills its parameters by name.
    pub fn restore_model(&self) -> Result<(SetFlowModel, ParamStore)> {
        let (_, mut init_rng) = run_rngs(self.config.train.seed);
        let mut store = ParamStore::new();
        let model = SetFlowModel::new(self.config.model.clone(), &mut store, &mut init_rng)?;
        if store.len() != self.tensors.len() {
            return Err(bad(format!(
                "model config defines {} tensors, file has {}",
                store.len(),
                self.tensors.len()
            )));
        }
        for rec in &self.tensors {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", rec.name)))?;
            if store.entry(id).trainable != rec.trainable {
                return Err(bad(format!("tensor {} changed trainability", rec.name)));
            }
            store.set(id, rec.value.clone()).map_err(bad)?;
        }
        Ok((model, store))
    }

    /// Trainer positioned after `self.step`; `train` may extend the step
    /// budget.
    pub fn restore_trainer(&self, store: &ParamStore, train: setflow::model::TrainConfig, exec: Exec) -> Result<Trainer> {
        let mut adam = AdamState::new(store, self.optimizer.config);
        adam.t = self.optimizer.t;
        for (k, rec) in self.tensors.iter().enumerate() {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| bad(format!("unknown tensor {}", rec.name)))?;
            adam.m[id.index()] = self.optimizer.m[k].clone();
            adam.v[id.index()] = self.optimizer.v[k].clone();
        }
        Trainer::from_parts(train, adam, self.rng.restore(), self.step, exec)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config.clone(),
            step: self.step,
            rng: RngMeta {
                seed: self.rng.seed.iter().map(|b| format!("{b:02x}")).collect(),
                stream: self.rng.stream,
                word_pos: self.rng.word_pos.to_string(),
            },
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorMeta {
                    name: t.name.clone(),
                    shape: t.value.shape().to_vec(),
                    trainable: t.trainable,
                })
                .collect(),
            optimizer: OptimizerMeta {
                config: self.optimizer.config,
                t: self.optimizer.t,
            },
        };
        let json = serde_json::to_vec_pretty(&meta).expect("checkpoint metadata serializes");
        let blobs = self
            .tensors
            .iter()
            .map(|t| &t.value)
            .chain(&self.optimizer.m)
            .chain(&self.optimizer.v);
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a setflow checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(&bytes[20..meta_end]).map_err(bad)?;

        let seed_hex = &meta.rng.seed;
        if seed_hex.len() != 64 {
            return Err(bad("rng seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(bad)?;
        }
        let word_pos: u128 = meta.rng.word_pos.parse().map_err(bad)?;

        let mut data = bytes[meta_end..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let expected: usize = 3 * meta.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>();
        if bytes.len() - meta_end != 8 * expected {
            return Err(bad(format!("expected {} blob bytes, found {}", 8 * expected, bytes.len() - meta_end)));
        }
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), data.by_ref().take(n).collect())
        };
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for t in &meta.tensors {
            tensors.push(TensorRecord {
                name: t.name.clone(),
                trainable: t.trainable,
                value: take(&t.shape)?,
            });
        }
        let m = meta.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
        let v = meta.tensors.iter().map(|t| take(&t.shape)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: meta.config,
            step: meta.step,
            rng: RngState {
                seed,
                stream: meta.rng.stream,
                word_pos,
            },
            tensors,
            optimizer: OptimizerRecord {
                config: meta.optimizer.config,
                t: meta.optimizer.t,
                m,
                v,
            },
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

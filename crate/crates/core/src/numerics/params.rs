use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Index of a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (batch-norm running statistics) are stored and serialized but
    /// never receive optimizer updates.
    pub trainable: bool,
}

/// Named tensors of a model. Ids are registration indices; names are the
/// canonical keys used in checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Ids sorted by name: the canonical serialization order.
    pub fn canonical_order(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.ids().collect();
        ids.sort_by(|a, b| self.entries[a.0].name.cmp(&self.entries[b.0].name));
        ids
    }

    /// Number of scalar trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Replaces every trainable scalar with a `U(-half_width, half_width)` draw.
    pub fn randomize_uniform(&mut self, rng: &mut impl rand::Rng, half_width: f64) {
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            for v in e.value.data_mut() {
                *v = rng.gen_range(-half_width..half_width);
            }
        }
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::dim(format!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }
}

/// Gradients aligned with the entries of a [`ParamStore`]. Parameters that did
/// not influence the differentiated output have no stored tensor and read as
/// exact zeros.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn raw(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// The gradient of `id`, zero-filled to `shape` when unreachable.
    pub fn get_or_zeros(&self, id: ParamId, shape: &[usize]) -> Tensor {
        self.raw(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub(crate) fn add_to(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.grads[id.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// `self += other`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add_to(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

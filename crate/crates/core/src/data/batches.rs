use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{LabeledSet, SetSource};
use crate::numerics::Tensor;

/// Subsamples `size` distinct rows from each of `count` randomly chosen
/// sources. Sources with fewer than `size` rows are skipped.
pub fn draw_subsets(
    sources: &[Tensor],
    labels: Option<&[usize]>,
    size: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledSet>> {
    let eligible: Vec<usize> = (0..sources.len()).filter(|&i| sources[i].rows() >= size).collect();
    if eligible.len() < sources.len() {
        log::warn!(
            "{} of {} sources have fewer than {size} entities and are skipped",
            sources.len() - eligible.len(),
            sources.len()
        );
    }
    if eligible.is_empty() {
        return Err(Error::Data(format!("no source has at least {size} entities")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let src = eligible[rng.gen_range(0..eligible.len())];
        let cloud = &sources[src];
        let d = cloud.cols();
        let picks = index::sample(rng, cloud.rows(), size);
        let mut data = Vec::with_capacity(size * d);
        for i in picks.iter() {
            data.extend_from_slice(cloud.row(i));
        }
        out.push(LabeledSet {
            entities: Tensor::matrix(size, d, data)?,
            label: labels.map(|l| l[src]),
        });
    }
    Ok(out)
}

/// Batch of equally sized sets, `[batch, s, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub sets: Tensor,
    pub labels: Option<Vec<usize>>,
}

/// Training-set source over a fixed collection of clouds.
#[derive(Clone, Debug)]
pub struct CloudSource {
    pub clouds: Vec<Tensor>,
    /// Class id per cloud, when training a conditional model.
    pub labels: Option<Vec<usize>>,
}

impl SetSource for CloudSource {
    fn draw(&mut self, size: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledSet>> {
        draw_subsets(&self.clouds, self.labels.as_deref(), size, count, rng)
    }
}

/// Training-set source over whole sets of mixed sizes (a generated toy
/// dataset). A draw picks sets of exactly the requested size uniformly with
/// replacement.
#[derive(Clone, Debug)]
pub struct FixedSetSource {
    sets: Vec<LabeledSet>,
    by_size: std::collections::BTreeMap<usize, Vec<usize>>,
}

impl FixedSetSource {
    pub fn new(sets: Vec<LabeledSet>) -> Self {
        let mut by_size = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for (i, s) in sets.iter().enumerate() {
            by_size.entry(s.entities.rows()).or_default().push(i);
        }
        Self { sets, by_size }
    }

    pub fn sets(&self) -> &[LabeledSet] {
        &self.sets
    }

    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_size.keys().copied()
    }
}

impl SetSource for FixedSetSource {
    fn draw(&mut self, size: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledSet>> {
        let pool = self
            .by_size
            .get(&size)
            .ok_or_else(|| Error::Data(format!("dataset has no set of size {size}")))?;
        Ok((0..count).map(|_| self.sets[pool[rng.gen_range(0..pool.len())]].clone()).collect())
    }
}

/// Endless stream of batches: per batch a set size is drawn uniformly from
/// `set_sizes`, then `batch_size` subsets of that size.
pub fn make_batches<'a>(
    source: &'a CloudSource,
    set_sizes: &'a [usize],
    batch_size: usize,
    rng: &'a mut ChaCha8Rng,
) -> impl Iterator<Item = Result<Batch>> + 'a {
    std::iter::from_fn(move || {
        if set_sizes.is_empty() {
            return Some(Err(Error::Usage("set size list is empty".into())));
        }
        let s = set_sizes[rng.gen_range(0..set_sizes.len())];
        let sets = match draw_subsets(&source.clouds, source.labels.as_deref(), s, batch_size, rng) {
            Ok(sets) => sets,
            Err(e) => return Some(Err(e)),
        };
        let d = sets.first().map_or(0, |x| x.entities.cols());
        let labels = source.labels.as_ref().map(|_| sets.iter().filter_map(|x| x.label).collect());
        let data = sets.into_iter().flat_map(|x| x.entities.into_data()).collect();
        Some(Tensor::new(vec![batch_size, s, d], data).map(|sets| Batch { sets, labels }))
    })
}

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{draw_subsets, load_tensor, normalize_cloud, parse_off, sample_mesh_points, CloudSource, NormRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::LabeledSet;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    /// Class directory names to load; all classes when empty.
    pub classes: Vec<String>,
    /// Keep at most this many models per class (seeded choice); 0 keeps all.
    pub max_models_per_class: usize,
    pub points_per_model: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            classes: Vec::new(),
            max_models_per_class: 0,
            points_per_model: 10_000,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root.
    pub path: String,
    pub class: String,
    pub label: usize,
    pub split: Split,
    pub seed: u64,
    pub shift: [f64; 3],
    pub scale: f64,
}

/// Normalized point clouds of a ModelNet-style tree
/// (`root/<class>/{train,test}/*.off`, or precomputed `*.cloud` tensors).
/// Models are pooled per class and re-split by the seeded train fraction.
#[derive(Clone, Debug)]
pub struct PointCloudDataset {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub clouds: Vec<Tensor>,
}

fn list_models(class_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for sub in ["train", "test"] {
        let dir = class_dir.join(sub);
        if !dir.is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            match path.extension().and_then(|e| e.to_str()) {
                Some("off") | Some("cloud") => files.push(path),
                _ => {}
            }
        }
    }
    files.sort();
    Ok(files)
}

fn load_cloud(path: &Path, points: usize, seed: u64, stream: u64) -> Result<Tensor> {
    let raw = if path.extension().and_then(|e| e.to_str()) == Some("cloud") {
        let t = load_tensor(path)?;
        if t.rank() != 2 || t.cols() != 3 {
            return Err(Error::Data(format!("{}: cloud must be [n, 3], got {:?}", path.display(), t.shape())));
        }
        t
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mesh = parse_off(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        sample_mesh_points(&mesh, points, &mut rng)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
            .0
    };
    Ok(raw)
}

impl PointCloudDataset {
    pub fn load(root: &Path, opts: &DatasetOptions, exec: Exec) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
        }
        if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
            return Err(Error::Usage(format!("train_fraction must be in (0, 1), got {}", opts.train_fraction)));
        }
        let mut class_names: Vec<String> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .filter(|name| opts.classes.is_empty() || opts.classes.contains(name))
            .collect();
        class_names.sort();
        for wanted in &opts.classes {
            if !class_names.contains(wanted) {
                return Err(Error::Data(format!("class '{wanted}' not found under {}", root.display())));
            }
        }

        let mut jobs: Vec<(PathBuf, String, usize, Split)> = Vec::new();
        for (label, class) in class_names.iter().enumerate() {
            let mut files = list_models(&root.join(class))?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(label as u64);
            files.shuffle(&mut rng);
            if opts.max_models_per_class > 0 {
                files.truncate(opts.max_models_per_class);
            }
            let n_train = ((files.len() as f64) * opts.train_fraction).round() as usize;
            for (i, f) in files.into_iter().enumerate() {
                let split = if i < n_train { Split::Train } else { Split::Test };
                jobs.push((f, class.clone(), label, split));
            }
        }
        if jobs.is_empty() {
            return Err(Error::Data(format!("no .off or .cloud models found under {}", root.display())));
        }

        let loaded = exec.map_range(jobs.len(), |i| {
            let cloud = load_cloud(&jobs[i].0, opts.points_per_model, opts.seed, i as u64)?;
            normalize_cloud(&cloud)
        });
        let mut entries = Vec::with_capacity(jobs.len());
        let mut clouds = Vec::with_capacity(jobs.len());
        for ((path, class, label, split), result) in jobs.into_iter().zip(loaded) {
            let (cloud, NormRecord { shift, scale }) = result?;
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            entries.push(ManifestEntry {
                path: rel,
                class,
                label,
                split,
                seed: opts.seed,
                shift,
                scale,
            });
            clouds.push(cloud);
        }
        Ok(Self {
            class_names,
            entries,
            clouds,
        })
    }

    fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Training source over the train split.
    pub fn source(&self, split: Split, with_labels: bool) -> CloudSource {
        let idx = self.indices(split);
        CloudSource {
            clouds: idx.iter().map(|&i| self.clouds[i].clone()).collect(),
            labels: with_labels.then(|| idx.iter().map(|&i| self.entries[i].label).collect()),
        }
    }

    /// One `s`-point subset per model of `split`, drawn with a fixed seed.
    pub fn fixed_subsets(&self, split: Split, s: usize, seed: u64, with_labels: bool) -> Result<Vec<LabeledSet>> {
        let mut out = Vec::new();
        for i in self.indices(split) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let labels = [self.entries[i].label];
            let mut sets = draw_subsets(
                std::slice::from_ref(&self.clouds[i]),
                with_labels.then_some(&labels[..]),
                s,
                1,
                &mut rng,
            )?;
            out.append(&mut sets);
        }
        Ok(out)
    }

    pub fn manifest_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            s.push('\n');
        }
        s
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

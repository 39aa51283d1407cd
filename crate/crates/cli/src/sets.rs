//! On-disk set collections: `gen-toy` directories (`manifest.jsonl` plus
//! `points.cloud`) and plain cloud files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setflow::data::{load_tensor, save_tensor};
use setflow::model::LabeledSet;
use setflow::{Error, Result, Tensor};

use crate::config::{DataConfig, DataSource};

pub const TOY_MANIFEST: &str = "manifest.jsonl";
pub const TOY_POINTS: &str = "points.cloud";

/// One generated set: rows `offset..offset + size` of the points tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySetRecord {
    pub id: usize,
    pub size: usize,
    pub offset: usize,
    pub center: [f64; 2],
    pub radius: f64,
    pub phase: f64,
}

pub fn write_toy_dir(dir: &Path, records: &[ToySetRecord], points: &Tensor) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for r in records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    let path = dir.join(TOY_MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    save_tensor(&dir.join(TOY_POINTS), points)
}

pub fn read_toy_dir(dir: &Path) -> Result<(Vec<ToySetRecord>, Tensor)> {
    let path = dir.join(TOY_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<ToySetRecord>(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let points = load_tensor(&dir.join(TOY_POINTS))?;
    if points.rank() != 2 {
        return Err(Error::Data(format!("{TOY_POINTS} must be rank 2, got {:?}", points.shape())));
    }
    for r in &records {
        if r.offset + r.size > points.rows() {
            return Err(Error::Data(format!("set {} runs past the end of {TOY_POINTS}", r.id)));
        }
    }
    Ok((records, points))
}

/// Every set stored at `path`: a `gen-toy` directory, a `[n, s, D]` cloud
/// file or a single `[s, D]` cloud file.
pub fn load_sets(path: &Path) -> Result<Vec<LabeledSet>> {
    if path.is_dir() {
        let (records, points) = read_toy_dir(path)?;
        let d = points.cols();
        return records
            .iter()
            .map(|r| {
                let rows = points.data()[r.offset * d..(r.offset + r.size) * d].to_vec();
                Ok(LabeledSet::new(Tensor::matrix(r.size, d, rows)?))
            })
            .collect();
    }
    let t = load_tensor(path)?;
    match *t.shape() {
        [s, d] => Ok(vec![LabeledSet::new(Tensor::matrix(s, d, t.data().to_vec())?)]),
        [n, s, d] => (0..n)
            .map(|i| Ok(LabeledSet::new(Tensor::matrix(s, d, t.data()[i * s * d..(i + 1) * s * d].to_vec())?)))
            .collect(),
        _ => Err(Error::Data(format!("{}: expected a [s, D] or [n, s, D] tensor, got {:?}", path.display(), t.shape()))),
    }
}

/// Stacks equally sized sets into `[n, s, D]`.
pub fn stack_sets(sets: &[Tensor]) -> Result<Tensor> {
    let shape = sets.first().map(|t| t.shape().to_vec()).unwrap_or_else(|| vec![0, 0]);
    let mut data = Vec::with_capacity(sets.len() * shape.iter().product::<usize>());
    for t in sets {
        if t.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!("cannot stack {:?} with {:?}", t.shape(), shape)));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![sets.len(), shape[0], shape[1]], data)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResolvedData {
    Circles,
    Sets(PathBuf),
    Modelnet(PathBuf),
}

pub fn resolve(data: &DataConfig) -> Result<ResolvedData> {
    let need_path = |kind: &str| {
        data.path
            .clone()
            .ok_or_else(|| Error::Usage(format!("data.source = {kind} needs a data path")))
    };
    match data.source {
        DataSource::Circles => Ok(ResolvedData::Circles),
        DataSource::Sets => Ok(ResolvedData::Sets(need_path("sets")?)),
        DataSource::Modelnet => Ok(ResolvedData::Modelnet(need_path("modelnet")?)),
        DataSource::Auto => match &data.path {
            None => Ok(ResolvedData::Circles),
            Some(p) if p.is_file() || p.join(TOY_MANIFEST).is_file() => Ok(ResolvedData::Sets(p.clone())),
            Some(p) if p.is_dir() => Ok(ResolvedData::Modelnet(p.clone())),
            Some(p) => Err(Error::Data(format!("data path {} does not exist", p.display()))),
        },
    }
}

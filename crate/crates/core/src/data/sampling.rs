use rand::Rng;
use rand_distr::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::data::TriangleMesh;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Samples `n` points uniformly over the mesh surface: a triangle is picked
/// with probability proportional to its area, then a point uniformly inside
/// it. Also returns the source triangle of every point.
pub fn sample_mesh_points(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    let total = mesh.total_area();
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let pick = WeightedIndex::new(mesh.areas()).map_err(|e| Error::Degenerate(format!("triangle areas: {e}")))?;
    let mut data = Vec::with_capacity(3 * n);
    let mut sources = Vec::with_capacity(n);
    for _ in 0..n {
        let t = pick.sample(rng);
        let [a, b, c] = mesh.corners(t);
        let s = rng.gen::<f64>().sqrt();
        let r = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r), s * r);
        for k in 0..3 {
            data.push(wa * a[k] + wb * b[k] + wc * c[k]);
        }
        sources.push(t);
    }
    Ok((Tensor::matrix(n, 3, data)?, sources))
}

/// How a cloud was normalized: `normalized = (raw - shift) * scale`.
/// A density over normalized D-dimensional points converts to raw space by
/// adding `D ln(scale)` per entity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub shift: [f64; 3],
    pub scale: f64,
}

impl NormRecord {
    pub const IDENTITY: NormRecord = NormRecord {
        shift: [0.0; 3],
        scale: 1.0,
    };

    /// Per-entity log-likelihood in raw coordinates.
    pub fn raw_loglik(&self, normalized_ll: f64) -> f64 {
        normalized_ll + 3.0 * self.scale.ln()
    }

    pub fn apply(&self, cloud: &Tensor) -> Result<Tensor> {
        if cloud.rank() != 2 || cloud.cols() != 3 {
            return Err(Error::dim(format!("clouds are [n, 3], got {:?}", cloud.shape())));
        }
        let mut out = cloud.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.shift[i % 3]) * self.scale;
        }
        Ok(out)
    }
}

/// Centers the cloud on its centroid and scales it into the unit ball
/// (max point norm 1).
pub fn normalize_cloud(cloud: &Tensor) -> Result<(Tensor, NormRecord)> {
    if cloud.rank() != 2 || cloud.cols() != 3 || cloud.rows() == 0 {
        return Err(Error::dim(format!("clouds are [n >= 1, 3], got {:?}", cloud.shape())));
    }
    let n = cloud.rows() as f64;
    let mut shift = [0.0; 3];
    for i in 0..cloud.rows() {
        for (k, s) in shift.iter_mut().enumerate() {
            *s += cloud.get2(i, k);
        }
    }
    for s in &mut shift {
        *s /= n;
    }
    let max_norm = (0..cloud.rows())
        .map(|i| {
            let r = cloud.row(i);
            ((r[0] - shift[0]).powi(2) + (r[1] - shift[1]).powi(2) + (r[2] - shift[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    if !(max_norm > 0.0) {
        return Err(Error::Degenerate("all points coincide; cannot normalize scale".into()));
    }
    let record = NormRecord {
        shift,
        scale: 1.0 / max_norm,
    };
    Ok((record.apply(cloud)?, record))
}

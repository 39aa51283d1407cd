use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledSet, SetSource};
use crate::numerics::Tensor;

/// Latent parameters of one circle set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleSetSpec {
    pub center: [f64; 2],
    pub radius: f64,
    /// Rotation offset in `[0, 2 pi)`.
    pub phase: f64,
    pub size: usize,
}

/// Per-point perturbations: radial and angular noise standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleNoise {
    pub radial_sd: f64,
    pub phase_sd: f64,
}

impl Default for CircleNoise {
    fn default() -> Self {
        Self {
            radial_sd: 0.1,
            phase_sd: 0.3,
        }
    }
}

impl CircleNoise {
    pub const NONE: CircleNoise = CircleNoise {
        radial_sd: 0.0,
        phase_sd: 0.0,
    };
}

impl CircleSetSpec {
    /// Center `U(-10, 10)^2`, radius `U(0.5, 3)`, phase `U(0, 2 pi)`.
    pub fn sample(size: usize, rng: &mut impl Rng) -> Self {
        let cx = rng.gen_range(-10.0..10.0);
        let cy = rng.gen_range(-10.0..10.0);
        let radius = rng.gen_range(0.5..3.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        Self {
            center: [cx, cy],
            radius,
            phase,
            size,
        }
    }
}

/// Points `(x + (r + dr_i) cos psi_i, y + (r + dr_i) sin psi_i)` with
/// `psi_i = phase + 2 pi i / N + dpsi_i`, `i = 0..N`.
pub fn circle_points(spec: &CircleSetSpec, noise: CircleNoise, rng: &mut impl Rng) -> Result<Tensor> {
    if spec.size < 3 {
        return Err(Error::Usage(format!("circle sets need N >= 3, got {}", spec.size)));
    }
    let radial = Normal::new(0.0, noise.radial_sd).map_err(|e| Error::Usage(format!("radial noise: {e}")))?;
    let angular = Normal::new(0.0, noise.phase_sd).map_err(|e| Error::Usage(format!("phase noise: {e}")))?;
    let n = spec.size;
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let dr = radial.sample(rng);
        let dpsi = angular.sample(rng);
        let psi = spec.phase + 2.0 * PI * i as f64 / n as f64 + dpsi;
        let r = spec.radius + dr;
        data.push(spec.center[0] + r * psi.cos());
        data.push(spec.center[1] + r * psi.sin());
    }
    Tensor::matrix(n, 2, data)
}

/// Draws a spec and its `N` points.
pub fn gen_circle_set(n: usize, noise: CircleNoise, rng: &mut impl Rng) -> Result<(Tensor, CircleSetSpec)> {
    if n < 3 {
        return Err(Error::Usage(format!("circle sets need N >= 3, got {n}")));
    }
    let spec = CircleSetSpec::sample(n, rng);
    Ok((circle_points(&spec, noise, rng)?, spec))
}

/// Streams fresh circle sets for training.
#[derive(Clone, Copy, Debug, Default)]
pub struct CircleSource {
    pub noise: CircleNoise,
}

impl SetSource for CircleSource {
    fn draw(&mut self, size: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<LabeledSet>> {
        (0..count)
            .map(|_| Ok(LabeledSet::new(gen_circle_set(size, self.noise, rng)?.0)))
            .collect()
    }
}

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{linalg, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
    /// `atan2(y_i - c_y, x_i - c_x)` per point, in `(-pi, pi]`.
    pub phases: Vec<f64>,
}

/// Algebraic (Kasa) least-squares circle fit: solves
/// `x^2 + y^2 = a x + b y + c` on centered coordinates.
pub fn fit_circle(points: &Tensor) -> Result<CircleFit> {
    if points.rank() != 2 || points.cols() != 2 {
        return Err(Error::dim(format!("circle fit needs [N, 2] points, got {:?}", points.shape())));
    }
    let n = points.rows();
    if n < 3 {
        return Err(Error::Degenerate(format!("circle fit needs >= 3 points, got {n}")));
    }
    let mx = (0..n).map(|i| points.get2(i, 0)).sum::<f64>() / n as f64;
    let my = (0..n).map(|i| points.get2(i, 1)).sum::<f64>() / n as f64;
    let mut ata = [0.0; 9];
    let mut atb = [0.0; 3];
    for i in 0..n {
        let u = points.get2(i, 0) - mx;
        let v = points.get2(i, 1) - my;
        let row = [u, v, 1.0];
        let rhs = u * u + v * v;
        for r in 0..3 {
            atb[r] += row[r] * rhs;
            for c in 0..3 {
                ata[r * 3 + c] += row[r] * row[c];
            }
        }
    }
    let sol = linalg::solve(&ata, &atb, 3)
        .map_err(|_| Error::Degenerate("points are collinear; no unique circle".into()))?;
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    let r2 = c + 0.25 * (a * a + b * b);
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(Error::Degenerate(format!("fit produced squared radius {r2}")));
    }
    let center = [mx + 0.5 * a, my + 0.5 * b];
    let phases = (0..n)
        .map(|i| (points.get2(i, 1) - center[1]).atan2(points.get2(i, 0) - center[0]))
        .collect();
    Ok(CircleFit {
        center,
        radius: r2.sqrt(),
        phases,
    })
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Subtracts the set's mean phase: phases are wrapped to `[-pi, pi)`,
/// averaged arithmetically, and the differences wrapped again.
pub fn align_phases(phases: &[f64]) -> Vec<f64> {
    if phases.is_empty() {
        return Vec::new();
    }
    let wrapped: Vec<f64> = phases.iter().map(|&p| wrap_angle(p)).collect();
    let mean = wrapped.iter().sum::<f64>() / wrapped.len() as f64;
    wrapped.iter().map(|&p| wrap_angle(p - mean)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Values outside `[lo, hi)` are dropped.
    pub fn new(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            if v >= lo && v < hi {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        Self { edges, counts }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Center of the fullest bin (first one on ties).
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        self.center(best)
    }

    /// Peaks of a circular histogram. Counts are smoothed with a `[1, 2, 1]`
    /// kernel; local maxima reaching `min_fraction` of the highest smoothed
    /// bin are kept, and maxima closer than `min_separation` (radians, or
    /// units of the axis) to a higher one are dropped. Each peak location is
    /// the count-weighted mean over its bin and the two neighbours.
    pub fn circular_peaks(&self, min_fraction: f64, min_separation: f64) -> Vec<f64> {
        let n = self.bins();
        if n < 3 {
            return Vec::new();
        }
        let c = |i: isize| self.counts[i.rem_euclid(n as isize) as usize] as f64;
        let smooth: Vec<f64> = (0..n as isize).map(|i| 0.25 * c(i - 1) + 0.5 * c(i) + 0.25 * c(i + 1)).collect();
        let top = smooth.iter().cloned().fold(0.0, f64::max);
        if top == 0.0 {
            return Vec::new();
        }
        let period = self.edges[n] - self.edges[0];
        let width = period / n as f64;
        let mut candidates: Vec<(f64, usize)> = (0..n)
            .filter(|&i| {
                let prev = smooth[(i + n - 1) % n];
                let next = smooth[(i + 1) % n];
                smooth[i] > prev && smooth[i] >= next && smooth[i] >= min_fraction * top
            })
            .map(|i| (smooth[i], i))
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<usize> = Vec::new();
        for (_, i) in candidates {
            let far = kept.iter().all(|&k| {
                let d = (i as f64 - k as f64).abs() * width;
                d.min(period - d) >= min_separation
            });
            if far {
                kept.push(i);
            }
        }
        let mut peaks: Vec<f64> = kept
            .into_iter()
            .map(|i| {
                let mut num = 0.0;
                let mut den = 0.0;
                for off in -1isize..=1 {
                    let w = c(i as isize + off);
                    num += w * (self.center(i) + off as f64 * width);
                    den += w;
                }
                let x = num / den;
                self.edges[0] + (x - self.edges[0]).rem_euclid(period)
            })
            .collect();
        peaks.sort_by(f64::total_cmp);
        peaks
    }
}

/// Pooled aligned-phase histogram over `[-pi, pi)`. Returns the histogram
/// and the number of sets whose fit failed.
pub fn phase_histogram<'a>(sets: impl IntoIterator<Item = &'a Tensor>, bins: usize, align: bool) -> (Histogram, usize) {
    let mut phases = Vec::new();
    let mut failed = 0;
    for set in sets {
        match fit_circle(set) {
            Ok(fit) => {
                if align {
                    phases.extend(align_phases(&fit.phases));
                } else {
                    phases.extend(fit.phases.iter().map(|&p| wrap_angle(p)));
                }
            }
            Err(_) => failed += 1,
        }
    }
    (Histogram::new(phases, -PI, PI, bins), failed)
}

/// Histogram of fitted radii over `[lo, hi)`, plus the failed-fit count.
pub fn radius_histogram<'a>(sets: impl IntoIterator<Item = &'a Tensor>, lo: f64, hi: f64, bins: usize) -> (Histogram, usize) {
    let mut radii = Vec::new();
    let mut failed = 0;
    for set in sets {
        match fit_circle(set) {
            Ok(fit) => radii.push(fit.radius),
            Err(_) => failed += 1,
        }
    }
    (Histogram::new(radii, lo, hi, bins), failed)
}

/// Smallest circular distance between consecutive sorted peaks (and between
/// the last and first one across the period).
pub fn circular_spacings(peaks: &[f64], period: f64) -> Vec<f64> {
    let n = peaks.len();
    (0..n)
        .map(|i| {
            let next = if i + 1 < n { peaks[i + 1] } else { peaks[0] + period };
            next - peaks[i]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{circle_points, gen_circle_set, CircleNoise, CircleSetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_point_unit_circle() {
        let pts = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let fit = fit_circle(&pts).unwrap();
        assert!(fit.center[0].abs() < 1e-12 && fit.center[1].abs() < 1e-12);
        assert!((fit.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_generator_spec() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 3..10 {
            let (pts, spec) = gen_circle_set(n, CircleNoise::NONE, &mut rng).unwrap();
            let fit = fit_circle(&pts).unwrap();
            assert!((fit.center[0] - spec.center[0]).abs() < 1e-9);
            assert!((fit.center[1] - spec.center[1]).abs() < 1e-9);
            assert!((fit.radius - spec.radius).abs() < 1e-9);
            for (i, &p) in fit.phases.iter().enumerate() {
                let expected = spec.phase + 2.0 * PI * i as f64 / n as f64;
                assert!(wrap_angle(p - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn radial_noise_robustness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = CircleSetSpec {
            center: [0.0, 0.0],
            radius: 1.0,
            phase: 0.3,
            size: 50,
        };
        let noise = CircleNoise {
            radial_sd: 0.01,
            phase_sd: 0.0,
        };
        let fit = fit_circle(&circle_points(&spec, noise, &mut rng).unwrap()).unwrap();
        assert!((fit.radius - 1.0).abs() < 0.05);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert!(matches!(fit_circle(&pts), Err(Error::Degenerate(_))));
        let two = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(fit_circle(&two), Err(Error::Degenerate(_))));
    }

    #[test]
    fn wrap_range() {
        for a in [-10.0, -PI, 0.0, PI, 3.5, 100.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w));
            assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
        assert_eq!(wrap_angle(PI), -PI);
    }

    #[test]
    fn single_noiseless_set_gives_equally_spaced_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [3usize, 4, 5] {
            let (pts, _) = gen_circle_set(n, CircleNoise::NONE, &mut rng).unwrap();
            let aligned = align_phases(&fit_circle(&pts).unwrap().phases);
            let mut sorted = aligned.clone();
            sorted.sort_by(f64::total_cmp);
            for w in sorted.windows(2) {
                assert!((w[1] - w[0] - 2.0 * PI / n as f64).abs() < 1e-9);
            }
            let (hist, failed) = phase_histogram([&pts], 360, true);
            assert_eq!(failed, 0);
            assert_eq!(hist.counts.iter().filter(|&&c| c > 0).count(), n);
        }
    }

    #[test]
    fn histogram_basics() {
        let h = Histogram::new([0.1, 0.2, 0.9, 1.5, -0.1], 0.0, 1.0, 4);
        assert_eq!(h.counts, vec![2, 0, 0, 1]);
        assert_eq!(h.total(), 3);
        assert!((h.mode() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn circular_peaks_find_wrapped_modes() {
        let mut values = Vec::new();
        for i in 0..300 {
            let jitter = (i % 7) as f64 * 0.01 - 0.03;
            values.push(wrap_angle(PI - 0.02 + jitter));
            values.push(1.0 + jitter);
        }
        let h = Histogram::new(values, -PI, PI, 72);
        let peaks = h.circular_peaks(0.3, 0.5);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        let spacing = circular_spacings(&peaks, 2.0 * PI);
        assert!((spacing.iter().sum::<f64>() - 2.0 * PI).abs() < 1e-9);
    }
}

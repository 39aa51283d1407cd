use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setflow::data::*;
use setflow::exec::Exec;
use setflow::Tensor;

/// Solves for barycentric weights of `p` in triangle `(a, b, c)` via the
/// normal equations of `p - a = u (b - a) + v (c - a)`.
fn barycentric(p: [f64; 3], [a, b, c]: [[f64; 3]; 3]) -> ([f64; 3], f64) {
    let e1: Vec<f64> = (0..3).map(|k| b[k] - a[k]).collect();
    let e2: Vec<f64> = (0..3).map(|k| c[k] - a[k]).collect();
    let d: Vec<f64> = (0..3).map(|k| p[k] - a[k]).collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (d11, d12, d22) = (dot(&e1, &e1), dot(&e1, &e2), dot(&e2, &e2));
    let (r1, r2) = (dot(&d, &e1), dot(&d, &e2));
    let det = d11 * d22 - d12 * d12;
    let u = (d22 * r1 - d12 * r2) / det;
    let v = (d11 * r2 - d12 * r1) / det;
    let residual = (0..3)
        .map(|k| (a[k] + u * e1[k] + v * e2[k] - p[k]).abs())
        .fold(0.0, f64::max);
    ([1.0 - u - v, u, v], residual)
}

#[test]
fn unit_triangle_centroid() {
    let mesh = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (pts, _) = sample_mesh_points(&mesh, 100_000, &mut rng).unwrap();
    let n = pts.rows() as f64;
    let mean: Vec<f64> = (0..3).map(|k| (0..pts.rows()).map(|i| pts.get2(i, k)).sum::<f64>() / n).collect();
    assert!((mean[0] - 1.0 / 3.0).abs() < 0.005 && (mean[1] - 1.0 / 3.0).abs() < 0.005 && mean[2] == 0.0, "{mean:?}");
}

#[test]
fn area_weighted_triangle_choice() {
    // areas 1 and 3, plus a zero-area sliver
    let mesh = parse_off(
        b"OFF\n9 3 0\n0 0 0\n2 0 0\n0 1 0\n10 0 0\n13 0 0\n10 2 0\n5 5 5\n6 6 6\n7 7 7\n3 0 1 2\n3 3 4 5\n3 6 7 8\n",
    )
    .unwrap();
    assert_eq!(mesh.areas()[2], 0.0);
    let n = 40_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (_, src) = sample_mesh_points(&mesh, n, &mut rng).unwrap();
    let hits = [0, 1, 2].map(|t| src.iter().filter(|&&s| s == t).count() as f64);
    assert_eq!(hits[2], 0.0);
    let p = 0.25;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((hits[0] - n as f64 * p).abs() < 3.0 * sd, "{hits:?}");
}

#[test]
fn samples_lie_on_their_triangles() {
    let mesh = parse_off(b"OFF\n5 2 0\n0.3 -1 2\n4 0.5 1\n-2 3 0.25\n1 1 1\n7 -3 2\n3 0 1 2\n4 1 3 4 2\n").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (pts, src) = sample_mesh_points(&mesh, 5000, &mut rng).unwrap();
    for (i, &t) in src.iter().enumerate() {
        let p = [pts.get2(i, 0), pts.get2(i, 1), pts.get2(i, 2)];
        let (w, residual) = barycentric(p, mesh.corners(t));
        assert!(residual < 1e-12, "point {i} off its triangle by {residual}");
        assert!(w.iter().all(|&x| x > -1e-12 && x < 1.0 + 1e-12), "{w:?}");
    }
}

#[test]
fn circle_centers_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut xs: Vec<f64> = (0..n).map(|_| CircleSetSpec::sample(3, &mut rng).center[0]).collect();
    xs.sort_by(f64::total_cmp);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x + 10.0) / 20.0;
            (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 1.628 / (n as f64).sqrt(), "KS statistic {ks}");
}

#[test]
fn set_size_frequencies() {
    let clouds = vec![Tensor::zeros(&[8, 2])];
    let src = CloudSource { clouds, labels: None };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 7];
    for b in make_batches(&src, &[3, 4, 5, 6], 1, &mut rng).take(10_000) {
        counts[b.unwrap().sets.shape()[1]] += 1;
    }
    for s in 3..=6 {
        let f = counts[s] as f64 / 10_000.0;
        assert!((f - 0.25).abs() < 0.02, "size {s}: {f}");
    }
}

#[test]
fn ground_truth_phases_show_equidistant_peaks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sets: Vec<Tensor> = (0..10_000)
        .map(|_| gen_circle_set(3, CircleNoise::default(), &mut rng).unwrap().0)
        .collect();
    let (hist, failed) = phase_histogram(&sets, 72, true);
    assert_eq!(failed, 0);
    let peaks = hist.circular_peaks(0.3, 0.6);
    assert_eq!(peaks.len(), 3, "{peaks:?}");
    for (p, target) in peaks.iter().zip([-2.0 * PI / 3.0, 0.0, 2.0 * PI / 3.0]) {
        assert!((p - target).abs() < 0.15, "peak {p} vs {target}");
    }
}

#[test]
fn null_model_has_no_dominant_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sets: Vec<Tensor> = (0..10_000)
        .map(|_| Tensor::matrix(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let (raw, _) = phase_histogram(&sets, 36, false);
    let max = *raw.counts.iter().max().unwrap() as f64;
    let min = *raw.counts.iter().min().unwrap() as f64;
    assert!(max / min < 2.0, "ratio {}", max / min);
    let (aligned, _) = phase_histogram(&sets, 72, true);
    assert_ne!(aligned.circular_peaks(0.3, 0.6).len(), 3);
}

fn write_off_tree(root: &std::path::Path, class: &str, n: usize) {
    for (i, sub) in (0..n).map(|i| (i, if i % 5 == 0 { "test" } else { "train" })) {
        let dir = root.join(class).join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        let s = 1.0 + i as f64;
        let text = format!(
            "OFF{} 4 0\n0 0 0\n{s} 0 0\n0 {s} 0\n0 0 {s}\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n",
            4
        );
        std::fs::write(dir.join(format!("{class}_{i:04}.off")), text).unwrap();
    }
}

#[test]
fn modelnet_layout_dataset() {
    let dir = tempfile::tempdir().unwrap();
    write_off_tree(dir.path(), "airplane", 25);
    write_off_tree(dir.path(), "chair", 5);
    let opts = DatasetOptions {
        classes: vec!["airplane".into()],
        max_models_per_class: 20,
        points_per_model: 500,
        seed: 3,
        ..DatasetOptions::default()
    };
    let ds = PointCloudDataset::load(dir.path(), &opts, Exec::Parallel).unwrap();
    assert_eq!(ds.entries.len(), 20);
    assert_eq!(ds.entries.iter().filter(|e| e.split == Split::Train).count(), 16);
    for c in &ds.clouds {
        assert_eq!(c.shape(), &[500, 3]);
        let max = (0..500).map(|i| c.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }
    let again = PointCloudDataset::load(dir.path(), &opts, Exec::Sequential).unwrap();
    assert_eq!(ds.manifest_jsonl(), again.manifest_jsonl());
    assert_eq!(ds.clouds, again.clouds);
    assert_eq!(parse_manifest(&ds.manifest_jsonl()).unwrap(), ds.entries);
    let test = ds.fixed_subsets(Split::Test, 100, 42, false).unwrap();
    assert_eq!(test.len(), 4);
    assert_eq!(test, ds.fixed_subsets(Split::Test, 100, 42, false).unwrap());
}

proptest! {
    #[test]
    fn normalized_cloud_is_centered_unit(points in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..40)) {
        let t = Tensor::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        prop_assume!(normalize_cloud(&t).is_ok());
        let (c, _) = normalize_cloud(&t).unwrap();
        let n = c.rows() as f64;
        for k in 0..3 {
            let mean = (0..c.rows()).map(|i| c.get2(i, k)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
        }
        let max = (0..c.rows()).map(|i| c.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn off_round_trips(verts in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 3..12), faces in prop::collection::vec(prop::collection::vec(0usize..3, 3..6), 1..8)) {
        let mut text = format!("OFF\n{} {} 0\n", verts.len(), faces.len());
        for v in &verts {
            text.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &faces {
            text.push_str(&format!("{} {}\n", f.len(), f.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")));
        }
        let mesh = parse_off(text.as_bytes()).unwrap();
        let again = parse_off(mesh.to_off().as_bytes()).unwrap();
        prop_assert_eq!(again, mesh);
    }

    #[test]
    fn noiseless_fit_recovers_spec(seed in any::<u64>(), n in 3usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pts, spec) = gen_circle_set(n, CircleNoise::NONE, &mut rng).unwrap();
        let fit = fit_circle(&pts).unwrap();
        prop_assert!((fit.center[0] - spec.center[0]).abs() < 1e-9);
        prop_assert!((fit.center[1] - spec.center[1]).abs() < 1e-9);
        prop_assert!((fit.radius - spec.radius).abs() < 1e-9);
        for (i, &p) in fit.phases.iter().enumerate() {
            prop_assert!(wrap_angle(p - spec.phase - 2.0 * PI * i as f64 / n as f64).abs() < 1e-9);
        }
    }
}

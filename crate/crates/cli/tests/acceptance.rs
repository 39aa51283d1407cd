//! Acceptance suite: one PASS/FAIL/BLOCKED line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the report lines always
//! reach the terminal. Exits non-zero when any criterion fails. A criterion
//! whose inputs are absent from this machine reports BLOCKED.
//!
//! Criteria 6 and 8 train the toy model twice for the full schedule
//! (about 25 minutes single-threaded).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use setflow::data::{parse_off, sample_mesh_points};
use setflow::flow::numerical_jacobian_logdet;
use setflow::model::{ModelConfig, SetFlowModel};
use setflow::numerics::{gaussian_entropy_total, grad_check, Activation, ParamStore, Tape, LN_2PI};
use setflow::Tensor;
use setflow_cli::commands::{CHECKPOINT_FILE, NAN_CHECKPOINT_FILE, TRAIN_LOG};
use setflow_cli::RunConfig;

enum Outcome {
    Pass(String),
    Fail(String),
    Blocked(String),
}

use Outcome::{Blocked, Fail, Pass};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn normal_vec(n: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::vector((0..n).map(|_| StandardNormal.sample(rng)).collect())
}

fn random_model(cfg: ModelConfig, seed: u64, limit: f64) -> (SetFlowModel, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = SetFlowModel::new(cfg, &mut store, &mut rng).unwrap();
    model.randomize(&mut store, &mut rng, limit);
    (model, store)
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn setflow(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_setflow"))
        .args(args)
        .env("SETFLOW_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "setflow {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Mean per-entity LL column of an `eval` CSV.
fn eval_mean(csv: &str) -> Result<(f64, f64), String> {
    let row = csv.lines().nth(1).ok_or("eval printed no row")?;
    let cols: Vec<f64> = row.split(',').map(|v| v.parse().map_err(|_| format!("bad eval row {row}"))).collect::<Result<_, _>>()?;
    Ok((cols[2], cols[3]))
}

fn field(report: &str, key: &str) -> Vec<f64> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .map(|v| v.split(',').filter(|s| !s.is_empty()).filter_map(|s| s.parse().ok()).collect())
        .unwrap_or_default()
}

// 1
fn invertibility() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100u64 {
        let d = [2, 3][(i % 2) as usize];
        let g = [8, 90][(i / 2 % 2) as usize];
        let s = [1, 3, 16, 1000][(i / 4 % 4) as usize];
        let base = if d == 3 { ModelConfig::point_cloud() } else { ModelConfig::toy() };
        let cfg = ModelConfig {
            entity_dim: d,
            global_dim: g,
            stacks: 6,
            ..base
        };
        let (model, store) = random_model(cfg, i, 0.2);
        let x = normal(s, d, &mut rng);
        let z = normal_vec(g, &mut rng);
        let enc = model.encode(&store, &x, &z, None).unwrap();
        let (z_back, x_back) = model.decode(&store, &enc.entities, &enc.global, None).unwrap();
        worst = worst.max(x_back.max_abs_diff(&x)).max(z_back.max_abs_diff(&z));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-8 && secs < 120.0,
        format!("100 models, max |decode(encode) - input| = {worst:.2e} (< 1e-8), {secs:.1} s (< 120 s)"),
    )
}

// 2
fn exact_logdet() -> Outcome {
    let mut worst = 0.0f64;
    let (s, d, g) = (2usize, 2usize, 3usize);
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for seed in 0..10 {
        let cfg = ModelConfig {
            entity_dim: d,
            global_dim: g,
            ..ModelConfig::toy()
        };
        let (model, store) = random_model(cfg, 200 + seed, 0.5);
        let x = normal(s, d, &mut rng);
        let z = normal_vec(g, &mut rng);
        let analytic = model.loglik(&store, &x, &z, None).unwrap().joint;
        let flat: Vec<f64> = z.data().iter().chain(x.data()).copied().collect();
        let f = |v: &[f64]| -> Vec<f64> {
            let zz = Tensor::vector(v[..g].to_vec());
            let xx = Tensor::matrix(s, d, v[g..].to_vec()).unwrap();
            let e = model.encode(&store, &xx, &zz, None).unwrap();
            e.global.data().iter().chain(e.entities.data()).copied().collect()
        };
        let out = f(&flat);
        let base: f64 = -0.5 * (out.iter().map(|v| v * v).sum::<f64>() + out.len() as f64 * LN_2PI);
        let numeric = base + numerical_jacobian_logdet(f, &flat, 1e-5).unwrap();
        worst = worst.max((analytic - numeric).abs() / numeric.abs());
    }
    verdict(worst < 1e-5, format!("10 models (s=2, D=2, G=3), max relative error {worst:.2e} (< 1e-5)"))
}

// 3
fn permutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let models: Vec<(SetFlowModel, ParamStore)> = (0..10u64)
        .map(|i| {
            let d = 2 + (i % 2) as usize;
            let cfg = ModelConfig {
                entity_dim: d,
                hidden: vec![32, 32],
                batch_norm: d == 3,
                ..ModelConfig::toy()
            };
            random_model(cfg, 300 + i, 0.2)
        })
        .collect();
    let (mut worst_ll, mut worst_eq) = (0.0f64, 0.0f64);
    for pair in 0..1000 {
        let (model, store) = &models[pair % models.len()];
        let s = rng.gen_range(1..=64);
        let x = normal(s, model.entity_dim(), &mut rng);
        let z = normal_vec(model.global_dim(), &mut rng);
        let mut perm: Vec<usize> = (0..s).collect();
        perm.shuffle(&mut rng);
        let a = model.loglik(store, &x, &z, None).unwrap().joint;
        let b = model.loglik(store, &x.permute_rows(&perm), &z, None).unwrap().joint;
        worst_ll = worst_ll.max((a - b).abs());
        let (za, xa) = model.decode(store, &x, &z, None).unwrap();
        let (zb, xb) = model.decode(store, &x.permute_rows(&perm), &z, None).unwrap();
        worst_eq = worst_eq.max(xb.max_abs_diff(&xa.permute_rows(&perm))).max(zb.max_abs_diff(&za));
    }
    verdict(
        worst_ll < 1e-9 && worst_eq < 1e-9,
        format!("1000 pairs, max |dLL| = {worst_ll:.2e} (< 1e-9), sampling-map equivariance error {worst_eq:.2e}"),
    )
}

// 4
fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        entity_dim: 2,
        global_dim: 3,
        stacks: 2,
        hidden: vec![4],
        activation: Activation::Tanh,
        pool_features: 3,
        pool_out: 3,
        ..ModelConfig::toy()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut store = ParamStore::new();
    let model = SetFlowModel::new(cfg, &mut store, &mut rng).unwrap();
    store.randomize_uniform(&mut rng, 0.5);
    let x = normal(3, 2, &mut rng);
    let z = normal_vec(3, &mut rng);
    let nll = |s: &ParamStore| -model.loglik(s, &x, &z, None).unwrap().joint;
    let mut tape = Tape::gradient(&store);
    let vars = model.loglik_vars(&mut tape, &x, &z, None).unwrap();
    let neg = tape.scale(&vars.joint, -1.0);
    let grads = tape.backward(&neg).unwrap();
    let report = grad_check(nll, &store, &grads, 1e-4, 1e-4);
    let n = store.num_trainable();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        report.passed() && n < 2000 && report.entries.len() == n && secs < 300.0,
        format!(
            "{n} parameters, max relative error {:.2e} (< 1e-4), {secs:.1} s",
            report.max_rel_error()
        ),
    )
}

// 5
fn identity_start() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut ok = true;
    let mut detail = String::new();
    for (cfg, s) in [(ModelConfig::toy(), 5usize), (ModelConfig { batch_norm: false, ..ModelConfig::point_cloud() }, 1000)] {
        let mut store = ParamStore::new();
        let model = SetFlowModel::new(cfg.clone(), &mut store, &mut rng).unwrap();
        let x = normal(s, cfg.entity_dim, &mut rng);
        let z = normal_vec(cfg.global_dim, &mut rng);
        let b = model.loglik(&store, &x, &z, None).unwrap();
        // row-wise base density, rows summed in order
        let logn = |row: &[f64]| (row.iter().map(|v| v * v).sum::<f64>() + row.len() as f64 * LN_2PI) * -0.5;
        let entities: f64 = x.data().chunks(cfg.entity_dim).map(logn).fold(0.0, |a, v| a + v);
        let expected = entities + logn(z.data());
        let exact = b.joint.to_bits() == expected.to_bits();
        let adjusted = b.reported_set_ll == b.joint - gaussian_entropy_total(cfg.global_dim)
            && (b.joint - b.reported_set_ll - cfg.global_dim as f64 * 0.5 * (2.0 * PI * std::f64::consts::E).ln()).abs()
                <= 4.0 * f64::EPSILON * b.joint.abs();
        ok &= exact && adjusted;
        detail.push_str(&format!(
            "D={} G={} s={s}: joint {} vs base {} ({}); ",
            cfg.entity_dim,
            cfg.global_dim,
            b.joint,
            expected,
            if exact { "bit-identical" } else { "DIFFERENT" }
        ));
    }
    detail.push_str("reported = joint - G * 0.5 ln(2 pi e)");
    verdict(ok, detail)
}

struct ToyRun {
    dir: PathBuf,
    secs: f64,
}

fn toy_train(dir: &Path) -> Result<ToyRun, String> {
    let start = Instant::now();
    setflow(&["train", "--out", p(dir), "--set", "io.log_interval=2500"])?;
    Ok(ToyRun {
        dir: dir.to_path_buf(),
        secs: start.elapsed().as_secs_f64(),
    })
}

// 6
fn toy_capture(work: &Path) -> (Outcome, Option<ToyRun>) {
    let result = (|| -> Result<(Outcome, ToyRun), String> {
        let cfg = RunConfig::default();
        let sets = cfg.train.steps * cfg.train.batch_size as u64;
        let test = work.join("toy_test");
        setflow(&["gen-toy", "--sets", "2000", "--size-range", "3..6", "--seed", "1001", "--out", p(&test)])?;
        let ident = work.join("toy_identity");
        setflow(&["train", "--out", p(&ident), "--set", "train.steps=0"])?;
        let run = toy_train(&work.join("toy_a"))?;
        let ckpt = run.dir.join(CHECKPOINT_FILE);
        let (before, sem0) = eval_mean(&setflow(&["eval", "--ckpt", p(&ident.join(CHECKPOINT_FILE)), "--data", p(&test)])?)?;
        let (after, sem1) = eval_mean(&setflow(&["eval", "--ckpt", p(&ckpt), "--data", p(&test)])?)?;
        let phases = work.join("toy_phases.csv");
        let report = setflow(&["analyze-phases", "--ckpt", p(&ckpt), "--size", "3", "--sets", "10000", "--out", p(&phases)])?;
        let truth = setflow(&["analyze-phases", "--ckpt", "none", "--size", "3", "--sets", "10000", "--out", p(&work.join("truth_phases.csv"))])?;
        let peaks = field(&report, "peaks=");
        let spacings = field(&report, "spacings=");
        let gain = after - before;
        let spaced = spacings.iter().all(|s| (s - 2.0 * PI / 3.0).abs() <= 0.3);
        let ok = gain >= 1.0 && peaks.len() == 3 && spaced && run.secs < 7200.0;
        let detail = format!(
            "{sets} sets in {:.0} s; test LL {before:.3} (+/-{sem0:.3}) -> {after:.3} (+/-{sem1:.3}), gain {gain:.3} (>= 1.0); \
             {} peaks at {:?}, spacings {:?} (2pi/3 +/- 0.3); radius mode {:.2} (data {:.2})",
            run.secs,
            peaks.len(),
            peaks,
            spacings,
            field(&report, "radius_mode=").first().copied().unwrap_or(f64::NAN),
            field(&truth, "radius_mode=").first().copied().unwrap_or(f64::NAN),
        );
        Ok((verdict(ok, detail), run))
    })();
    match result {
        Ok((o, run)) => (o, Some(run)),
        Err(e) => (Fail(e), None),
    }
}

// 7
fn modelnet(work: &Path) -> Outcome {
    let Some(root) = std::env::var_os("SETFLOW_MODELNET40").map(PathBuf::from) else {
        return Blocked("SETFLOW_MODELNET40 is not set; ModelNet40 meshes are not available on this machine".into());
    };
    let result = (|| -> Result<Outcome, String> {
        let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/airplane.toml");
        let ident = work.join("airplane_identity");
        setflow(&["train", "--config", p(&config), "--data", p(&root), "--out", p(&ident), "--set", "train.steps=0"])?;
        let run = work.join("airplane");
        let trained = setflow(&["train", "--config", p(&config), "--data", p(&root), "--out", p(&run)]);
        let nan = run.join(NAN_CHECKPOINT_FILE).exists();
        trained?;
        let eval = |dir: &Path| setflow(&["eval", "--ckpt", p(&dir.join(CHECKPOINT_FILE)), "--split", "test", "--size", "1000"]);
        let (before, _) = eval_mean(&eval(&ident)?)?;
        let (after, sem) = eval_mean(&eval(&run)?)?;
        Ok(verdict(
            after - before >= 1.0 && !nan,
            format!("airplane subset: test LL {before:.3} -> {after:.3} (+/-{sem:.3}), gain {:.3} (>= 1.0), NaN aborts: {nan}", after - before),
        ))
    })();
    result.unwrap_or_else(Fail)
}

// 8
fn determinism(work: &Path, first: Option<&ToyRun>) -> Outcome {
    let Some(first) = first else {
        return Fail("first toy run unavailable".into());
    };
    let second = match toy_train(&work.join("toy_b")) {
        Ok(r) => r,
        Err(e) => return Fail(e),
    };
    let same = |f: &str| std::fs::read(first.dir.join(f)).ok() == std::fs::read(second.dir.join(f)).ok();
    let (log, ckpt) = (same(TRAIN_LOG), same(CHECKPOINT_FILE));
    verdict(
        log && ckpt,
        format!("two full toy runs: {TRAIN_LOG} identical: {log}, {CHECKPOINT_FILE} identical: {ckpt}"),
    )
}

// 9
fn data_pipeline() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let tri = parse_off(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
    let (pts, _) = sample_mesh_points(&tri, 100_000, &mut rng).unwrap();
    let n = pts.rows() as f64;
    let cx = (0..pts.rows()).map(|i| pts.get2(i, 0)).sum::<f64>() / n;
    let cy = (0..pts.rows()).map(|i| pts.get2(i, 1)).sum::<f64>() / n;
    let centroid = (cx - 1.0 / 3.0).abs().max((cy - 1.0 / 3.0).abs());

    let pair = parse_off(b"OFF\n6 2 0\n0 0 0\n1 0 0\n0 2 0\n5 0 0\n8 0 0\n5 2 0\n3 0 1 2\n3 3 4 5\n").unwrap();
    let draws = 40_000usize;
    let (pts2, src) = sample_mesh_points(&pair, draws, &mut rng).unwrap();
    let small = src.iter().filter(|&&t| t == 0).count() as f64;
    let sd = (draws as f64 * 0.25 * 0.75).sqrt();
    let ratio_sigma = (small - 0.25 * draws as f64).abs() / sd;

    let mut recon = 0.0f64;
    for (i, &t) in src.iter().enumerate() {
        let [a, b, c] = pair.corners(t);
        // solve p = a + u (b - a) + v (c - a) in the plane z = 0
        let (e1, e2) = ([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]]);
        let (px, py) = (pts2.get2(i, 0) - a[0], pts2.get2(i, 1) - a[1]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        let u = (px * e2[1] - py * e2[0]) / det;
        let v = (e1[0] * py - e1[1] * px) / det;
        let inside = u >= -1e-12 && v >= -1e-12 && u + v <= 1.0 + 1e-12;
        let back = [a[0] + u * e1[0] + v * e2[0], a[1] + u * e1[1] + v * e2[1]];
        let err = (back[0] - pts2.get2(i, 0)).abs().max((back[1] - pts2.get2(i, 1)).abs()).max(pts2.get2(i, 2).abs());
        recon = recon.max(if inside { err } else { f64::INFINITY });
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        centroid < 0.005 && ratio_sigma < 3.0 && recon < 1e-12 && secs < 60.0,
        format!(
            "centroid error {centroid:.4} (< 0.005), 1:3 area split off by {ratio_sigma:.2} sigma (< 3), \
             barycentric error {recon:.1e} (< 1e-12), {secs:.1} s"
        ),
    )
}

fn main() {
    let work = work_dir();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Blocked(d) => ("BLOCKED", d),
        };
        println!("[{tag}] {id}. {name}: {detail}");
    };
    report(1, "invertibility", invertibility());
    report(2, "exact log-determinant", exact_logdet());
    report(3, "permutation invariance", permutation());
    report(4, "gradient correctness", gradients());
    report(5, "identity-start exactness", identity_start());
    report(9, "data pipeline", data_pipeline());
    let (toy, run) = toy_capture(&work);
    report(6, "toy non-iid capture", toy);
    report(7, "point-cloud subset", modelnet(&work));
    report(8, "determinism", determinism(&work, run.as_ref()));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

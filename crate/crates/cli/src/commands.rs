use std::f64::consts::PI;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setflow::data::{
    circular_spacings, gen_circle_set, phase_histogram, radius_histogram, save_tensor, CircleNoise, CircleSource,
    FixedSetSource, Histogram, PointCloudDataset, Split,
};
use setflow::exec::Exec;
use setflow::model::{
    reported_per_entity_ll, z_for_set, EntitySet, EvalSummary, InterpolationLabel, LabeledSet, SetFlowModel, SetSource,
    StepRecord,
};
use setflow::numerics::ParamStore;
use setflow::{Error, Result, Tensor};

use crate::args::{AnalyzeArgs, EvalArgs, GenToyArgs, InterpolateArgs, SampleArgs, TrainArgs};
use crate::checkpoint::{fresh_run, Checkpoint};
use crate::config::{RunConfig, RESUMABLE_KEYS};
use crate::sets::{load_sets, resolve, stack_sets, write_toy_dir, ResolvedData, ToySetRecord};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const NAN_CHECKPOINT_FILE: &str = "nan_abort.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_LOG_HEADER: &str = "step,set_size,joint_ll,per_entity_ll";
pub const WALLCLOCK_LOG: &str = "wallclock.csv";
pub const WALLCLOCK_HEADER: &str = "step,wallclock_s";
pub const LOCK_FILE: &str = "train.lock";
pub const EVAL_HEADER: &str = "checkpoint_step,sets,mean_per_entity_ll,two_sem,z_seed";
pub const HISTOGRAM_HEADER: &str = "histogram,bin,lo,hi,count";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Replaces the extension of `path` with `csv`; refuses paths already
/// ending in `.csv` so the binary output is not overwritten.
fn csv_sibling(path: &Path) -> Result<PathBuf> {
    if path.extension().is_some_and(|e| e == "csv") {
        return Err(Error::Usage(format!("{}: output path must not end in .csv", path.display())));
    }
    Ok(path.with_extension("csv"))
}

// ---------------------------------------------------------------- gen-toy

#[derive(Clone, Debug, PartialEq)]
pub struct GenToyReport {
    pub sets: usize,
    pub points: usize,
    pub out: PathBuf,
}

impl fmt::Display for GenToyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {} sets ({} points) to {}", self.sets, self.points, self.out.display())
    }
}

pub fn gen_toy(args: &GenToyArgs) -> Result<GenToyReport> {
    let (lo, hi) = args.size_range;
    if lo < 3 || lo > hi {
        return Err(Error::Usage(format!("size range {lo}..{hi} must satisfy 3 <= a <= b")));
    }
    let noise = CircleNoise {
        radial_sd: args.radial_sd,
        phase_sd: args.phase_sd,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut records = Vec::with_capacity(args.sets);
    let mut data = Vec::new();
    for id in 0..args.sets {
        let size = rng.gen_range(lo..=hi);
        let (pts, spec) = gen_circle_set(size, noise, &mut rng)?;
        records.push(ToySetRecord {
            id,
            size,
            offset: data.len() / 2,
            center: spec.center,
            radius: spec.radius,
            phase: spec.phase,
        });
        data.extend_from_slice(pts.data());
    }
    let points = Tensor::matrix(data.len() / 2, 2, data)?;
    write_toy_dir(&args.out, &records, &points)?;
    Ok(GenToyReport {
        sets: records.len(),
        points: points.rows(),
        out: args.out.clone(),
    })
}

// ------------------------------------------------------------------ train

/// Exclusive ownership of a run directory for one training process.
pub struct DirLock(PathBuf);

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Usage(format!(
                "{} is locked by another training process ({}); delete the lock file if that process is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub out: PathBuf,
    pub first_step: u64,
    pub last: Option<StepRecord>,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.last {
            Some(r) => writeln!(
                f,
                "trained steps {}..={}; last batch joint {:.6} per-entity {:.6}; checkpoint {}",
                self.first_step,
                r.step,
                r.joint_ll,
                r.per_entity_ll,
                self.out.join(CHECKPOINT_FILE).display()
            ),
            None => writeln!(f, "no steps to run; checkpoint {}", self.out.join(CHECKPOINT_FILE).display()),
        }
    }
}

/// Keeps the header and the rows whose leading step is at most `step`.
/// Returns the last kept row.
fn truncate_log(path: &Path, header: &str, step: u64) -> Result<Option<String>> {
    let mut kept = vec![header.to_string()];
    if path.exists() {
        let f = File::open(path).map_err(io_err(path))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(io_err(path))?;
            let row_step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
            if row_step.is_some_and(|s| s <= step) {
                kept.push(line);
            }
        }
    }
    let mut text = kept.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))?;
    Ok(kept.into_iter().skip(1).last())
}

fn training_source(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Box<dyn SetSource>> {
    match resolve(&cfg.data)? {
        ResolvedData::Circles => Ok(Box::new(CircleSource { noise: cfg.data.noise })),
        ResolvedData::Sets(path) => {
            if cfg.data.labels {
                return Err(Error::Usage("generated sets carry no labels".into()));
            }
            let sets = load_sets(&path)?;
            check_entity_dim(cfg.model.entity_dim, &sets)?;
            let src = FixedSetSource::new(sets);
            let sizes: Vec<usize> = src.sizes().collect();
            if let Some(s) = cfg.train.set_sizes.iter().find(|s| !sizes.contains(s)) {
                return Err(Error::Data(format!("{} has no set of size {s}", path.display())));
            }
            Ok(Box::new(src))
        }
        ResolvedData::Modelnet(root) => {
            let ds = PointCloudDataset::load(&root, &cfg.data.modelnet, exec)?;
            let manifest = out.join("dataset_manifest.jsonl");
            std::fs::write(&manifest, ds.manifest_jsonl()).map_err(io_err(&manifest))?;
            if cfg.data.labels && ds.num_classes() > cfg.model.num_classes {
                return Err(Error::Usage(format!(
                    "dataset has {} classes, model.num_classes is {}",
                    ds.num_classes(),
                    cfg.model.num_classes
                )));
            }
            log::info!("loaded {} models from {}", ds.entries.len(), root.display());
            Ok(Box::new(ds.source(Split::Train, cfg.data.labels)))
        }
    }
}

fn check_entity_dim(d: usize, sets: &[LabeledSet]) -> Result<()> {
    match sets.iter().find(|s| s.entities.cols() != d) {
        Some(s) => Err(Error::Usage(format!(
            "model expects {d}-dimensional entities, data has {}",
            s.entities.cols()
        ))),
        None => Ok(()),
    }
}

pub fn train(args: &TrainArgs) -> Result<TrainReport> {
    let mut overrides = args.overrides.clone();
    if let Some(d) = &args.data {
        overrides.push(format!("data.path = {}", toml::Value::String(d.display().to_string())));
    }
    let cfg = RunConfig::load(args.config.as_deref(), &overrides)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.io.checkpoint_dir.clone())
        .ok_or_else(|| Error::Usage("no run directory: pass --out or set io.checkpoint_dir".into()))?;
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let _lock = DirLock::acquire(&out)?;
    let exec = Exec::default();

    let (model, mut store, mut trainer) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let diff = ck.config.diff(&cfg, RESUMABLE_KEYS);
            if !diff.is_empty() {
                return Err(Error::Usage(format!(
                    "config differs from the checkpoint being resumed:\n  {}",
                    diff.join("\n  ")
                )));
            }
            let (model, store) = ck.restore_model()?;
            let trainer = ck.restore_trainer(&store, cfg.train.clone(), exec)?;
            (model, store, trainer)
        }
        None => fresh_run(&cfg, exec)?,
    };
    let start = trainer.step_count();
    let log_path = out.join(TRAIN_LOG);
    let wall_path = out.join(WALLCLOCK_LOG);
    truncate_log(&log_path, TRAIN_LOG_HEADER, start)?;
    let wall_offset: f64 = truncate_log(&wall_path, WALLCLOCK_HEADER, start)?
        .and_then(|row| row.split(',').nth(1).and_then(|v| v.parse().ok()))
        .unwrap_or(0.0);
    let config_path = out.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()).map_err(io_err(&config_path))?;

    let mut source = training_source(&cfg, &out, exec)?;
    let append = |p: &Path| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(OpenOptions::new().append(true).open(p).map_err(io_err(p))?))
    };
    let mut log = append(&log_path)?;
    let mut wall = append(&wall_path)?;
    let clock = Instant::now();
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut last = None;
    let (mut window_sum, mut window_n) = (0.0, 0u64);

    while trainer.step_count() < cfg.train.steps {
        let rec = match trainer.step(&model, &mut store, source.as_mut()) {
            Ok(r) => r,
            Err(e @ Error::Numeric { .. }) => {
                log.flush().map_err(io_err(&log_path))?;
                wall.flush().map_err(io_err(&wall_path))?;
                let diag = out.join(NAN_CHECKPOINT_FILE);
                Checkpoint::capture(&cfg, &store, &trainer).save(&diag)?;
                log::error!("aborting: {e}; diagnostic checkpoint {}", diag.display());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{},{},{},{}", rec.step, rec.set_size, rec.joint_ll, rec.per_entity_ll).map_err(io_err(&log_path))?;
        writeln!(wall, "{},{:.3}", rec.step, wall_offset + clock.elapsed().as_secs_f64()).map_err(io_err(&wall_path))?;
        window_sum += rec.per_entity_ll;
        window_n += 1;
        if rec.step % cfg.io.log_interval == 0 {
            log.flush().map_err(io_err(&log_path))?;
            wall.flush().map_err(io_err(&wall_path))?;
            Checkpoint::capture(&cfg, &store, &trainer).save(&ckpt_path)?;
            log::info!(
                "step {}/{}: mean per-entity LL {:.4} over the last {} steps",
                rec.step,
                cfg.train.steps,
                window_sum / window_n as f64,
                window_n
            );
            (window_sum, window_n) = (0.0, 0);
        }
        last = Some(rec);
    }
    log.flush().map_err(io_err(&log_path))?;
    wall.flush().map_err(io_err(&wall_path))?;
    Checkpoint::capture(&cfg, &store, &trainer).save(&ckpt_path)?;
    Ok(TrainReport {
        out,
        first_step: start + 1,
        last,
    })
}

// ------------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub step: u64,
    pub summary: EvalSummary,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            self.summary.per_set.len(),
            self.summary.mean,
            self.summary.two_sem,
            self.summary.z_seed
        )
    }

    pub fn csv(&self) -> String {
        format!("{EVAL_HEADER}\n{}\n", self.csv_row())
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Usage(format!("split must be train or test, got `{other}`"))),
    }
}

/// Loads a checkpoint's model and parameters.
pub fn load_model(path: &Path) -> Result<(Checkpoint, SetFlowModel, ParamStore)> {
    let ck = Checkpoint::load(path)?;
    let (model, store) = ck.restore_model()?;
    Ok((ck, model, store))
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let split = parse_split(&args.split)?;
    let (ck, model, store) = load_model(&args.ckpt)?;
    let seed = args.seed.unwrap_or(ck.config.io.eval_z_seed);
    let mut data = ck.config.data.clone();
    if let Some(p) = &args.data {
        data.path = Some(p.clone());
    }
    let sets = match resolve(&data)? {
        ResolvedData::Circles => return Err(Error::Usage("eval needs --data (a set file, gen-toy directory or point-cloud tree)".into())),
        ResolvedData::Sets(path) => {
            if model.config().is_conditional() {
                return Err(Error::Usage("conditional model needs labelled point-cloud data".into()));
            }
            load_sets(&path)?
        }
        ResolvedData::Modelnet(root) => {
            let ds = PointCloudDataset::load(&root, &data.modelnet, Exec::default())?;
            ds.fixed_subsets(split, args.size, seed, model.config().is_conditional())?
        }
    };
    check_entity_dim(model.entity_dim(), &sets)?;
    let summary = reported_per_entity_ll(&model, &store, &sets, seed, Exec::default())?;
    let report = EvalReport { step: ck.step, summary };
    if let Some(out) = &args.out {
        std::fs::write(out, report.csv()).map_err(io_err(out))?;
    }
    log::info!(
        "per-entity log-likelihood {:.4} +/- {:.4} over {} sets (z seed {seed})",
        report.summary.mean,
        report.summary.two_sem,
        report.summary.per_set.len()
    );
    Ok(report)
}

// ----------------------------------------------------------------- sample

fn check_label(model: &SetFlowModel, label: Option<usize>) -> Result<()> {
    let cfg = model.config();
    match (cfg.is_conditional(), label) {
        (true, None) => Err(Error::Usage("conditional model needs --label".into())),
        (false, Some(_)) => Err(Error::Usage("model is not conditional; drop --label".into())),
        (true, Some(c)) if c >= cfg.num_classes => Err(Error::Usage(format!("label {c} outside 0..{}", cfg.num_classes))),
        _ => Ok(()),
    }
}

/// Set `i` draws its noise from stream `i` of the seeded generator.
pub fn sample_sets(
    model: &SetFlowModel,
    store: &ParamStore,
    size: usize,
    count: usize,
    label: Option<usize>,
    seed: u64,
) -> Result<Vec<Tensor>> {
    Exec::default()
        .map_range(count, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            model.sample(store, size, label, &mut rng).map(|s| s.entities)
        })
        .into_iter()
        .collect()
}

fn write_sets_csv(path: &Path, header_prefix: &str, rows: impl Iterator<Item = (String, Tensor)>, d: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let coords: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    writeln!(w, "{header_prefix},entity_id,{}", coords.join(",")).map_err(io_err(path))?;
    for (key, set) in rows {
        for i in 0..set.rows() {
            let vals: Vec<String> = set.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{key},{i},{}", vals.join(",")).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilesReport {
    pub what: String,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for FilesReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.files.iter().map(|p| p.display().to_string()).collect();
        writeln!(f, "{} -> {}", self.what, names.join(", "))
    }
}

pub fn sample(args: &SampleArgs) -> Result<FilesReport> {
    if args.size == 0 {
        return Err(Error::Usage("--size must be >= 1".into()));
    }
    let csv = csv_sibling(&args.out)?;
    let (_, model, store) = load_model(&args.ckpt)?;
    check_label(&model, args.label)?;
    let sets = sample_sets(&model, &store, args.size, args.count, args.label, args.seed)?;
    let stacked = if sets.is_empty() {
        Tensor::zeros(&[0, args.size, model.entity_dim()])
    } else {
        stack_sets(&sets)?
    };
    save_tensor(&args.out, &stacked)?;
    write_sets_csv(&csv, "set_id", sets.into_iter().enumerate().map(|(i, s)| (i.to_string(), s)), model.entity_dim())?;
    Ok(FilesReport {
        what: format!("{} sets of {} entities", args.count, args.size),
        files: vec![args.out.clone(), csv],
    })
}

// ------------------------------------------------------------ interpolate

fn load_one_set(path: &Path) -> Result<Tensor> {
    let mut sets = load_sets(path)?;
    if sets.len() != 1 {
        return Err(Error::Usage(format!("{} holds {} sets, expected one", path.display(), sets.len())));
    }
    Ok(sets.remove(0).entities)
}

/// Frames at `t = 0, 1/m, ..., 1`.
pub fn interpolate_frames(
    model: &SetFlowModel,
    store: &ParamStore,
    a: &EntitySet,
    b: &EntitySet,
    steps: usize,
) -> Result<Vec<EntitySet>> {
    if steps == 0 {
        return Err(Error::Usage("--steps must be >= 1".into()));
    }
    (0..=steps)
        .map(|k| model.interpolate(store, a, b, k as f64 / steps as f64, InterpolationLabel::Nearest))
        .collect()
}

pub fn interpolate(args: &InterpolateArgs) -> Result<FilesReport> {
    let csv = csv_sibling(&args.out)?;
    let (_, model, store) = load_model(&args.ckpt)?;
    check_label(&model, args.label_a)?;
    check_label(&model, args.label_b)?;
    let (ea, eb) = (load_one_set(&args.a)?, load_one_set(&args.b)?);
    if ea.shape() != eb.shape() {
        return Err(Error::Usage(format!("sets differ in shape: {:?} vs {:?}", ea.shape(), eb.shape())));
    }
    if ea.cols() != model.entity_dim() {
        return Err(Error::Usage(format!("model expects {}-dimensional entities, sets have {}", model.entity_dim(), ea.cols())));
    }
    let g = model.global_dim();
    let a = EntitySet {
        entities: ea,
        global: z_for_set(g, args.seed, 0),
        label: args.label_a,
    };
    let b = EntitySet {
        entities: eb,
        global: z_for_set(g, args.seed, 1),
        label: args.label_b,
    };
    let frames = interpolate_frames(&model, &store, &a, &b, args.steps)?;
    let sets: Vec<Tensor> = frames.into_iter().map(|f| f.entities).collect();
    save_tensor(&args.out, &stack_sets(&sets)?)?;
    let m = args.steps as f64;
    write_sets_csv(
        &csv,
        "frame,t",
        sets.into_iter().enumerate().map(|(k, s)| (format!("{k},{}", k as f64 / m), s)),
        model.entity_dim(),
    )?;
    Ok(FilesReport {
        what: format!("{} interpolation frames", args.steps + 1),
        files: vec![args.out.clone(), csv],
    })
}

// --------------------------------------------------------- analyze-phases

/// Peak detection thresholds for aligned-phase histograms.
pub const PEAK_MIN_FRACTION: f64 = 0.3;
pub const PEAK_MIN_SEPARATION: f64 = 0.6;
pub const RADIUS_RANGE: (f64, f64) = (0.0, 6.0);
pub const RADIUS_BINS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseReport {
    pub sets: usize,
    pub failed_fits: usize,
    pub phase: Histogram,
    pub radius: Histogram,
    pub peaks: Vec<f64>,
    pub spacings: Vec<f64>,
}

impl PhaseReport {
    pub fn from_sets(sets: &[Tensor], bins: usize) -> Self {
        let (phase, failed_fits) = phase_histogram(sets, bins, true);
        let (radius, _) = radius_histogram(sets, RADIUS_RANGE.0, RADIUS_RANGE.1, RADIUS_BINS);
        let peaks = phase.circular_peaks(PEAK_MIN_FRACTION, PEAK_MIN_SEPARATION);
        let spacings = circular_spacings(&peaks, 2.0 * PI);
        Self {
            sets: sets.len(),
            failed_fits,
            phase,
            radius,
            peaks,
            spacings,
        }
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{HISTOGRAM_HEADER}\n");
        for (name, h) in [("phase", &self.phase), ("radius", &self.radius)] {
            for (i, c) in h.counts.iter().enumerate() {
                s.push_str(&format!("{name},{i},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
            }
        }
        s
    }
}

impl fmt::Display for PhaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",");
        writeln!(f, "sets={} failed_fits={}", self.sets, self.failed_fits)?;
        writeln!(f, "peaks={}", join(&self.peaks))?;
        writeln!(f, "spacings={}", join(&self.spacings))?;
        writeln!(f, "radius_mode={:.4}", self.radius.mode())
    }
}

pub fn analyze_phases(args: &AnalyzeArgs) -> Result<PhaseReport> {
    if args.size < 3 || args.bins < 3 {
        return Err(Error::Usage("--size and --bins must be >= 3".into()));
    }
    let sets = if args.ckpt == "none" {
        if args.label.is_some() {
            return Err(Error::Usage("--label needs a checkpoint".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        (0..args.sets)
            .map(|_| Ok(gen_circle_set(args.size, CircleNoise::default(), &mut rng)?.0))
            .collect::<Result<Vec<_>>>()?
    } else {
        let (_, model, store) = load_model(Path::new(&args.ckpt))?;
        if model.entity_dim() != 2 {
            return Err(Error::Usage(format!("phase analysis needs a 2D model, checkpoint has D = {}", model.entity_dim())));
        }
        check_label(&model, args.label)?;
        sample_sets(&model, &store, args.size, args.sets, args.label, args.seed)?
    };
    let report = PhaseReport::from_sets(&sets, args.bins);
    std::fs::write(&args.out, report.csv()).map_err(io_err(&args.out))?;
    Ok(report)
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "setflow", version, about = "Set flow training, evaluation, sampling and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate circle sets with ground-truth specs.
    GenToy(GenToyArgs),
    /// Train a model, checkpointing into the output directory.
    Train(TrainArgs),
    /// Mean per-entity log-likelihood with two standard errors.
    Eval(EvalArgs),
    /// Draw sets from a model.
    Sample(SampleArgs),
    /// Interpolate between two sets in noise space.
    Interpolate(InterpolateArgs),
    /// Circle-fit phase and radius histograms of sampled sets.
    AnalyzePhases(AnalyzeArgs),
}

/// Inclusive `a..b` (or `a..=b`) range of set sizes.
pub fn parse_size_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: usize = a.trim().parse().map_err(|e| format!("range start: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("range end: {e}"))?;
    Ok((a, b))
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub sets: usize,
    /// Inclusive size range, e.g. 3..6.
    #[arg(long, default_value = "3..6", value_parser = parse_size_range)]
    pub size_range: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (manifest.jsonl and points.cloud).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub radial_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    pub phase_sd: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config; toy defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data; overrides data.path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory; defaults to io.checkpoint_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Config override, `dotted.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to the checkpoint's data.path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train or test (point-cloud trees only).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// z seed (and subset seed); defaults to the checkpoint's io.eval_z_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entities per evaluation subset (point-cloud trees only).
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Also write the CSV row here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cloud file `[count, size, D]`; a CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Cloud file holding one `[s, D]` set.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub label_a: Option<usize>,
    #[arg(long)]
    pub label_b: Option<usize>,
    #[arg(long)]
    pub steps: usize,
    /// Seed of the global vectors paired with the two sets.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Cloud file `[steps + 1, s, D]`; a CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint, or `none` for the ground-truth generator.
    #[arg(long)]
    pub ckpt: String,
    #[arg(long, default_value_t = 3)]
    pub size: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sets: usize,
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 72)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

//! Run configuration: a TOML file (nested tables or flat dotted keys),
//! followed by `key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setflow::data::{CircleNoise, DatasetOptions};
use setflow::model::{ModelConfig, TrainConfig, DEFAULT_EVAL_Z_SEED};
use setflow::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// No path: stream circle sets. A `.cloud` file or a `gen-toy` output
    /// directory: fixed sets. Any other directory: a ModelNet-style tree.
    #[default]
    Auto,
    Circles,
    Sets,
    Modelnet,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Feed class labels to a conditional model.
    pub labels: bool,
    pub noise: CircleNoise,
    pub modelnet: DatasetOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Steps between checkpoints and progress lines.
    pub log_interval: u64,
    pub eval_z_seed: u64,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            checkpoint_dir: None,
            log_interval: 500,
            eval_z_seed: DEFAULT_EVAL_Z_SEED,
        }
    }
}

/// Everything a training run depends on. Defaults are the 2D toy setup.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub io: IoConfig,
}

/// Keys that may change between a checkpoint and the run resuming from it.
pub const RESUMABLE_KEYS: &[&str] = &["train.steps", "io."];

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.io.log_interval == 0 {
            return Err(Error::Usage("io.log_interval must be >= 1".into()));
        }
        let n = self.data.noise;
        if !(n.radial_sd >= 0.0 && n.phase_sd >= 0.0) {
            return Err(Error::Usage(format!("noise deviations must be >= 0, got {n:?}")));
        }
        if self.data.labels != self.model.is_conditional() {
            return Err(Error::Usage(format!(
                "data.labels = {} but the model is {}conditional",
                self.data.labels,
                if self.model.is_conditional() { "" } else { "not " }
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Flattened `dotted.key -> value` view.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let value = toml::Value::try_from(self).expect("run config serializes to TOML");
        let mut out = BTreeMap::new();
        flatten_into("", &value, &mut out);
        out
    }

    /// Keys whose values differ, as `key: ours -> theirs` lines, skipping
    /// keys that start with any of `ignore`.
    pub fn diff(&self, other: &RunConfig, ignore: &[&str]) -> Vec<String> {
        let (a, b) = (self.flatten(), other.flatten());
        let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        let missing = "<unset>".to_string();
        keys.into_iter()
            .filter(|k| !ignore.iter().any(|p| k.starts_with(p)))
            .filter_map(|k| {
                let (x, y) = (a.get(k).unwrap_or(&missing), b.get(k).unwrap_or(&missing));
                (x != y).then(|| format!("{k}: {x} -> {y}"))
            })
            .collect()
    }
}

fn flatten_into(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as a TOML
/// value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let slot = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match slot {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Usage(format!("override `{key}`: `{p}` is not a table"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_toy_defaults() {
        let cfg = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model, ModelConfig::toy());
        assert_eq!(cfg.train.set_sizes, vec![3, 4, 5, 6]);
        assert_eq!(cfg.io.eval_z_seed, 42);
    }

    #[test]
    fn shipped_configs_parse() {
        let toy = RunConfig::from_toml(include_str!("../../../configs/toy.toml"), &[]).unwrap();
        assert_eq!(toy.model, ModelConfig::toy());
        let air = RunConfig::from_toml(include_str!("../../../configs/airplane.toml"), &[]).unwrap();
        assert_eq!(air.model, ModelConfig::point_cloud());
        assert_eq!(air.data.source, DataSource::Modelnet);
        air.validate().unwrap();
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let flat = "model.stacks = 3\ntrain.lr = 1e-3\ndata.noise.phase_sd = 0.5\n";
        let nested = "[model]\nstacks = 3\n[train]\nlr = 1e-3\n[data.noise]\nphase_sd = 0.5\n";
        let a = RunConfig::from_toml(flat, &[]).unwrap();
        assert_eq!(a, RunConfig::from_toml(nested, &[]).unwrap());
        assert_eq!(a.model.stacks, 3);
        assert_eq!(a.data.noise.radial_sd, 0.1);
    }

    #[test]
    fn overrides_win_over_file() {
        let cfg = RunConfig::from_toml(
            "train.steps = 10",
            &["train.steps=20".into(), "train.set_sizes=[5]".into(), "data.path=some/dir".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 20);
        assert_eq!(cfg.train.set_sizes, vec![5]);
        assert_eq!(cfg.data.path.as_deref(), Some(Path::new("some/dir")));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        for bad in ["train.lr = -1.0", "model.global_dim = 0", "train.set_sizes = []", "nonsense = 1", "data.labels = true"] {
            assert!(matches!(RunConfig::from_toml(bad, &[]), Err(Error::Usage(_))), "{bad}");
        }
        assert!(RunConfig::from_toml("", &["novalue".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig::point_cloud_labeled(40);
        cfg.data.labels = true;
        cfg.data.path = Some("x/y".into());
        cfg.data.modelnet.classes = vec!["airplane".into()];
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn diff_lists_changed_keys() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.steps = 7;
        b.train.lr = 1e-3;
        b.io.log_interval = 3;
        assert_eq!(a.diff(&b, RESUMABLE_KEYS), vec!["train.lr: 0.0005 -> 0.001".to_string()]);
        assert_eq!(a.diff(&b, &[]).len(), 3);
    }
}

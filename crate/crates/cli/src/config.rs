//! Run configuration file (TOML). Relative paths resolve against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kgqa_rl::corpus::Split;
use kgqa_rl::grpo::{GrpoConfig, ToyConfig};
use kgqa_rl::rewards::RewardConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub policy: ToyConfig,
    /// Keys given here override [`GrpoConfig::toy`], not the full-scale
    /// defaults.
    #[serde(default = "GrpoConfig::toy", deserialize_with = "grpo_over_toy")]
    pub grpo: GrpoConfig,
    /// Either `preset = "<name>"` plus optional overrides, or a full inline
    /// reward configuration.
    #[serde(default, deserialize_with = "reward_over_preset")]
    pub reward: RewardConfig,
    pub run: RunSection,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn grpo_over_toy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<GrpoConfig, D::Error> {
    use serde::de::Error;
    let over = toml::Value::deserialize(d)?;
    let mut base = toml::Value::try_from(GrpoConfig::toy()).map_err(D::Error::custom)?;
    merge(&mut base, over);
    base.try_into().map_err(D::Error::custom)
}

fn reward_over_preset<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<RewardConfig, D::Error> {
    use serde::de::Error;
    let mut over = toml::Value::deserialize(d)?;
    let preset = match over.as_table_mut().and_then(|t| t.remove("preset")) {
        Some(toml::Value::String(name)) => RewardConfig::preset(&name).map_err(D::Error::custom)?,
        Some(other) => return Err(D::Error::custom(format!("reward.preset must be a string, got {other}"))),
        None => RewardConfig::default(),
    };
    let mut base = toml::Value::try_from(preset).map_err(D::Error::custom)?;
    merge(&mut base, over);
    base.try_into().map_err(D::Error::custom)
}

/// Apply one `dotted.key=value` override. The value is read as a TOML
/// value when it parses as one and as a bare string otherwise.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key=value");
    };
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?} has an empty key segment");
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("override {spec:?}: {part} is not a table"))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .with_context(|| format!("override {spec:?}: parent is not a table"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory with `train.jsonl` / `valid.jsonl` / `test.jsonl`.
    pub dir: PathBuf,
    /// Slot-form skeletons the policy prior is estimated from.
    pub primer: PathBuf,
    #[serde(default = "default_train_split")]
    pub train_split: String,
    #[serde(default = "default_eval_split")]
    pub eval_split: String,
}

fn default_train_split() -> String {
    "train".into()
}

fn default_eval_split() -> String {
    "test".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// N-Triples file served by the embedded engine.
    pub store: Option<PathBuf>,
    /// SPARQL endpoint URL; the command-line flag and environment win.
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    /// Persistent query cache (JSON lines).
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub dir: PathBuf,
    /// Optimizer steps between checkpoints; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl RunConfig {
    /// Read, apply `key=value` overrides, resolve paths and validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut raw: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        for spec in overrides {
            apply_override(&mut raw, spec)?;
        }
        let mut config: RunConfig = raw.try_into().with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.dir);
        fix(&mut self.data.primer);
        fix(&mut self.run.dir);
        if let Some(p) = self.backend.store.as_mut() {
            fix(p);
        }
        if let Some(p) = self.backend.cache.as_mut() {
            fix(p);
        }
    }

    /// Every check that does not touch the filesystem or network.
    pub fn validate(&self) -> Result<()> {
        self.train_split()?;
        self.eval_split()?;
        self.reward.validate()?;
        if self.backend.store.is_some() && self.backend.endpoint.is_some() {
            bail!("set only one of backend.store and backend.endpoint");
        }
        if let Err(e) = self.grpo.validate() {
            bail!("grpo: {e}");
        }
        if self.policy.order == 0 || self.policy.order > 3 {
            bail!("policy.order must be 1, 2 or 3 (got {})", self.policy.order);
        }
        if self.policy.n_features == 0 || self.policy.n_positions == 0 {
            bail!("policy.n_features and policy.n_positions must be positive");
        }
        if self.policy.smoothing.is_nan() || self.policy.smoothing <= 0.0 {
            bail!("policy.smoothing must be positive");
        }
        if self.grpo.max_steps.is_none() && self.grpo.epochs == 0 {
            bail!("grpo.epochs must be positive");
        }
        Ok(())
    }

    pub fn train_split(&self) -> Result<Split> {
        self.data.train_split.parse().map_err(anyhow::Error::msg)
    }

    pub fn eval_split(&self) -> Result<Split> {
        self.data.eval_split.parse().map_err(anyhow::Error::msg)
    }
}

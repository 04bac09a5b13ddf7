use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pgan::corpus::TripleOptions;
use pgan::discriminators::R2Sign;
use pgan::numerics::OptimizerState;
use pgan::seq2seq::ModelConfig;
use pgan::trainer::{AdversarialConfig, CurriculumSchedule, Mode, RewardConfig, ScheduleConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw dialogue files, one dialogue per line.
    pub raw_train: Option<PathBuf>,
    pub raw_valid: Option<PathBuf>,
    pub raw_test: Option<PathBuf>,
    /// Triple files written by `prepare-data` and read by everything else.
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            raw_train: None,
            raw_valid: None,
            raw_test: None,
            train: None,
            valid: None,
            test: None,
            vocab: None,
            embeddings: None,
            stopwords: None,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_decode_len: usize,
    pub init_sigma: f64,
    pub gen_epochs: usize,
    pub disc_epochs: usize,
    /// Adversarial checkpoints are written after every this many cycles.
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 256,
            max_decode_len: 40,
            init_sigma: 0.01,
            gen_epochs: 10,
            disc_epochs: 2,
            checkpoint_every: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub mode: Mode,
    pub r2_sign: R2Sign,
    pub precision: Precision,
    pub paths: Paths,
    pub triples: TripleOptions,
    pub model: ModelConfig,
    pub optim: OptimizerState,
    pub train: TrainSettings,
    pub reward: RewardConfig,
    pub schedule: ScheduleConfig,
    pub curriculum: CurriculumSchedule,
}

/// Insert `value` under a dotted key, creating intermediate objects.
fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed config key {key:?}");
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = root;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| anyhow!("config key {key:?} conflicts with a scalar at {p:?}"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// `KEY=VALUE`; VALUE is read as JSON when it parses, as a string otherwise.
fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override {s:?} is not KEY=VALUE"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl Config {
    /// Read a flat dotted-key JSON object, apply overrides, and validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let flat: Map<String, Value> = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("config {} is not a JSON object", p.display()))?
            }
            None => Map::new(),
        };
        let mut nested = Map::new();
        for (k, v) in flat {
            insert_dotted(&mut nested, &k, v)?;
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            insert_dotted(&mut nested, &k, v)?;
        }
        let cfg: Config = serde_json::from_value(Value::Object(nested)).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.adversarial().validate()?;
        if self.model.vocab_size < 5 {
            bail!("model.vocab_size must leave room for the reserved tokens");
        }
        if !(self.train.init_sigma > 0.0 && self.train.init_sigma.is_finite()) {
            bail!("train.init_sigma must be > 0");
        }
        if self.train.checkpoint_every == 0 {
            bail!("train.checkpoint_every must be >= 1");
        }
        if self.triples.window == 0 || self.triples.resp_min > self.triples.resp_max {
            bail!("triples.window must be >= 1 and triples.resp_min <= triples.resp_max");
        }
        Ok(())
    }

    pub fn adversarial(&self) -> AdversarialConfig {
        AdversarialConfig {
            mode: self.mode,
            batch_size: self.train.batch_size,
            max_decode_len: self.train.max_decode_len,
            schedule: self.schedule,
            reward: self.reward,
            curriculum: self.curriculum,
        }
    }

    /// Model shape for a vocabulary of `vocab_len` entries.
    pub fn model_for(&self, vocab_len: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab_len,
            ..self.model
        }
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.paths.checkpoint_dir.join(format!("{name}.ckpt"))
    }
}

/// A configured input path that must already exist.
pub fn input<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| anyhow!("{key} is not set"))?;
    if !p.is_file() {
        bail!("{key}: {} does not exist", p.display());
    }
    Ok(p)
}

pub fn existing(p: &Path) -> Result<&Path> {
    if !p.is_file() {
        bail!("{} does not exist", p.display());
    }
    Ok(p)
}

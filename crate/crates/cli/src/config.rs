//! Run configuration: TOML file, then command-line overrides, then checks.

use std::fmt;
use std::path::{Path, PathBuf};

use aggronet::datapipe::AugmentParams;
use aggronet::model::{BackboneSpec, HybridSpec};
use aggronet::train::{AdamConfig, Schedule, SplitCounts, TrainConfig};
use serde::{Deserialize, Serialize};

/// A configuration problem, reported with the offending field path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn field(path: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Dataset root laid out as `<root>/<class>/<image>.ppm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub split: SplitConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            out: default_out(),
            data: None,
            synth: None,
            model: ModelConfig::default(),
            train: TrainSection::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub per_class: usize,
    pub classes: usize,
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 75,
            classes: 8,
            size: 32,
        }
    }
}

/// Architecture settings. The class count comes from the dataset, so the
/// head lists only the hidden dense widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: [usize; 2],
    pub backbone_a: BackboneSpec,
    pub backbone_b: BackboneSpec,
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub freeze: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let desk = HybridSpec::default();
        Self {
            input_size: desk.input_size,
            backbone_a: desk.backbone_a,
            backbone_b: desk.backbone_b,
            hidden: desk.head[..desk.head.len() - 1].to_vec(),
            dropout_rate: desk.dropout_rate,
            freeze: desk.freeze,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, class_count: usize) -> HybridSpec {
        let mut head = self.hidden.clone();
        head.push(class_count);
        HybridSpec {
            input_size: self.input_size,
            class_count,
            backbone_a: self.backbone_a.clone(),
            backbone_b: self.backbone_b.clone(),
            head,
            dropout_rate: self.dropout_rate,
            freeze: self.freeze.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub schedule: Schedule,
    pub shuffle: bool,
    pub augment: AugmentParams,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            epochs: t.epochs,
            base_lr: t.base_lr,
            schedule: t.schedule,
            shuffle: t.shuffle,
            augment: t.augment,
            adam: t.adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<SplitCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Fractions>,
}

const DEFAULT_FRACTIONS: Fractions = Fractions {
    train: 0.7,
    val: 0.2,
    test: 0.1,
};

impl SplitConfig {
    /// Partition sizes for `n` examples. Fractions are floored for train
    /// and val; test takes the remainder.
    pub fn resolve(&self, n: usize) -> Result<SplitCounts, ConfigError> {
        if let Some(c) = self.counts {
            if c.total() != n {
                return Err(field(
                    "split.counts",
                    format!("{} + {} + {} does not match the {n} examples", c.train, c.val, c.test),
                ));
            }
            return Ok(c);
        }
        let f = self.fractions.unwrap_or(DEFAULT_FRACTIONS);
        let train = (f.train * n as f64).floor() as usize;
        let val = (f.val * n as f64).floor() as usize;
        Ok(SplitCounts {
            train,
            val,
            test: n - train - val,
        })
    }
}

/// Per-field command-line overrides; `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub image_size: Option<usize>,
    pub dropout: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.to_string().trim_end())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = &o.data {
            self.data = Some(v.clone());
            self.synth = None;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.base_lr {
            self.train.base_lr = v;
        }
        if let Some(v) = o.image_size {
            self.model.input_size = [v, v];
        }
        if let Some(v) = o.dropout {
            self.model.dropout_rate = v;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            base_lr: t.base_lr,
            schedule: t.schedule,
            seed: self.seed,
            shuffle: t.shuffle,
            augment: t.augment,
            adam: t.adam,
        }
    }

    /// Checks that need no dataset. `needs_data` is false for commands
    /// that only read a checkpoint.
    pub fn validate(&self, needs_data: bool) -> Result<(), ConfigError> {
        if needs_data {
            match (&self.data, &self.synth) {
                (None, None) => {
                    return Err(field(
                        "data",
                        "set exactly one of `data` or `[synth]` (neither is present)",
                    ))
                }
                (Some(_), Some(_)) => {
                    return Err(field(
                        "data",
                        "set exactly one of `data` or `[synth]` (both are present)",
                    ))
                }
                _ => {}
            }
        }
        if let Some(s) = &self.synth {
            if !(1..=8).contains(&s.classes) {
                return Err(field("synth.classes", format!("{} outside 1..=8", s.classes)));
            }
            if s.per_class == 0 {
                return Err(field("synth.per_class", "must be positive"));
            }
            if s.size < 8 {
                return Err(field("synth.size", format!("{} is below the 8 pixel minimum", s.size)));
            }
        }
        if let Some(f) = self.split.fractions {
            if self.split.counts.is_some() {
                return Err(field("split", "set either `counts` or `fractions`, not both"));
            }
            let parts = [("train", f.train), ("val", f.val), ("test", f.test)];
            if let Some((name, v)) = parts.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
                return Err(field(&format!("split.fractions.{name}"), format!("{v} outside [0, 1]")));
            }
            if ((f.train + f.val + f.test) - 1.0).abs() > 1e-9 {
                return Err(field("split.fractions", "must sum to 1"));
            }
        }
        self.train_config()
            .validate()
            .map_err(|e| field("train", e.to_string().trim_start_matches("invalid training config: ")))?;
        // Two classes is the smallest head the spec check accepts.
        self.model.spec(2).validate().map_err(|e| match e {
            aggronet::model::ModelError::InvalidSpec { field: f, msg } => field(&format!("model.{f}"), msg),
            other => field("model", other),
        })
    }
}

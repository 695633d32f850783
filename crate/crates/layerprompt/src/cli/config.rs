//! Experiment configuration: JSON schema, dotted-key overrides, total
//! validation.
//!
//! A config file describes one experiment end to end: data source, class
//! split, encoder geometry, optimizer, pool and importance knobs, the seed
//! list and the pipeline variant. `layerprompt run --set train.epochs=8`
//! style overrides patch the parsed JSON before deserialization, so every
//! field is overridable without editing the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::{self, Dataset, SplitSpec, SyntheticSpec, TaskStream};
use crate::error::{Error, Result};
use crate::importance::ImportanceConfig;
use crate::pool::PoolConfig;
use crate::trainer::{TrainConfig, TrainerOptions, Variant};

/// Data source: generate clustered images or read a raw-format directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Path(String),
}

/// Class split section; the class total comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    #[serde(default)]
    pub base_classes: usize,
    pub increment: usize,
}

/// Encoder section; image geometry joins in from the dataset and the prefix
/// length from the pool section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSection {
    #[serde(default = "bb_layers")]
    pub num_layers: usize,
    #[serde(default = "bb_dim")]
    pub embed_dim: usize,
    #[serde(default = "bb_heads")]
    pub num_heads: usize,
    #[serde(default = "bb_patch")]
    pub patch_side: usize,
    #[serde(default = "bb_mlp")]
    pub mlp_ratio: f64,
}

fn bb_layers() -> usize {
    BackboneConfig::default().num_layers
}
fn bb_dim() -> usize {
    BackboneConfig::default().embed_dim
}
fn bb_heads() -> usize {
    BackboneConfig::default().num_heads
}
fn bb_patch() -> usize {
    BackboneConfig::default().patch_side
}
fn bb_mlp() -> f64 {
    BackboneConfig::default().mlp_ratio
}

impl Default for BackboneSection {
    fn default() -> Self {
        let full = BackboneConfig::default();
        BackboneSection {
            num_layers: full.num_layers,
            embed_dim: full.embed_dim,
            num_heads: full.num_heads,
            patch_side: full.patch_side,
            mlp_ratio: full.mlp_ratio,
        }
    }
}

/// Pool section: capacity/reuse plus the prefix length shared with the
/// encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSection {
    #[serde(default = "pool_capacity")]
    pub capacity: usize,
    #[serde(default = "pool_reuse")]
    pub reuse: usize,
    #[serde(default = "pool_prefix_len")]
    pub prefix_len: usize,
}

fn pool_capacity() -> usize {
    PoolConfig::default().capacity
}
fn pool_reuse() -> usize {
    PoolConfig::default().reuse
}
fn pool_prefix_len() -> usize {
    4
}

impl Default for PoolSection {
    fn default() -> Self {
        let pool = PoolConfig::default();
        PoolSection {
            capacity: pool.capacity,
            reuse: pool.reuse,
            prefix_len: 4,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1993]
}

fn default_variant() -> usize {
    4
}

fn default_output_dir() -> String {
    "runs/out".into()
}

/// The full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub split: SplitSection,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pool: PoolSection,
    #[serde(default)]
    pub importance: ImportanceConfig,
    /// Multi-seed protocol; {1991, 1993, 1995} is the conventional triple.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Pipeline variant 1..=4 (see [`Variant`]).
    #[serde(default = "default_variant")]
    pub variant: usize,
    #[serde(default)]
    pub forced_layers: Option<Vec<usize>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

impl RunConfig {
    /// Parse a JSON config file, applying `key.path=value` overrides before
    /// deserialization.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, overrides)
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Collect every invalid field in one pass; nothing runs if this fails.
    pub fn validate(&self) -> Result<()> {
        fn sub(faults: &mut Vec<String>, result: Result<()>) {
            if let Err(Error::Config(mut inner)) = result {
                faults.append(&mut inner);
            }
        }
        let mut faults = Vec::new();
        sub(&mut faults, self.train.validate());
        sub(&mut faults, self.pool_config().validate());
        sub(&mut faults, self.importance.validate());

        if self.seeds.is_empty() {
            faults.push("seeds must list at least one seed".into());
        }
        if !(1..=4).contains(&self.variant) {
            faults.push(format!("variant must be 1..=4, got {}", self.variant));
        }
        if let Some(layers) = &self.forced_layers {
            if layers.is_empty() {
                faults.push("forced_layers, when present, must not be empty".into());
            }
            if layers.iter().any(|&l| l >= self.backbone.num_layers) {
                faults.push(format!(
                    "forced_layers {:?} out of range for {} layers",
                    layers, self.backbone.num_layers
                ));
            }
        }
        if self.output_dir.is_empty() {
            faults.push("output_dir must not be empty".into());
        }

        match &self.dataset {
            DatasetConfig::Synthetic(spec) => {
                sub(&mut faults, spec.validate());
                // cross-field checks that need the dataset geometry
                sub(
                    &mut faults,
                    self.backbone_config(spec.image_side, spec.channels)
                        .validate(),
                );
                sub(
                    &mut faults,
                    self.split_spec(spec.classes, self.seeds.first().copied().unwrap_or(0))
                        .validate(),
                );
            }
            DatasetConfig::Path(path) => {
                if path.is_empty() {
                    faults.push("dataset.path must not be empty".into());
                }
                // geometry and class count are checked after loading
            }
        }

        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }

    pub fn backbone_config(&self, image_side: usize, channels: usize) -> BackboneConfig {
        BackboneConfig {
            num_layers: self.backbone.num_layers,
            embed_dim: self.backbone.embed_dim,
            num_heads: self.backbone.num_heads,
            image_side,
            patch_side: self.backbone.patch_side,
            channels,
            prefix_len: self.pool.prefix_len,
            mlp_ratio: self.backbone.mlp_ratio,
        }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            capacity: self.pool.capacity,
            reuse: self.pool.reuse,
        }
    }

    pub fn split_spec(&self, total_classes: usize, seed: u64) -> SplitSpec {
        SplitSpec {
            total_classes,
            base_classes: self.split.base_classes,
            increment: self.split.increment,
            seed,
        }
    }

    pub fn trainer_options(&self, seed: u64) -> Result<TrainerOptions> {
        Ok(TrainerOptions {
            train: self.train.clone(),
            pool: self.pool_config(),
            importance: self.importance.clone(),
            variant: Variant::from_index(self.variant)?,
            forced_layers: self.forced_layers.clone(),
            seed,
        })
    }

    /// Materialize the datasets and split them into the per-seed task stream.
    /// The split permutation is seeded by the run seed; synthetic data keeps
    /// its own seed so all runs of a multi-seed experiment share one dataset.
    pub fn prepare_stream(&self, seed: u64) -> Result<(TaskStream, BackboneConfig)> {
        let (train, test): (Dataset, Dataset) = match &self.dataset {
            DatasetConfig::Synthetic(spec) => data::generate_synthetic(spec)?,
            DatasetConfig::Path(path) => {
                let root = Path::new(path);
                let train = data::load_image_dataset(&root.join("train"))?;
                let test = data::load_image_dataset(&root.join("test"))?;
                (train, test)
            }
        };
        let total = train.num_classes().max(test.num_classes());
        let split = self.split_spec(total, seed);
        split.validate()?;
        let backbone = self.backbone_config(train.image_side, train.channels);
        backbone.validate()?;
        let stream = TaskStream::build(&train, &test, &split)?;
        Ok((stream, backbone))
    }
}

/// Apply one `dotted.path=value` override to a JSON tree. The value parses
/// as JSON when possible (numbers, booleans, arrays) and falls back to a
/// plain string.
fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        Error::Config(vec![format!(
            "override '{item}' must look like key.path=value"
        )])
    })?;
    if path.is_empty() {
        return Err(Error::Config(vec![format!(
            "override '{item}' has an empty key"
        )]));
    }
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !node.is_object() {
            return Err(Error::Config(vec![format!(
                "override '{item}': '{}' is not an object",
                segments[..i].join(".")
            )]));
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("segments is never empty")
}

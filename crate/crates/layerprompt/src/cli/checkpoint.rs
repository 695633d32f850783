//! Versioned checkpoint container with integrity checking.
//!
//! Layout: one JSON header line `{"magic":"LPCK","version":..,"checksum":..,
//! "payload_bytes":..}` followed by the JSON payload. The checksum is
//! FNV-1a 64 over the payload bytes, so truncation and tampering are both
//! detected before the payload is parsed. Tensor values are stored as f64,
//! which round-trips `f32` model state exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::pool::{GlobalPool, PromptEntry};
use crate::tensor::{Scalar, Tensor};
use crate::trainer::Trainer;

use super::config::RunConfig;
use super::report::{SeedReport, TaskRecord};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "LPCK";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1_0000_0000_01b3);
    }
    hash
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    checksum: String,
    payload_bytes: usize,
}

/// Dense tensor snapshot; values widened to f64 (exact for f32 state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorDto {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorDto {
    pub fn from_tensor<F: Scalar>(tensor: &Tensor<F>) -> TensorDto {
        TensorDto {
            shape: tensor.shape(),
            values: tensor.to_f64_vec(),
        }
    }

    pub fn to_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        Tensor::from_f64s(&self.shape, &self.values)
    }
}

/// One pool entry with its lifecycle flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDto {
    pub layer_id: usize,
    pub task_id: usize,
    pub frozen: bool,
    pub trainable: bool,
    pub key: TensorDto,
    pub p_k: TensorDto,
    pub p_v: TensorDto,
}

/// Trainer tensors plus the stream cursor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub backbone: Vec<TensorDto>,
    pub classifier: TensorDto,
    pub pool_entries: Vec<EntryDto>,
    pub seen_classes: usize,
    pub tasks_done: usize,
}

impl ModelState {
    pub fn capture<F: Scalar>(trainer: &Trainer<F>) -> ModelState {
        let backbone = trainer
            .backbone()
            .parameters()
            .iter()
            .map(TensorDto::from_tensor)
            .collect();
        let pool_entries = trainer
            .global_pool()
            .iter_entries()
            .map(|e| EntryDto {
                layer_id: e.layer_id,
                task_id: e.task_id,
                frozen: e.frozen,
                trainable: e.p_k.requires_grad(),
                key: TensorDto::from_tensor(&e.key),
                p_k: TensorDto::from_tensor(&e.p_k),
                p_v: TensorDto::from_tensor(&e.p_v),
            })
            .collect();
        ModelState {
            backbone,
            classifier: TensorDto::from_tensor(&trainer.classifier()),
            pool_entries,
            seen_classes: trainer.seen_classes(),
            tasks_done: trainer.tasks_done(),
        }
    }

    pub fn rebuild_pool<F: Scalar>(&self) -> Result<GlobalPool<F>> {
        let mut pool = GlobalPool::new();
        for dto in &self.pool_entries {
            let p_k: Tensor<F> = dto.p_k.to_tensor()?;
            let p_v: Tensor<F> = dto.p_v.to_tensor()?;
            p_k.set_requires_grad(dto.trainable);
            p_v.set_requires_grad(dto.trainable);
            pool.append(PromptEntry {
                key: dto.key.to_tensor()?,
                p_k,
                p_v,
                frozen: dto.frozen,
                task_id: dto.task_id,
                layer_id: dto.layer_id,
            });
        }
        Ok(pool)
    }

    pub fn restore_trainer<F: Scalar>(
        &self,
        backbone_config: BackboneConfig,
        config: &RunConfig,
        seed: u64,
    ) -> Result<Trainer<F>> {
        let backbone_values: Vec<Vec<f64>> =
            self.backbone.iter().map(|t| t.values.clone()).collect();
        let classifier: Tensor<F> = self.classifier.to_tensor()?;
        let classifier = classifier.with_grad();
        Trainer::from_parts(
            backbone_config,
            config.trainer_options(seed)?,
            &backbone_values,
            classifier,
            self.rebuild_pool()?,
            self.seen_classes,
            self.tasks_done,
        )
    }
}

/// Whole-run checkpoint: finished seeds, the in-progress seed's partial
/// records, and the model state to resume from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub config: RunConfig,
    /// Index into `config.seeds` of the seed in progress.
    pub seed_index: usize,
    pub finished: Vec<SeedReport>,
    /// Accuracy rows recorded so far for the in-progress seed.
    pub partial_rows: Vec<Vec<f64>>,
    pub partial_tasks: Vec<TaskRecord>,
    pub model: ModelState,
}

/// Serialize, checksum and write a checkpoint.
pub fn save(path: &Path, state: &CheckpointState) -> Result<()> {
    let payload =
        serde_json::to_vec(state).map_err(|e| Error::Parse(format!("checkpoint encode: {e}")))?;
    let header = Header {
        magic: MAGIC.into(),
        version: FORMAT_VERSION,
        checksum: format!("{:016x}", fnv1a64(&payload)),
        payload_bytes: payload.len(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serialization cannot fail");
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read, verify (version then checksum) and parse a checkpoint.
pub fn load(path: &Path) -> Result<CheckpointState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("checkpoint has no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Integrity(format!(
            "not a checkpoint file (magic {:?})",
            header.magic
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[newline + 1..];
    if payload.len() != header.payload_bytes {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let checksum = format!("{:016x}", fnv1a64(payload));
    if checksum != header.checksum {
        return Err(Error::Integrity(format!(
            "checksum mismatch: stored {}, computed {checksum}",
            header.checksum
        )));
    }
    serde_json::from_slice(payload).map_err(|e| Error::Parse(format!("checkpoint payload: {e}")))
}

/// One-paragraph description for `layerprompt checkpoint`.
pub fn describe(state: &CheckpointState) -> String {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for entry in &state.model.pool_entries {
        *sizes.entry(entry.layer_id).or_insert(0) += 1;
    }
    let seed = state
        .config
        .seeds
        .get(state.seed_index)
        .map(|s| s.to_string())
        .unwrap_or_else(|| "<out of range>".into());
    format!(
        "format v{FORMAT_VERSION}: seed {seed} ({}/{} seeds finished), {} tasks done, \
         {} classes seen, pool sizes {:?}",
        state.finished.len(),
        state.config.seeds.len(),
        state.model.tasks_done,
        state.model.seen_classes,
        sizes
    )
}

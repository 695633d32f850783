//! Per-task training pipeline and class-incremental evaluation.
//!
//! For each task, in order: score layers on promptless forward passes,
//! assemble the training pool at the selected layers, widen the classifier
//! for the new classes, optimize fresh prompts plus classifier with
//! cross-entropy over all classes seen so far, then finalize the pool
//! (keys, freezing, global expansion). The encoder never trains.
//!
//! Evaluation is class-incremental: predictions argmax over every class seen
//! so far with no task oracle, and prompts are chosen per sample by the
//! two-pass retrieval in [`crate::pool::query_inference`].

use std::collections::BTreeMap;

use crate::backbone::{Backbone, BackboneConfig, PrefixSet};
use crate::data::TaskData;
use crate::error::{Error, Result};
use crate::importance::{self, ImportanceConfig, ImportanceReport};
use crate::pool::{
    build_training_pool, finalize_task, merge_prompts, query_inference, GlobalPool, MergeMode,
    PoolConfig, TrainingPool,
};
use crate::rng::{Rng, Stream};
use crate::tensor::{argmax, sgd_step, Scalar, Tape, Tensor};

/// Optimizer settings. The protocol defaults are lr 0.001 / weight decay
/// 0.005 / batch 24; epochs default to the desk-scale 5 (the 20-epoch
/// protocol value is one config line away).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_lr() -> f64 {
    0.001
}
fn default_weight_decay() -> f64 {
    0.005
}
fn default_epochs() -> usize {
    5
}
fn default_batch_size() -> usize {
    24
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.lr.is_nan() || self.lr <= 0.0 {
            faults.push("train.lr must be positive".into());
        }
        if self.weight_decay < 0.0 {
            faults.push("train.weight_decay must be nonnegative".into());
        }
        if self.epochs == 0 {
            faults.push("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            faults.push("train.batch_size must be at least 1".into());
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }
}

/// Pipeline variants: the full method plus the three ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One fixed prompt pool, always trainable, never expanded or frozen.
    SinglePool,
    /// Dual pools with expansion, but stored prompts stay trainable.
    NoFreeze,
    /// Full method with prompts forced into every layer.
    AllLayers,
    /// The complete pipeline.
    Full,
}

impl Variant {
    pub fn from_index(index: usize) -> Result<Variant> {
        match index {
            1 => Ok(Variant::SinglePool),
            2 => Ok(Variant::NoFreeze),
            3 => Ok(Variant::AllLayers),
            4 => Ok(Variant::Full),
            other => Err(Error::Config(vec![format!(
                "variant must be 1..=4, got {other}"
            )])),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Variant::SinglePool => 1,
            Variant::NoFreeze => 2,
            Variant::AllLayers => 3,
            Variant::Full => 4,
        }
    }
}

/// Everything the trainer needs besides the stream itself.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainerOptions {
    pub train: TrainConfig,
    pub pool: PoolConfig,
    pub importance: ImportanceConfig,
    pub variant: Variant,
    /// Override layer selection (experiment knob; the all-layers variant
    /// wins over it). Indices must be valid for the encoder.
    pub forced_layers: Option<Vec<usize>>,
    pub seed: u64,
}

impl TrainerOptions {
    pub fn new(seed: u64) -> Self {
        TrainerOptions {
            train: TrainConfig::default(),
            pool: PoolConfig::default(),
            importance: ImportanceConfig::default(),
            variant: Variant::Full,
            forced_layers: None,
            seed,
        }
    }
}

/// Outcome of one task: the importance report (with the selection that was
/// actually used), per-epoch mean loss, and the global pool footprint after
/// finalization.
#[derive(Debug, Clone)]
pub struct TaskSession {
    pub task_id: usize,
    pub importance: ImportanceReport,
    pub class_offset: usize,
    pub class_count: usize,
    pub loss_history: Vec<f64>,
    /// Global pool entry count per layer after this task.
    pub pool_sizes: BTreeMap<usize, usize>,
}

/// Class-incremental learner: frozen encoder, growing classifier, dual
/// prompt pools.
pub struct Trainer<F: Scalar> {
    backbone: Backbone<F>,
    classifier: Tensor<F>,
    global_pool: GlobalPool<F>,
    options: TrainerOptions,
    seen_classes: usize,
    tasks_done: usize,
    /// The single-pool ablation trains these same entries every task.
    persistent_pool: Option<TrainingPool<F>>,
}

/// Widen a `[dim x old]` classifier to `[dim x (old + new_classes)]`,
/// preserving existing columns bit-exactly and drawing the new columns from
/// a small seeded normal. Trainability carries over from the input.
pub fn expand_classifier<F: Scalar>(
    classifier: &Tensor<F>,
    new_classes: usize,
    seed: u64,
    task_id: usize,
) -> Result<Tensor<F>> {
    if new_classes == 0 {
        return Err(Error::contract(
            "expand_classifier: new_classes must be at least 1",
        ));
    }
    let (dim, old) = classifier.dims2()?;
    let mut rng = Rng::derive(seed, Stream::ClassifierInit, task_id as u64);
    let old_data = classifier.to_vec();
    let total = old + new_classes;
    let mut data = Vec::with_capacity(dim * total);
    for row in 0..dim {
        data.extend_from_slice(&old_data[row * old..(row + 1) * old]);
        data.extend((0..new_classes).map(|_| F::from_f64(rng.normal() * 0.02)));
    }
    let expanded = Tensor::from_vec(&[dim, total], data)?;
    expanded.set_requires_grad(classifier.requires_grad());
    Ok(expanded)
}

impl<F: Scalar> Trainer<F> {
    pub fn new(backbone_config: BackboneConfig, options: TrainerOptions) -> Result<Self> {
        options.train.validate()?;
        options.pool.validate()?;
        options.importance.validate()?;
        if let Some(layers) = &options.forced_layers {
            if layers.is_empty() {
                return Err(Error::Config(
                    vec!["forced_layers must not be empty".into()],
                ));
            }
            if layers.iter().any(|&l| l >= backbone_config.num_layers) {
                return Err(Error::Config(vec![format!(
                    "forced_layers {:?} out of range for {} layers",
                    layers, backbone_config.num_layers
                )]));
            }
        }
        let backbone = Backbone::seeded(backbone_config, options.seed)?;
        let dim = backbone.config().embed_dim;
        Ok(Trainer {
            backbone,
            classifier: Tensor::zeros(&[dim, 0]).with_grad(),
            global_pool: GlobalPool::new(),
            options,
            seen_classes: 0,
            tasks_done: 0,
            persistent_pool: None,
        })
    }

    pub fn backbone(&self) -> &Backbone<F> {
        &self.backbone
    }

    pub fn classifier(&self) -> Tensor<F> {
        self.classifier.clone()
    }

    pub fn global_pool(&self) -> &GlobalPool<F> {
        &self.global_pool
    }

    pub fn options(&self) -> &TrainerOptions {
        &self.options
    }

    pub fn seen_classes(&self) -> usize {
        self.seen_classes
    }

    pub fn tasks_done(&self) -> usize {
        self.tasks_done
    }

    /// Reassemble a trainer from checkpointed state. Backbone tensors are
    /// overwritten in parameter order; `tasks_done`/`seen_classes` position
    /// the stream cursor.
    pub fn from_parts(
        backbone_config: BackboneConfig,
        options: TrainerOptions,
        backbone_values: &[Vec<f64>],
        classifier: Tensor<F>,
        global_pool: GlobalPool<F>,
        seen_classes: usize,
        tasks_done: usize,
    ) -> Result<Self> {
        let mut trainer = Trainer::new(backbone_config, options)?;
        let params = trainer.backbone.parameters();
        if params.len() != backbone_values.len() {
            return Err(Error::contract(format!(
                "from_parts: {} backbone tensors stored, encoder has {}",
                backbone_values.len(),
                params.len()
            )));
        }
        for (param, values) in params.iter().zip(backbone_values) {
            let cast: Vec<F> = values.iter().map(|&v| F::from_f64(v)).collect();
            param.store(&cast)?;
        }
        trainer.classifier = classifier;
        trainer.global_pool = global_pool;
        trainer.seen_classes = seen_classes;
        trainer.tasks_done = tasks_done;
        if trainer.options.variant == Variant::SinglePool && tasks_done > 0 {
            trainer.persistent_pool = Some(TrainingPool::from_global(
                &trainer.global_pool,
                trainer.options.pool.clone(),
            ));
        }
        Ok(trainer)
    }

    fn effective_selection(&self, report: &ImportanceReport) -> Vec<usize> {
        let layers = self.backbone.config().num_layers;
        match (&self.options.variant, &self.options.forced_layers) {
            (Variant::AllLayers, _) => (0..layers).collect(),
            (_, Some(forced)) => {
                let mut sorted = forced.clone();
                sorted.sort_unstable();
                sorted.dedup();
                sorted
            }
            _ => report.selected.clone(),
        }
    }

    /// Run one task through the full pipeline. Tasks must arrive in stream
    /// order with contiguous labels.
    pub fn train_task(&mut self, task: &TaskData) -> Result<TaskSession> {
        if task.train.is_empty() {
            return Err(Error::contract("train_task: task has no training data"));
        }
        if task.class_offset != self.seen_classes {
            return Err(Error::Data(format!(
                "train_task: task {} starts at class {} but {} classes are seen",
                task.task_id, task.class_offset, self.seen_classes
            )));
        }
        let class_count = task.class_count();
        let total_after = self.seen_classes + class_count;
        for sample in &task.train {
            if sample.label < task.class_offset || sample.label >= total_after {
                return Err(Error::Data(format!(
                    "train_task: label {} outside task range {}..{}",
                    sample.label, task.class_offset, total_after
                )));
            }
        }

        let seed = self.options.seed;
        let images: Vec<&[f32]> = task.train.iter().map(|s| s.pixels.as_slice()).collect();

        // (1) layer scoring on the frozen encoder
        let stats = importance::evaluate_task_statistics(
            &self.backbone,
            &images,
            &self.options.importance,
            seed,
            task.task_id,
        )?;
        let selected = self.effective_selection(&stats.report);
        let mut report = stats.report.clone();
        report.selected = selected.clone();

        // (2) training pool for this task
        let dim = self.backbone.config().embed_dim;
        let prefix_len = self.backbone.config().prefix_len;
        let mut queries = BTreeMap::new();
        for &layer in &selected {
            queries.insert(layer, stats.mean_cls_per_layer[layer].clone());
        }
        let pool = match self.options.variant {
            Variant::SinglePool => match self.persistent_pool.take() {
                Some(existing) => existing,
                None => build_training_pool(
                    &GlobalPool::new(),
                    &selected,
                    &queries,
                    &self.options.pool,
                    prefix_len,
                    dim,
                    task.task_id,
                    seed,
                )?,
            },
            _ => {
                let mut pool = build_training_pool(
                    &self.global_pool,
                    &selected,
                    &queries,
                    &self.options.pool,
                    prefix_len,
                    dim,
                    task.task_id,
                    seed,
                )?;
                if self.options.variant == Variant::NoFreeze {
                    pool.unfreeze_all();
                }
                pool
            }
        };
        let pool_layers = pool.layers();

        // (3) widen the classifier, preserving old columns bit-exactly
        self.classifier = expand_classifier(&self.classifier, class_count, seed, task.task_id)?;

        // (4) optimize fresh prompts + classifier
        let mut trainable = pool.trainable_tensors();
        trainable.push(self.classifier.clone());
        trainable.retain(|t| t.requires_grad());
        if trainable.is_empty() {
            return Err(Error::contract("train_task: no trainable parameters"));
        }

        let cfg = self.options.train.clone();
        let mut loss_history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..task.train.len()).collect();
            let mut rng = Rng::derive(
                seed,
                Stream::BatchShuffle,
                ((task.task_id as u64) << 16) | epoch as u64,
            );
            rng.shuffle(&mut order);

            let mut weighted_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let tape = Tape::new();
                let mut prefixes = PrefixSet::empty();
                for &layer in &pool_layers {
                    let (p_k, p_v) =
                        merge_prompts(&tape, pool.layer_entries(layer), None, MergeMode::Training)?;
                    prefixes.insert(layer, p_k, p_v);
                }
                let batch_images: Vec<&[f32]> = chunk
                    .iter()
                    .map(|&i| task.train[i].pixels.as_slice())
                    .collect();
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| task.train[i].label).collect();
                let trace =
                    self.backbone
                        .forward(&tape, &batch_images, &prefixes, &self.classifier)?;
                let loss = tape.cross_entropy_logits(&trace.logits, &batch_labels)?;
                tape.backward(&loss)?;
                sgd_step(&trainable, cfg.lr, cfg.weight_decay)?;
                let value = loss.item().to_f64();
                if !value.is_finite() {
                    return Err(Error::contract(format!(
                        "train_task: non-finite loss at task {} epoch {epoch}",
                        task.task_id
                    )));
                }
                weighted_loss += value * chunk.len() as f64;
            }
            loss_history.push(weighted_loss / task.train.len() as f64);
        }

        // (5) finalize: keys, freezing, global expansion
        let mut mean_cls = BTreeMap::new();
        for &layer in &pool_layers {
            mean_cls.insert(layer, stats.mean_cls_per_layer[layer].clone());
        }
        match self.options.variant {
            Variant::SinglePool => {
                // keys refresh to the current task's statistics; entries and
                // pool membership never change after task 0
                for (layer, query) in &mean_cls {
                    for entry in pool.layer_entries(*layer) {
                        entry.key.store(&query.to_vec())?;
                    }
                }
                if self.tasks_done == 0 {
                    for entry in pool.iter_entries() {
                        self.global_pool.append(entry.clone());
                    }
                }
                self.persistent_pool = Some(pool);
            }
            Variant::NoFreeze => {
                finalize_task(pool, &mut self.global_pool, &mean_cls, false, task.task_id)?;
            }
            Variant::AllLayers | Variant::Full => {
                finalize_task(pool, &mut self.global_pool, &mean_cls, true, task.task_id)?;
            }
        }

        self.seen_classes = total_after;
        self.tasks_done += 1;
        Ok(TaskSession {
            task_id: task.task_id,
            importance: report,
            class_offset: task.class_offset,
            class_count,
            loss_history,
            pool_sizes: self.global_pool.sizes(),
        })
    }

    /// Classify one image over all seen classes: two-pass prompt retrieval,
    /// then a prompted forward.
    pub fn predict(&self, image: &[f32]) -> Result<usize> {
        let prefixes = query_inference(
            &self.global_pool,
            &self.backbone,
            image,
            self.options.pool.capacity,
        )?;
        let tape = Tape::no_grad();
        let trace = self
            .backbone
            .forward(&tape, &[image], &prefixes, &self.classifier)?;
        Ok(argmax(&trace.logits.to_vec()))
    }

    /// Accuracy on each given test set, in order (`a[t][1..=t]` when called
    /// with the first `t` tasks after training task `t`).
    pub fn evaluate(&self, tasks: &[&TaskData]) -> Result<Vec<f64>> {
        if self.tasks_done == 0 {
            return Err(Error::contract("evaluate: no tasks trained yet"));
        }
        let mut accuracies = Vec::with_capacity(tasks.len());
        for task in tasks {
            if task.test.is_empty() {
                return Err(Error::contract(format!(
                    "evaluate: task {} has an empty test set",
                    task.task_id
                )));
            }
            let mut correct = 0usize;
            for sample in &task.test {
                if self.predict(&sample.pixels)? == sample.label {
                    correct += 1;
                }
            }
            accuracies.push(correct as f64 / task.test.len() as f64);
        }
        Ok(accuracies)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SplitSpec, SyntheticSpec, TaskStream};

    fn toy_backbone_config() -> BackboneConfig {
        BackboneConfig {
            num_layers: 3,
            embed_dim: 16,
            num_heads: 2,
            image_side: 8,
            patch_side: 4,
            channels: 1,
            prefix_len: 2,
            mlp_ratio: 2.0,
        }
    }

    fn toy_stream(seed: u64) -> TaskStream {
        let spec = SyntheticSpec {
            classes: 4,
            train_per_class: 8,
            test_per_class: 4,
            image_side: 8,
            channels: 1,
            separation: 3.0,
            noise: 0.05,
            seed,
        };
        let (train, test) = generate_synthetic(&spec).unwrap();
        let split = SplitSpec {
            total_classes: 4,
            base_classes: 0,
            increment: 2,
            seed,
        };
        TaskStream::build(&train, &test, &split).unwrap()
    }

    fn toy_options(seed: u64) -> TrainerOptions {
        TrainerOptions {
            train: TrainConfig {
                lr: 0.01,
                weight_decay: 0.0005,
                epochs: 3,
                batch_size: 8,
            },
            pool: PoolConfig {
                capacity: 3,
                reuse: 1,
            },
            importance: ImportanceConfig {
                num_bins: 4,
                num_samples: 16,
            },
            variant: Variant::Full,
            forced_layers: None,
            seed,
        }
    }

    #[test]
    fn expand_classifier_preserves_and_grows() {
        let empty = Tensor::<f64>::zeros(&[4, 0]).with_grad();
        let first = expand_classifier(&empty, 3, 7, 0).unwrap();
        assert_eq!(first.shape(), vec![4, 3]);
        assert!(first.requires_grad(), "trainability carries over");

        let second = expand_classifier(&first, 2, 7, 1).unwrap();
        assert_eq!(second.shape(), vec![4, 5]);
        for row in 0..4 {
            for col in 0..3 {
                assert_eq!(second.value(&[row, col]), first.value(&[row, col]));
            }
        }

        // same seeds, fresh run: identical growth
        let first_b = expand_classifier(&empty, 3, 7, 0).unwrap();
        let second_b = expand_classifier(&first_b, 2, 7, 1).unwrap();
        assert_eq!(second.fingerprint(), second_b.fingerprint());

        assert!(expand_classifier(&first, 0, 7, 2).is_err());
    }

    #[test]
    fn loss_decreases_on_separable_task() {
        let stream = toy_stream(1993);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(1993)).unwrap();
        let session = trainer.train_task(&stream.tasks[0]).unwrap();
        assert_eq!(session.loss_history.len(), 3);
        assert!(session.loss_history.iter().all(|l| l.is_finite()));
        assert!(
            session.loss_history.last().unwrap() < session.loss_history.first().unwrap(),
            "{:?}",
            session.loss_history
        );
    }

    #[test]
    fn same_seed_same_loss_history() {
        let stream = toy_stream(7);
        let run = || {
            let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(7)).unwrap();
            let mut histories = Vec::new();
            for task in &stream.tasks {
                histories.push(trainer.train_task(task).unwrap().loss_history);
            }
            histories
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn tasks_must_arrive_in_order() {
        let stream = toy_stream(3);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(3)).unwrap();
        let err = trainer.train_task(&stream.tasks[1]).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let stream = toy_stream(5);
        let mut task = stream.tasks[0].clone();
        task.train[0].label = 99;
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(5)).unwrap();
        let err = trainer.train_task(&task).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }

    #[test]
    fn training_touches_only_prompts_and_classifier() {
        let stream = toy_stream(11);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(11)).unwrap();
        trainer.train_task(&stream.tasks[0]).unwrap();

        // fingerprint the world that must stay put: encoder + frozen entries
        let backbone_prints: Vec<u64> = trainer
            .backbone()
            .parameters()
            .iter()
            .map(|p| p.fingerprint())
            .collect();
        let task0_prints = |t: &Trainer<f32>| -> Vec<(u64, u64, u64)> {
            t.global_pool()
                .iter_entries()
                .filter(|e| e.task_id == 0)
                .map(|e| {
                    (
                        e.key.fingerprint(),
                        e.p_k.fingerprint(),
                        e.p_v.fingerprint(),
                    )
                })
                .collect()
        };
        let frozen_prints = task0_prints(&trainer);

        trainer.train_task(&stream.tasks[1]).unwrap();

        let after: Vec<u64> = trainer
            .backbone()
            .parameters()
            .iter()
            .map(|p| p.fingerprint())
            .collect();
        assert_eq!(backbone_prints, after, "encoder weights moved");
        assert_eq!(
            task0_prints(&trainer),
            frozen_prints,
            "frozen entries mutated"
        );
    }

    #[test]
    fn evaluation_is_repeatable_and_bounded() {
        let stream = toy_stream(13);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(13)).unwrap();
        trainer.train_task(&stream.tasks[0]).unwrap();
        let refs: Vec<&TaskData> = stream.tasks[..1].iter().collect();
        let a = trainer.evaluate(&refs).unwrap();
        let b = trainer.evaluate(&refs).unwrap();
        assert_eq!(a, b, "evaluation must be deterministic");
        assert!(a.iter().all(|&acc| (0.0..=1.0).contains(&acc)));
    }

    #[test]
    fn trainer_loss_matches_manual_cross_entropy() {
        // one batch recomputed by hand from the logits trace
        let stream = toy_stream(17);
        let task = &stream.tasks[0];
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(17)).unwrap();
        trainer.train_task(task).unwrap();

        let tape = Tape::no_grad();
        let prefixes = query_inference(
            trainer.global_pool(),
            trainer.backbone(),
            &task.train[0].pixels,
            3,
        )
        .unwrap();
        let images: Vec<&[f32]> = task.train[..4]
            .iter()
            .map(|s| s.pixels.as_slice())
            .collect();
        let labels: Vec<usize> = task.train[..4].iter().map(|s| s.label).collect();
        let trace = trainer
            .backbone()
            .forward(&tape, &images, &prefixes, &trainer.classifier())
            .unwrap();
        let loss = tape
            .cross_entropy_logits(&trace.logits, &labels)
            .unwrap()
            .item() as f64;

        let logits = trace.logits.to_f64_vec();
        let classes = trainer.seen_classes();
        let mut expect = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits[i * classes..(i + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            expect += lse - row[label];
        }
        expect /= labels.len() as f64;
        assert!((loss - expect).abs() < 1e-6, "{loss} vs {expect}");
    }

    #[test]
    fn single_pool_variant_never_grows() {
        let stream = toy_stream(19);
        let mut options = toy_options(19);
        options.variant = Variant::SinglePool;
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), options).unwrap();
        let mut sizes = Vec::new();
        for task in &stream.tasks {
            let session = trainer.train_task(task).unwrap();
            sizes.push(session.pool_sizes.values().sum::<usize>());
        }
        assert_eq!(sizes[0], sizes[1], "single pool must not expand: {sizes:?}");
    }

    #[test]
    fn no_freeze_variant_mutates_stored_prompts() {
        let stream = toy_stream(23);
        let mut options = toy_options(23);
        options.variant = Variant::NoFreeze;
        // force a layer so task 2 surely reuses task 1's entries
        options.forced_layers = Some(vec![1]);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), options).unwrap();
        trainer.train_task(&stream.tasks[0]).unwrap();
        let before: Vec<u64> = trainer
            .global_pool()
            .iter_entries()
            .map(|e| e.p_k.fingerprint())
            .collect();
        trainer.train_task(&stream.tasks[1]).unwrap();
        let after: Vec<u64> = trainer
            .global_pool()
            .iter_entries()
            .take(before.len())
            .map(|e| e.p_k.fingerprint())
            .collect();
        assert_ne!(
            before, after,
            "without freezing, retrieved prompts must change"
        );
    }

    #[test]
    fn all_layers_variant_selects_everything() {
        let stream = toy_stream(29);
        let mut options = toy_options(29);
        options.variant = Variant::AllLayers;
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), options).unwrap();
        let session = trainer.train_task(&stream.tasks[0]).unwrap();
        assert_eq!(session.importance.selected, vec![0, 1, 2]);
    }

    #[test]
    fn degenerate_constant_predictor_yields_frequency_accuracies() {
        let stream = toy_stream(37);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(37)).unwrap();
        for task in &stream.tasks {
            trainer.train_task(task).unwrap();
        }
        // zero classifier: every logit ties, argmax resolves to class 0,
        // which lives in the first task only
        let classifier = trainer.classifier();
        classifier.store(&vec![0.0; classifier.len()]).unwrap();
        let refs: Vec<&TaskData> = stream.tasks.iter().collect();
        let accs = trainer.evaluate(&refs).unwrap();
        let class0_freq = stream.tasks[0].test.iter().filter(|s| s.label == 0).count() as f64
            / stream.tasks[0].test.len() as f64;
        assert!(
            (accs[0] - class0_freq).abs() < 1e-12,
            "{accs:?} vs {class0_freq}"
        );
        for &a in &accs[1..] {
            assert_eq!(
                a, 0.0,
                "constant class 0 never matches later tasks: {accs:?}"
            );
        }
    }

    #[test]
    fn evaluate_matches_per_sample_sequential_oracle() {
        let stream = toy_stream(41);
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), toy_options(41)).unwrap();
        for task in &stream.tasks {
            trainer.train_task(task).unwrap();
        }
        let refs: Vec<&TaskData> = stream.tasks.iter().collect();
        let batch = trainer.evaluate(&refs).unwrap();
        for (task, &reported) in stream.tasks.iter().zip(&batch) {
            let mut correct = 0usize;
            for sample in &task.test {
                if trainer.predict(&sample.pixels).unwrap() == sample.label {
                    correct += 1;
                }
            }
            assert_eq!(reported, correct as f64 / task.test.len() as f64);
        }
    }

    #[test]
    fn all_frozen_parameter_set_is_rejected() {
        let stream = toy_stream(31);
        let mut options = toy_options(31);
        options.variant = Variant::SinglePool;
        let mut trainer = Trainer::<f32>::new(toy_backbone_config(), options).unwrap();
        trainer.train_task(&stream.tasks[0]).unwrap();
        // misuse: freeze every trainable tensor behind the trainer's back
        trainer.classifier().set_requires_grad(false);
        for entry in trainer.global_pool().iter_entries() {
            entry.p_k.set_requires_grad(false);
            entry.p_v.set_requires_grad(false);
        }
        let err = trainer.train_task(&stream.tasks[1]).unwrap_err();
        assert!(err.to_string().contains("no trainable parameters"), "{err}");
    }
}

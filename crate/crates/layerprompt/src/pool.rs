//! Dual expandable prompt pools.
//!
//! Two structures cooperate across tasks. The *global pool* is an append-only
//! per-layer store of frozen prompt entries accumulated over all past tasks.
//! For each new task a *training pool* of fixed capacity `S` is assembled per
//! selected layer: the `s` most similar frozen entries are retrieved from the
//! global pool by cosine similarity between a query feature and the stored
//! keys, and the remaining `S - s` entries are fresh and trainable. After the
//! task, fresh entries receive their key (the task's mean per-layer CLS
//! feature), are frozen, and are appended to the global pool. The pool grows
//! by `S - s` entries per reused layer per task, and old prompts are never
//! overwritten.
//!
//! Prompts within a layer are merged into a single `(P_K, P_V)` pair before
//! injection: uniformly during training (fresh entries have no meaningful key
//! yet), similarity-softmax weighted at inference.

use std::collections::BTreeMap;

use crate::backbone::{Backbone, PrefixSet};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::{Scalar, Tape, Tensor};

/// Fresh prompts are drawn at token scale (matching the position/CLS
/// embedding init) so a task's merged prefix shifts the feature regime
/// enough for retrieval to matter at inference.
const PROMPT_INIT_STD: f64 = 0.5;

/// Capacity and retrieval knobs for the training pool.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolConfig {
    /// Training-pool capacity `S` per selected layer.
    pub capacity: usize,
    /// Retrieved (frozen) entries `s` per layer; the remaining `S - s` are
    /// fresh and trainable.
    pub reuse: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            capacity: 4,
            reuse: 2,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.capacity == 0 {
            faults.push("pool.capacity must be at least 1".into());
        }
        if self.reuse >= self.capacity.max(1) {
            faults.push(format!(
                "pool.reuse ({}) must be strictly less than pool.capacity ({})",
                self.reuse, self.capacity
            ));
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }
}

/// One key-prompt unit: retrieval key, prefix matrices, lifecycle flags and
/// provenance.
#[derive(Debug, Clone)]
pub struct PromptEntry<F: Scalar> {
    /// Retrieval key, `[embed_dim]`. Zero placeholder until finalization.
    pub key: Tensor<F>,
    /// Key-side prefix, `[prefix_len x embed_dim]`.
    pub p_k: Tensor<F>,
    /// Value-side prefix, same shape.
    pub p_v: Tensor<F>,
    /// Frozen entries are immutable for the rest of the run.
    pub frozen: bool,
    /// Task that created the entry.
    pub task_id: usize,
    /// Layer the entry belongs to.
    pub layer_id: usize,
}

/// Append-only per-layer store of prompt entries from past tasks.
#[derive(Debug, Clone, Default)]
pub struct GlobalPool<F: Scalar> {
    layers: BTreeMap<usize, Vec<PromptEntry<F>>>,
}

impl<F: Scalar> GlobalPool<F> {
    pub fn new() -> Self {
        GlobalPool {
            layers: BTreeMap::new(),
        }
    }

    pub fn layer_entries(&self, layer: usize) -> &[PromptEntry<F>] {
        self.layers.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Layers that currently hold at least one entry, ascending.
    pub fn nonempty_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(&l, _)| l)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.values().all(Vec::is_empty)
    }

    /// Entry count per layer, ascending layer order.
    pub fn sizes(&self) -> BTreeMap<usize, usize> {
        self.layers.iter().map(|(&l, v)| (l, v.len())).collect()
    }

    pub fn total_entries(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    /// Append an entry at its layer. The store is append-only: entries are
    /// never removed or reordered.
    pub(crate) fn append(&mut self, entry: PromptEntry<F>) {
        self.layers.entry(entry.layer_id).or_default().push(entry);
    }

    /// Iterate every entry (ascending layer, insertion order within layers).
    pub fn iter_entries(&self) -> impl Iterator<Item = &PromptEntry<F>> {
        self.layers.values().flatten()
    }
}

/// Fixed-capacity per-task pool: retrieved frozen entries plus fresh
/// trainable ones, exactly `capacity` per selected layer.
#[derive(Debug, Clone)]
pub struct TrainingPool<F: Scalar> {
    pub config: PoolConfig,
    layers: BTreeMap<usize, Vec<PromptEntry<F>>>,
}

impl<F: Scalar> TrainingPool<F> {
    pub fn layer_entries(&self, layer: usize) -> &[PromptEntry<F>] {
        self.layers.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn layers(&self) -> Vec<usize> {
        self.layers.keys().copied().collect()
    }

    /// The trainable (fresh) prefix tensors across all layers.
    pub fn trainable_tensors(&self) -> Vec<Tensor<F>> {
        let mut out = Vec::new();
        for entries in self.layers.values() {
            for entry in entries {
                if !entry.frozen {
                    out.push(entry.p_k.clone());
                    out.push(entry.p_v.clone());
                }
            }
        }
        out
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = &PromptEntry<F>> {
        self.layers.values().flatten()
    }

    /// Mark every entry trainable; the no-freezing ablation trains retrieved
    /// entries in place (shared with the global pool).
    pub(crate) fn unfreeze_all(&mut self) {
        for entries in self.layers.values_mut() {
            for entry in entries {
                entry.frozen = false;
                entry.p_k.set_requires_grad(true);
                entry.p_v.set_requires_grad(true);
            }
        }
    }

    /// View the global pool's entries as a training pool (shared tensors).
    /// The single-pool ablation uses this to rebuild its persistent pool
    /// after a checkpoint restore.
    pub(crate) fn from_global(global: &GlobalPool<F>, config: PoolConfig) -> TrainingPool<F> {
        let mut layers = BTreeMap::new();
        for layer in global.nonempty_layers() {
            layers.insert(layer, global.layer_entries(layer).to_vec());
        }
        TrainingPool { config, layers }
    }
}

/// Cosine similarity between two same-length vectors. Errors on zero norm.
pub fn cosine_similarity<F: Scalar>(z: &Tensor<F>, key: &Tensor<F>) -> Result<f64> {
    if z.len() != key.len() {
        return Err(Error::shape(format!(
            "cosine_similarity: {:?} vs {:?}",
            z.shape(),
            key.shape()
        )));
    }
    let zv = z.to_f64_vec();
    let kv = key.to_f64_vec();
    let mut dot = 0.0;
    let mut nz = 0.0;
    let mut nk = 0.0;
    for (a, b) in zv.iter().zip(&kv) {
        dot += a * b;
        nz += a * a;
        nk += b * b;
    }
    if nz == 0.0 || nk == 0.0 {
        return Err(Error::contract("cosine_similarity: zero-norm vector"));
    }
    Ok(dot / (nz.sqrt() * nk.sqrt()))
}

/// Indices of the `s` entries most similar to `z`, descending similarity,
/// ties broken by insertion order (older first). Returns all entries when the
/// pool holds fewer than `s`.
pub fn retrieve_top_s<F: Scalar>(
    entries: &[PromptEntry<F>],
    z: &Tensor<F>,
    s: usize,
) -> Result<Vec<usize>> {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        scored.push((i, cosine_similarity(z, &entry.key)?));
    }
    // stable sort keeps insertion order among equal similarities
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("similarities are finite"));
    scored.truncate(s);
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Assemble the per-task training pool: per selected layer, retrieve up to
/// `reuse` frozen entries from the global pool (most similar to that layer's
/// query) and fill the remainder with fresh seeded-random trainable entries
/// whose keys are zero placeholders until finalization.
#[allow(clippy::too_many_arguments)]
pub fn build_training_pool<F: Scalar>(
    global: &GlobalPool<F>,
    selected_layers: &[usize],
    queries: &BTreeMap<usize, Tensor<F>>,
    config: &PoolConfig,
    prefix_len: usize,
    embed_dim: usize,
    task_id: usize,
    seed: u64,
) -> Result<TrainingPool<F>> {
    config.validate()?;
    if selected_layers.is_empty() {
        return Err(Error::contract("build_training_pool: no selected layers"));
    }
    let mut layers = BTreeMap::new();
    for &layer in selected_layers {
        let pool = global.layer_entries(layer);
        let retrieved: Vec<PromptEntry<F>> = if pool.is_empty() || config.reuse == 0 {
            Vec::new()
        } else {
            let query = queries.get(&layer).ok_or_else(|| {
                Error::contract(format!("build_training_pool: no query for layer {layer}"))
            })?;
            retrieve_top_s(pool, query, config.reuse)?
                .into_iter()
                .map(|i| pool[i].clone())
                .collect()
        };

        let fresh_count = config.capacity - retrieved.len();
        let mut rng = Rng::derive(
            seed,
            Stream::PromptInit,
            (task_id as u64) << 16 | layer as u64,
        );
        let mut entries = retrieved;
        for _ in 0..fresh_count {
            let p_k =
                Tensor::randn(&[prefix_len, embed_dim], PROMPT_INIT_STD, &mut rng).with_grad();
            let p_v =
                Tensor::randn(&[prefix_len, embed_dim], PROMPT_INIT_STD, &mut rng).with_grad();
            entries.push(PromptEntry {
                key: Tensor::zeros(&[embed_dim]),
                p_k,
                p_v,
                frozen: false,
                task_id,
                layer_id: layer,
            });
        }
        debug_assert_eq!(entries.len(), config.capacity);
        layers.insert(layer, entries);
    }
    Ok(TrainingPool {
        config: config.clone(),
        layers,
    })
}

/// How prompts within a layer collapse into one `(P_K, P_V)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Uniform convex combination; used while training (fresh keys are
    /// placeholders, so similarity is meaningless).
    Training,
    /// Similarity-softmax weights against a query feature (temperature 1).
    Inference,
}

/// Merge a layer's entries into a single prefix pair. Training mode uses
/// uniform weights and stays on the tape so gradients reach fresh entries;
/// inference mode requires a query `z` for the softmax weighting.
pub fn merge_prompts<F: Scalar>(
    tape: &Tape<F>,
    entries: &[PromptEntry<F>],
    z: Option<&Tensor<F>>,
    mode: MergeMode,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if entries.is_empty() {
        return Err(Error::contract("merge_prompts: empty entry list"));
    }
    let weights: Vec<f64> = match mode {
        MergeMode::Training => vec![1.0 / entries.len() as f64; entries.len()],
        MergeMode::Inference => {
            let z = z.ok_or_else(|| {
                Error::contract("merge_prompts: inference mode requires a query feature")
            })?;
            let sims = entries
                .iter()
                .map(|e| cosine_similarity(z, &e.key))
                .collect::<Result<Vec<f64>>>()?;
            let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = sims.iter().map(|&v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    };
    let k_terms: Vec<(f64, &Tensor<F>)> = weights
        .iter()
        .zip(entries)
        .map(|(&w, e)| (w, &e.p_k))
        .collect();
    let v_terms: Vec<(f64, &Tensor<F>)> = weights
        .iter()
        .zip(entries)
        .map(|(&w, e)| (w, &e.p_v))
        .collect();
    Ok((tape.lincomb(&k_terms)?, tape.lincomb(&v_terms)?))
}

/// Close out a task: every fresh entry (created by `task_id`) receives the
/// layer's mean CLS feature as key and is appended to the global pool;
/// retrieved entries are not re-appended. With `freeze` set the appended
/// entries become immutable; the no-freezing ablation passes false.
pub fn finalize_task<F: Scalar>(
    training: TrainingPool<F>,
    global: &mut GlobalPool<F>,
    mean_cls_per_layer: &BTreeMap<usize, Tensor<F>>,
    freeze: bool,
    task_id: usize,
) -> Result<usize> {
    let mut appended = 0;
    for (layer, entries) in training.layers {
        for mut entry in entries {
            if entry.task_id != task_id {
                continue; // retrieved from the global pool, already stored
            }
            let key = mean_cls_per_layer.get(&layer).ok_or_else(|| {
                Error::contract(format!(
                    "finalize_task: no mean CLS feature for layer {layer}"
                ))
            })?;
            if key.to_f64_vec().iter().all(|&v| v == 0.0) {
                return Err(Error::contract(format!(
                    "finalize_task: zero mean CLS feature at layer {layer} is a degenerate key"
                )));
            }
            entry.key.store(&key.to_vec())?;
            if freeze {
                entry.frozen = true;
                entry.p_k.set_requires_grad(false);
                entry.p_v.set_requires_grad(false);
            }
            // training may have left gradients behind; the stored entry is inert
            entry.p_k.clear_grad();
            entry.p_v.clear_grad();
            global.append(entry);
            appended += 1;
        }
    }
    Ok(appended)
}

/// Two-pass inference retrieval: a promptless forward records the per-layer
/// CLS features, then each globally populated layer retrieves its most
/// similar entries (up to the training-pool capacity) and merges them with
/// similarity-softmax weights. The returned set drives the prompted pass.
pub fn query_inference<F: Scalar>(
    global: &GlobalPool<F>,
    backbone: &Backbone<F>,
    image: &[f32],
    capacity: usize,
) -> Result<PrefixSet<F>> {
    if global.is_empty() {
        return Err(Error::contract("query_inference: global pool is empty"));
    }
    let tape = Tape::no_grad();
    let dim = backbone.config().embed_dim;
    let dummy_head = Tensor::zeros(&[dim, 1]);
    let trace = backbone.forward(&tape, &[image], &PrefixSet::empty(), &dummy_head)?;

    let mut prefixes = PrefixSet::empty();
    for layer in global.nonempty_layers() {
        let entries = global.layer_entries(layer);
        let z = Tensor::from_vec(&[dim], trace.cls_per_layer[layer].to_vec())?;
        let picked = retrieve_top_s(entries, &z, capacity.min(entries.len()))?;
        let chosen: Vec<PromptEntry<F>> = picked.into_iter().map(|i| entries[i].clone()).collect();
        let (p_k, p_v) = merge_prompts(&tape, &chosen, Some(&z), MergeMode::Inference)?;
        prefixes.insert(layer, p_k, p_v);
    }
    Ok(prefixes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &[f64], fill: f64, task: usize, layer: usize, frozen: bool) -> PromptEntry<f64> {
        let lp = 2;
        let d = key.len();
        PromptEntry {
            key: Tensor::from_f64s(&[d], key).unwrap(),
            p_k: Tensor::from_vec(&[lp, d], vec![fill; lp * d]).unwrap(),
            p_v: Tensor::from_vec(&[lp, d], vec![-fill; lp * d]).unwrap(),
            frozen,
            task_id: task,
            layer_id: layer,
        }
    }

    #[test]
    fn cosine_basics() {
        let z = Tensor::<f64>::from_f64s(&[2], &[1.0, 1.0]).unwrap();
        assert!((cosine_similarity(&z, &z).unwrap() - 1.0).abs() < 1e-12);
        let e1 = Tensor::from_f64s(&[2], &[1.0, 0.0]).unwrap();
        let e2 = Tensor::from_f64s(&[2], &[0.0, 1.0]).unwrap();
        assert!(cosine_similarity(&e1, &e2).unwrap().abs() < 1e-12);
        let got = cosine_similarity(&z, &e1).unwrap();
        assert!(
            (got - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9,
            "{got}"
        );
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let z = Tensor::<f64>::from_f64s(&[2], &[0.0, 0.0]).unwrap();
        let k = Tensor::<f64>::from_f64s(&[2], &[1.0, 0.0]).unwrap();
        assert!(matches!(cosine_similarity(&z, &k), Err(Error::Contract(_))));
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let z = Tensor::<f64>::randn(&[6], 1.0, &mut rng);
            let k = Tensor::<f64>::randn(&[6], 1.0, &mut rng);
            let a = cosine_similarity(&z, &k).unwrap();
            let b = cosine_similarity(&k, &z).unwrap();
            assert!((a - b).abs() < 1e-12);
            let scale_z = 0.1 + rng.uniform() * 10.0;
            let scale_k = 0.1 + rng.uniform() * 10.0;
            let zs = Tensor::<f64>::from_f64s(
                &[6],
                &z.to_f64_vec()
                    .iter()
                    .map(|v| v * scale_z)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let ks = Tensor::<f64>::from_f64s(
                &[6],
                &k.to_f64_vec()
                    .iter()
                    .map(|v| v * scale_k)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let c = cosine_similarity(&zs, &ks).unwrap();
            assert!((a - c).abs() < 1e-9, "{a} vs {c}");
            assert!((-1.0..=1.0).contains(&a.clamp(-1.0, 1.0)));
        }
    }

    #[test]
    fn retrieval_from_empty_pool_is_empty() {
        let z = Tensor::from_f64s(&[2], &[1.0, 0.0]).unwrap();
        let picked = retrieve_top_s::<f64>(&[], &z, 3).unwrap();
        assert!(picked.is_empty());
    }

    #[test]
    fn retrieval_ranks_exact_match_first() {
        let z = Tensor::from_f64s(&[2], &[0.6, 0.8]).unwrap();
        let pool = vec![
            entry(&[1.0, 0.0], 1.0, 0, 0, true),
            entry(&[0.6, 0.8], 2.0, 0, 0, true),
            entry(&[0.0, 1.0], 3.0, 0, 0, true),
        ];
        let picked = retrieve_top_s(&pool, &z, 2).unwrap();
        assert_eq!(picked[0], 1);
    }

    #[test]
    fn retrieval_matches_exhaustive_sort_oracle_with_ties() {
        let mut rng = Rng::new(17);
        for case in 0..200 {
            let n = 1 + rng.below(24);
            let s = 1 + rng.below(6);
            let d = 3;
            let mut pool = Vec::new();
            for i in 0..n {
                // quantized keys so ties actually happen
                let key: Vec<f64> = (0..d).map(|_| (rng.below(3) as f64) - 1.0).collect();
                let key = if key.iter().all(|&v| v == 0.0) {
                    vec![1.0, 0.0, 0.0]
                } else {
                    key
                };
                pool.push(entry(&key, i as f64, 0, 0, true));
            }
            let z = Tensor::from_f64s(&[3], &[1.0, 0.5, -0.25]).unwrap();
            let got = retrieve_top_s(&pool, &z, s).unwrap();

            // oracle: compute all similarities, stable sort (index asc as tiebreak)
            let mut scored: Vec<(usize, f64)> = pool
                .iter()
                .enumerate()
                .map(|(i, e)| (i, cosine_similarity(&z, &e.key).unwrap()))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            let expect: Vec<usize> = scored.iter().take(s.min(n)).map(|&(i, _)| i).collect();
            assert_eq!(got, expect, "case {case}");

            // similarity sequence non-increasing
            let sims: Vec<f64> = got
                .iter()
                .map(|&i| cosine_similarity(&z, &pool[i].key).unwrap())
                .collect();
            assert!(sims.windows(2).all(|w| w[0] >= w[1] - 1e-15));
        }
    }

    #[test]
    fn build_pool_first_task_is_all_fresh() {
        let global = GlobalPool::<f64>::new();
        let cfg = PoolConfig {
            capacity: 4,
            reuse: 2,
        };
        let queries = BTreeMap::new();
        let pool = build_training_pool(&global, &[1, 3], &queries, &cfg, 2, 4, 0, 1993).unwrap();
        for layer in [1, 3] {
            let entries = pool.layer_entries(layer);
            assert_eq!(entries.len(), 4);
            assert!(entries.iter().all(|e| !e.frozen));
            assert!(entries
                .iter()
                .all(|e| e.p_k.requires_grad() && e.p_v.requires_grad()));
            assert!(entries
                .iter()
                .all(|e| e.key.to_f64_vec().iter().all(|&v| v == 0.0)));
        }
        assert_eq!(pool.trainable_tensors().len(), 2 * 4 * 2);
    }

    #[test]
    fn build_pool_mixes_retrieved_and_fresh() {
        let mut global = GlobalPool::<f64>::new();
        for i in 0..10 {
            let angle = i as f64 * 0.3;
            global.append(entry(&[angle.cos(), angle.sin()], i as f64, 0, 2, true));
        }
        let cfg = PoolConfig {
            capacity: 4,
            reuse: 2,
        };
        let mut queries = BTreeMap::new();
        queries.insert(2, Tensor::from_f64s(&[2], &[1.0, 0.0]).unwrap());
        let pool = build_training_pool(&global, &[2], &queries, &cfg, 2, 2, 1, 7).unwrap();
        let entries = pool.layer_entries(2);
        assert_eq!(entries.len(), 4);
        assert_eq!(entries.iter().filter(|e| e.frozen).count(), 2);
        assert_eq!(entries.iter().filter(|e| !e.frozen).count(), 2);
        // retrieved entries share storage with the global pool (no copies)
        assert!(entries[0].p_k.same_storage(&global.layer_entries(2)[0].p_k));
    }

    #[test]
    fn build_pool_same_seed_is_bit_identical() {
        let global = GlobalPool::<f32>::new();
        let cfg = PoolConfig {
            capacity: 3,
            reuse: 1,
        };
        let queries = BTreeMap::new();
        let a = build_training_pool(&global, &[0], &queries, &cfg, 4, 8, 5, 42).unwrap();
        let b = build_training_pool(&global, &[0], &queries, &cfg, 4, 8, 5, 42).unwrap();
        for (ea, eb) in a.layer_entries(0).iter().zip(b.layer_entries(0)) {
            assert_eq!(ea.p_k.fingerprint(), eb.p_k.fingerprint());
            assert_eq!(ea.p_v.fingerprint(), eb.p_v.fingerprint());
        }
    }

    #[test]
    fn merge_single_entry_is_identity() {
        let tape = Tape::no_grad();
        let e = entry(&[1.0, 0.0], 3.5, 0, 0, true);
        let (pk, pv) =
            merge_prompts(&tape, std::slice::from_ref(&e), None, MergeMode::Training).unwrap();
        assert_eq!(pk.to_vec(), e.p_k.to_vec());
        assert_eq!(pv.to_vec(), e.p_v.to_vec());
    }

    #[test]
    fn merge_identical_entries_returns_shared_matrices() {
        let tape = Tape::no_grad();
        let e = entry(&[0.0, 1.0], 2.0, 0, 0, true);
        let z = Tensor::from_f64s(&[2], &[0.3, 0.7]).unwrap();
        for mode in [MergeMode::Training, MergeMode::Inference] {
            let (pk, _) = merge_prompts(&tape, &[e.clone(), e.clone()], Some(&z), mode).unwrap();
            for (got, want) in pk.to_vec().iter().zip(e.p_k.to_vec()) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merge_training_matches_uniform_average_oracle() {
        let tape = Tape::no_grad();
        let entries: Vec<PromptEntry<f64>> = (0..4)
            .map(|i| entry(&[1.0, 0.0], i as f64, 0, 0, false))
            .collect();
        let (pk, pv) = merge_prompts(&tape, &entries, None, MergeMode::Training).unwrap();
        // oracle: hand-computed elementwise mean
        for j in 0..pk.len() {
            let mean: f64 = entries.iter().map(|e| e.p_k.to_f64_vec()[j]).sum::<f64>() / 4.0;
            assert!((pk.to_f64_vec()[j] - mean).abs() < 1e-12);
            let mean_v: f64 = entries.iter().map(|e| e.p_v.to_f64_vec()[j]).sum::<f64>() / 4.0;
            assert!((pv.to_f64_vec()[j] - mean_v).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_stays_in_convex_hull() {
        let tape = Tape::no_grad();
        let mut rng = Rng::new(12);
        let entries: Vec<PromptEntry<f64>> = (0..5)
            .map(|i| {
                let mut e = entry(&[rng.normal(), rng.normal() + 2.0], 0.0, 0, 0, true);
                e.p_k = Tensor::randn(&[2, 2], 1.0, &mut rng);
                e.p_v = Tensor::randn(&[2, 2], 1.0, &mut rng);
                e.task_id = i;
                e
            })
            .collect();
        let z = Tensor::from_f64s(&[2], &[1.0, 1.0]).unwrap();
        for mode in [MergeMode::Training, MergeMode::Inference] {
            let (pk, _) = merge_prompts(&tape, &entries, Some(&z), mode).unwrap();
            let merged = pk.to_f64_vec();
            for (j, &value) in merged.iter().enumerate() {
                let lo = entries
                    .iter()
                    .map(|e| e.p_k.to_f64_vec()[j])
                    .fold(f64::INFINITY, f64::min);
                let hi = entries
                    .iter()
                    .map(|e| e.p_k.to_f64_vec()[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(value >= lo - 1e-9 && value <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn merge_inference_needs_query() {
        let tape = Tape::no_grad();
        let e = entry(&[1.0, 0.0], 1.0, 0, 0, true);
        let err = merge_prompts(&tape, &[e], None, MergeMode::Inference).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }

    #[test]
    fn merge_inference_softmax_weights_are_analytic() {
        // keys: k1 = z (sim 1), k2 ⟂ z (sim 0) -> weights [e/(e+1), 1/(e+1)]
        let tape = Tape::no_grad();
        let mut e1 = entry(&[1.0, 0.0], 0.0, 0, 0, true);
        e1.p_k = Tensor::from_f64s(&[1, 1], &[1.0]).unwrap();
        let mut e2 = entry(&[0.0, 1.0], 0.0, 0, 0, true);
        e2.p_k = Tensor::from_f64s(&[1, 1], &[0.0]).unwrap();
        let z = Tensor::from_f64s(&[2], &[1.0, 0.0]).unwrap();
        let (pk, _) = merge_prompts(&tape, &[e1, e2], Some(&z), MergeMode::Inference).unwrap();
        let e = std::f64::consts::E;
        let expect = e / (e + 1.0); // w1*1 + w2*0
        assert!(
            (pk.to_f64_vec()[0] - expect).abs() < 1e-9,
            "{}",
            pk.to_f64_vec()[0]
        );
    }

    #[test]
    fn finalize_freezes_keys_and_expands_global() {
        let mut global = GlobalPool::<f64>::new();
        let cfg = PoolConfig {
            capacity: 4,
            reuse: 2,
        };
        let queries = BTreeMap::new();
        let pool = build_training_pool(&global, &[0, 2], &queries, &cfg, 2, 2, 0, 11).unwrap();

        let mut mean_cls = BTreeMap::new();
        mean_cls.insert(0, Tensor::from_f64s(&[2], &[0.5, 0.5]).unwrap());
        mean_cls.insert(2, Tensor::from_f64s(&[2], &[0.1, -0.4]).unwrap());
        let appended = finalize_task(pool, &mut global, &mean_cls, true, 0).unwrap();
        assert_eq!(appended, 8); // 4 fresh per layer, 2 layers
        assert_eq!(global.sizes().get(&0), Some(&4));
        assert_eq!(global.sizes().get(&2), Some(&4));
        for e in global.iter_entries() {
            assert!(e.frozen);
            assert!(!e.p_k.requires_grad() && !e.p_v.requires_grad());
            assert!(e.key.to_f64_vec().iter().any(|&v| v != 0.0));
        }

        // second task reusing layer 0: growth is exactly capacity - reuse
        let mut queries = BTreeMap::new();
        queries.insert(0, Tensor::from_f64s(&[2], &[0.5, 0.5]).unwrap());
        let pool2 = build_training_pool(&global, &[0], &queries, &cfg, 2, 2, 1, 11).unwrap();
        let before = global.layer_entries(0).len();
        let appended = finalize_task(pool2, &mut global, &mean_cls, true, 1).unwrap();
        assert_eq!(appended, 2);
        assert_eq!(
            global.layer_entries(0).len(),
            before + cfg.capacity - cfg.reuse
        );
    }

    #[test]
    fn finalize_rejects_zero_key() {
        let mut global = GlobalPool::<f64>::new();
        let cfg = PoolConfig {
            capacity: 2,
            reuse: 0,
        };
        let pool = build_training_pool(&global, &[0], &BTreeMap::new(), &cfg, 2, 2, 0, 3).unwrap();
        let mut mean_cls = BTreeMap::new();
        mean_cls.insert(0, Tensor::from_f64s(&[2], &[0.0, 0.0]).unwrap());
        let err = finalize_task(pool, &mut global, &mean_cls, true, 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }

    #[test]
    fn growth_law_matches_recurrence_simulation() {
        // T tasks all selecting layer 5 with S=4, s=2:
        // |global| = S + (T-1)(S-s) = 4, 6, 8, 10, 12
        let mut global = GlobalPool::<f64>::new();
        let cfg = PoolConfig {
            capacity: 4,
            reuse: 2,
        };
        let mut mean_cls = BTreeMap::new();
        mean_cls.insert(5, Tensor::from_f64s(&[3], &[0.3, 0.2, 0.1]).unwrap());
        let mut expected_sizes = Vec::new();
        let mut simulated = 0usize; // independent recurrence accumulator
        for t in 0..5 {
            let mut queries = BTreeMap::new();
            queries.insert(5, Tensor::from_f64s(&[3], &[1.0, 0.0, 0.0]).unwrap());
            let pool = build_training_pool(&global, &[5], &queries, &cfg, 2, 3, t, 99).unwrap();
            finalize_task(pool, &mut global, &mean_cls, true, t).unwrap();
            simulated += if t == 0 {
                cfg.capacity
            } else {
                cfg.capacity - cfg.reuse
            };
            expected_sizes.push(simulated);
            assert_eq!(global.layer_entries(5).len(), simulated);
        }
        assert_eq!(expected_sizes, vec![4, 6, 8, 10, 12]);
    }

    #[test]
    fn frozen_entries_stay_byte_identical_through_reuse() {
        let mut global = GlobalPool::<f64>::new();
        let cfg = PoolConfig {
            capacity: 3,
            reuse: 2,
        };
        let mut mean_cls = BTreeMap::new();
        mean_cls.insert(1, Tensor::from_f64s(&[2], &[0.7, 0.3]).unwrap());

        let pool = build_training_pool(&global, &[1], &BTreeMap::new(), &cfg, 2, 2, 0, 5).unwrap();
        finalize_task(pool, &mut global, &mean_cls, true, 0).unwrap();
        let prints: Vec<(u64, u64, u64)> = global
            .iter_entries()
            .map(|e| {
                (
                    e.key.fingerprint(),
                    e.p_k.fingerprint(),
                    e.p_v.fingerprint(),
                )
            })
            .collect();

        // simulate a second task that retrieves and "trains" (mutates fresh only)
        let mut queries = BTreeMap::new();
        queries.insert(1, Tensor::from_f64s(&[2], &[0.7, 0.3]).unwrap());
        let pool2 = build_training_pool(&global, &[1], &queries, &cfg, 2, 2, 1, 5).unwrap();
        for t in pool2.trainable_tensors() {
            t.accumulate_grad(&vec![1.0; t.len()]);
        }
        crate::tensor::sgd_step(&pool2.trainable_tensors(), 0.1, 0.0).unwrap();
        finalize_task(pool2, &mut global, &mean_cls, true, 1).unwrap();

        for (e, (k, pk, pv)) in global.iter_entries().zip(&prints) {
            assert_eq!(e.key.fingerprint(), *k);
            assert_eq!(e.p_k.fingerprint(), *pk);
            assert_eq!(e.p_v.fingerprint(), *pv);
        }
    }

    #[test]
    fn query_inference_single_entry_returns_it_exactly() {
        use crate::backbone::BackboneConfig;
        let cfg = BackboneConfig {
            num_layers: 2,
            embed_dim: 8,
            num_heads: 2,
            image_side: 8,
            patch_side: 4,
            channels: 1,
            prefix_len: 2,
            mlp_ratio: 2.0,
        };
        let bb = Backbone::<f64>::seeded(cfg.clone(), 3).unwrap();
        let mut rng = Rng::new(8);
        let mut global = GlobalPool::new();
        let mut e = entry(&[1.0; 8], 0.0, 0, 1, true);
        e.p_k = Tensor::randn(&[2, 8], 1.0, &mut rng);
        e.p_v = Tensor::randn(&[2, 8], 1.0, &mut rng);
        global.append(e.clone());

        let image: Vec<f32> = (0..cfg.pixels_per_image())
            .map(|i| i as f32 / 64.0)
            .collect();
        let prefixes = query_inference(&global, &bb, &image, 4).unwrap();
        assert_eq!(prefixes.len(), 1);
        let (pk, pv) = prefixes.get(1).unwrap();
        assert_eq!(pk.to_vec(), e.p_k.to_vec());
        assert_eq!(pv.to_vec(), e.p_v.to_vec());
    }

    #[test]
    fn query_inference_empty_pool_is_contract_error() {
        use crate::backbone::BackboneConfig;
        let cfg = BackboneConfig {
            num_layers: 2,
            embed_dim: 8,
            num_heads: 2,
            image_side: 8,
            patch_side: 4,
            channels: 1,
            prefix_len: 2,
            mlp_ratio: 2.0,
        };
        let bb = Backbone::<f64>::seeded(cfg.clone(), 3).unwrap();
        let global = GlobalPool::<f64>::new();
        let image = vec![0.5f32; cfg.pixels_per_image()];
        let err = query_inference(&global, &bb, &image, 4).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }
}

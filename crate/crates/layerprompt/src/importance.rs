//! Pre-task layer scoring: binned-entropy information gain, softmax
//! normalization and mean-threshold layer selection.
//!
//! The representation after each block is a deterministic function of the
//! input, so under a binned empirical model the mutual information between
//! input and representation reduces to the entropy of the binned
//! representation itself. Per layer we therefore estimate `H(h_l)` by
//! min-max scaling each feature dimension over the sample set, quantizing
//! into equal-width bins, and taking the Shannon entropy of the resulting
//! codeword distribution; the gain of layer `l` is `H(h_l) - H(h_{l-1})`,
//! with the patch-embed output serving as `h_0`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, PrefixSet};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::{Scalar, Tape, Tensor};

/// Estimator knobs. `num_samples` caps how many task samples feed the
/// forward passes; `num_bins` is the per-dimension histogram resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    #[serde(default = "default_num_bins")]
    pub num_bins: usize,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
}

fn default_num_bins() -> usize {
    8
}
fn default_num_samples() -> usize {
    256
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            num_bins: default_num_bins(),
            num_samples: default_num_samples(),
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.num_bins == 0 {
            faults.push("importance.num_bins must be positive".into());
        }
        if self.num_samples < 2 {
            faults.push("importance.num_samples must be at least 2".into());
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }
}

/// Per-task layer scores: raw information gain, softmax-normalized weights,
/// and the selected (above-mean) layer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub ig: Vec<f64>,
    pub alpha: Vec<f64>,
    pub selected: Vec<usize>,
    pub num_samples: usize,
    pub num_bins: usize,
}

/// Promptless per-layer statistics for one task: the report plus the mean
/// CLS feature per layer, which the pool module uses as retrieval query and
/// finalization key.
#[derive(Debug, Clone)]
pub struct TaskStatistics<F: Scalar> {
    pub report: ImportanceReport,
    /// `num_layers` vectors of length `embed_dim`.
    pub mean_cls_per_layer: Vec<Tensor<F>>,
}

/// Shannon entropy (natural log) of the binned codeword distribution of
/// `features` (one row per sample). Each dimension is min-max scaled over
/// the rows and quantized into `num_bins` equal-width bins; a constant
/// dimension lands every sample in bin 0.
pub fn estimate_layer_entropy(features: &[Vec<f64>], num_bins: usize) -> Result<f64> {
    let m = features.len();
    if m < 2 {
        return Err(Error::contract(format!(
            "estimate_layer_entropy: need at least 2 samples, got {m}"
        )));
    }
    if num_bins == 0 {
        return Err(Error::contract(
            "estimate_layer_entropy: num_bins must be positive",
        ));
    }
    let dims = features[0].len();
    for (i, row) in features.iter().enumerate() {
        if row.len() != dims {
            return Err(Error::contract(format!(
                "estimate_layer_entropy: row {i} has {} dims, expected {dims}",
                row.len()
            )));
        }
    }

    let mut lows = vec![f64::INFINITY; dims];
    let mut highs = vec![f64::NEG_INFINITY; dims];
    for row in features {
        for (d, &v) in row.iter().enumerate() {
            lows[d] = lows[d].min(v);
            highs[d] = highs[d].max(v);
        }
    }

    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for row in features {
        let codeword: Vec<u32> = row
            .iter()
            .enumerate()
            .map(|(d, &v)| bin_index(v, lows[d], highs[d], num_bins))
            .collect();
        *counts.entry(codeword).or_insert(0) += 1;
    }

    let total = m as f64;
    let mut entropy = 0.0;
    for &count in counts.values() {
        let p = count as f64 / total;
        entropy -= p * p.ln();
    }
    Ok(entropy)
}

fn bin_index(value: f64, low: f64, high: f64, num_bins: usize) -> u32 {
    if high <= low {
        return 0;
    }
    let scaled = (value - low) / (high - low) * num_bins as f64;
    (scaled as u32).min(num_bins as u32 - 1)
}

/// Per-layer information gain `IG(l) = H(h_l) - H(h_{l-1})`, with `stem` as
/// `h_0`. Every feature set must hold the same number of rows.
pub fn information_gain(
    stem: &[Vec<f64>],
    layers: &[Vec<Vec<f64>>],
    num_bins: usize,
) -> Result<Vec<f64>> {
    if layers.is_empty() {
        return Err(Error::contract("information_gain: no layer features"));
    }
    let m = stem.len();
    for (l, feats) in layers.iter().enumerate() {
        if feats.len() != m {
            return Err(Error::contract(format!(
                "information_gain: layer {l} has {} samples, stem has {m}",
                feats.len()
            )));
        }
    }
    let mut previous = estimate_layer_entropy(stem, num_bins)?;
    let mut gains = Vec::with_capacity(layers.len());
    for feats in layers {
        let current = estimate_layer_entropy(feats, num_bins)?;
        gains.push(current - previous);
        previous = current;
    }
    Ok(gains)
}

/// Softmax over the gains with max-subtraction; strictly positive, sums to 1.
pub fn normalize_importance(ig: &[f64]) -> Vec<f64> {
    let max = ig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ig.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Layers whose normalized weight exceeds the mean `1/L`. If no layer clears
/// the threshold (exactly uniform weights), falls back to the single best
/// layer by raw gain, lowest index on ties, so selection is never empty.
pub fn select_layers(alpha: &[f64], ig: &[f64]) -> Vec<usize> {
    let mean = 1.0 / alpha.len() as f64;
    let selected: Vec<usize> = alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > mean)
        .map(|(l, _)| l)
        .collect();
    if !selected.is_empty() {
        return selected;
    }
    let mut best = 0;
    for (l, &g) in ig.iter().enumerate().skip(1) {
        if g > ig[best] {
            best = l;
        }
    }
    vec![best]
}

/// Run promptless forward passes over up to `num_samples` task images (in a
/// seeded order), collect pooled per-layer features, and compute the report
/// plus the mean CLS feature per layer.
pub fn evaluate_task_statistics<F: Scalar>(
    backbone: &Backbone<F>,
    images: &[&[f32]],
    config: &ImportanceConfig,
    seed: u64,
    task_id: usize,
) -> Result<TaskStatistics<F>> {
    if images.is_empty() {
        return Err(Error::contract("evaluate_task: empty task data"));
    }
    config.validate()?;
    let m = config.num_samples.min(images.len());
    if m < 2 {
        return Err(Error::contract(format!(
            "evaluate_task: entropy needs at least 2 samples, have {m}"
        )));
    }

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut rng = Rng::derive(seed, Stream::ImportanceSampling, task_id as u64);
    rng.shuffle(&mut order);
    order.truncate(m);

    let layers = backbone.config().num_layers;
    let dim = backbone.config().embed_dim;
    let tape = Tape::no_grad();
    // classifier is irrelevant for feature collection; a single dummy column
    let dummy_head = Tensor::zeros(&[dim, 1]);

    let mut stem_features: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut layer_features: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(m); layers];
    let mut cls_sums: Vec<Vec<f64>> = vec![vec![0.0; dim]; layers];

    for &index in &order {
        let trace = backbone.forward(&tape, &[images[index]], &PrefixSet::empty(), &dummy_head)?;
        stem_features.push(trace.pooled_stem.to_f64_vec());
        for l in 0..layers {
            layer_features[l].push(trace.pooled_per_layer[l].to_f64_vec());
            for (acc, v) in cls_sums[l]
                .iter_mut()
                .zip(trace.cls_per_layer[l].to_f64_vec())
            {
                *acc += v;
            }
        }
    }

    let ig = information_gain(&stem_features, &layer_features, config.num_bins)?;
    let alpha = normalize_importance(&ig);
    let selected = select_layers(&alpha, &ig);
    let report = ImportanceReport {
        ig,
        alpha,
        selected,
        num_samples: m,
        num_bins: config.num_bins,
    };

    let mean_cls_per_layer = cls_sums
        .into_iter()
        .map(|sums| {
            let mean: Vec<f64> = sums.into_iter().map(|s| s / m as f64).collect();
            Tensor::from_f64s(&[dim], &mean)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TaskStatistics {
        report,
        mean_cls_per_layer,
    })
}

/// Report-only variant of [`evaluate_task_statistics`].
pub fn evaluate_task<F: Scalar>(
    backbone: &Backbone<F>,
    images: &[&[f32]],
    config: &ImportanceConfig,
    seed: u64,
    task_id: usize,
) -> Result<ImportanceReport> {
    evaluate_task_statistics(backbone, images, config, seed, task_id).map(|stats| stats.report)
}

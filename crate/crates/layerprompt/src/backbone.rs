//! Compact vision-transformer encoder with per-layer prefix injection.
//!
//! Prefix tuning leaves the encoder untouched and concatenates learned
//! matrices to the key and value projections inside self-attention: for head
//! `h` at a prompted layer, keys become `[P_K·W_K_h ; Z·W_K_h]` and values
//! `[P_V·W_V_h ; Z·W_V_h]`, while queries still come from the token sequence
//! alone. The output sequence length is unchanged; each attention row simply
//! normalizes over `prefix_len` extra positions.
//!
//! The encoder is pre-norm (`norm -> attention -> residual -> norm -> MLP ->
//! residual`) and its weights are seeded random, created frozen: only prompts
//! and the classifier ever train.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::{Scalar, Tape, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Encoder geometry. `embed_dim` must divide evenly into `num_heads`, and
/// `patch_side` must divide `image_side`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub image_side: usize,
    pub patch_side: usize,
    pub channels: usize,
    pub prefix_len: usize,
    pub mlp_ratio: f64,
}

impl Default for BackboneConfig {
    /// Desk-scale encoder: 6 layers, width 64, 4 heads, 32x32 single-channel
    /// inputs in 8x8 patches, prefixes of length 4.
    fn default() -> Self {
        BackboneConfig {
            num_layers: 6,
            embed_dim: 64,
            num_heads: 4,
            image_side: 32,
            patch_side: 8,
            channels: 1,
            prefix_len: 4,
            mlp_ratio: 2.0,
        }
    }
}

impl BackboneConfig {
    /// Patches per image (excluding the CLS token).
    pub fn token_count(&self) -> usize {
        let per_side = self.image_side / self.patch_side;
        per_side * per_side
    }

    /// Sequence length including the CLS token.
    pub fn seq_len(&self) -> usize {
        self.token_count() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Flattened patch vector length.
    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * self.channels
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_side * self.image_side * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.num_layers == 0 {
            faults.push("backbone.num_layers must be positive".into());
        }
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
        {
            faults.push(format!(
                "backbone.embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.patch_side == 0
            || self.image_side == 0
            || !self.image_side.is_multiple_of(self.patch_side)
        {
            faults.push(format!(
                "backbone.patch_side {} must divide image_side {}",
                self.patch_side, self.image_side
            ));
        }
        if self.channels == 0 {
            faults.push("backbone.channels must be positive".into());
        }
        if self.prefix_len == 0 {
            faults.push("backbone.prefix_len must be positive".into());
        }
        if self.mlp_ratio <= 0.0 {
            faults.push("backbone.mlp_ratio must be positive".into());
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }
}

/// Per-layer `(P_K, P_V)` prefix matrices, each `prefix_len x embed_dim`.
#[derive(Debug, Clone, Default)]
pub struct PrefixSet<F: Scalar> {
    entries: BTreeMap<usize, (Tensor<F>, Tensor<F>)>,
}

impl<F: Scalar> PrefixSet<F> {
    pub fn empty() -> Self {
        PrefixSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, layer: usize, p_k: Tensor<F>, p_v: Tensor<F>) {
        self.entries.insert(layer, (p_k, p_v));
    }

    pub fn get(&self, layer: usize) -> Option<&(Tensor<F>, Tensor<F>)> {
        self.entries.get(&layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Everything a forward pass exposes: classification logits plus detached
/// per-layer CLS and mean-token features (and the patch-embed pooled feature,
/// which acts as the layer-0 representation for information gain).
#[derive(Debug)]
pub struct ForwardTrace<F: Scalar> {
    /// `[batch x classes]`, on the tape.
    pub logits: Tensor<F>,
    /// CLS token after each block, `num_layers` entries of `[batch x embed_dim]`.
    pub cls_per_layer: Vec<Tensor<F>>,
    /// Mean over non-CLS tokens after each block, same shapes.
    pub pooled_per_layer: Vec<Tensor<F>>,
    /// Mean over non-CLS tokens straight out of the patch embedding.
    pub pooled_stem: Tensor<F>,
}

struct Block<F: Scalar> {
    norm1_gain: Tensor<F>,
    norm1_bias: Tensor<F>,
    w_query: Vec<Tensor<F>>,
    w_key: Vec<Tensor<F>>,
    w_value: Vec<Tensor<F>>,
    w_out: Tensor<F>,
    norm2_gain: Tensor<F>,
    norm2_bias: Tensor<F>,
    mlp_w1: Tensor<F>,
    mlp_b1: Tensor<F>,
    mlp_w2: Tensor<F>,
    mlp_b2: Tensor<F>,
}

/// Frozen encoder plus patch/position/CLS embeddings.
pub struct Backbone<F: Scalar> {
    config: BackboneConfig,
    patch_proj: Tensor<F>,
    pos_embed: Tensor<F>,
    cls_token: Tensor<F>,
    blocks: Vec<Block<F>>,
}

impl<F: Scalar> Backbone<F> {
    /// Seeded random weights, permanently frozen.
    pub fn seeded(config: BackboneConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, false)
    }

    /// Same construction with trainable weights; exists for gradient checks.
    pub fn seeded_trainable(config: BackboneConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, true)
    }

    fn build(config: BackboneConfig, seed: u64, trainable: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, Stream::BackboneInit, 0);
        let d = config.embed_dim;
        let dh = config.head_dim();
        let hidden = (d as f64 * config.mlp_ratio).round() as usize;
        let proj_std = 1.0 / (d as f64).sqrt();

        let mut param = |shape: &[usize], std: f64| {
            let t = Tensor::randn(shape, std, &mut rng);
            t.set_requires_grad(trainable);
            t
        };

        let patch_proj = param(
            &[config.patch_dim(), d],
            1.0 / (config.patch_dim() as f64).sqrt(),
        );
        let pos_embed = param(&[config.seq_len(), d], 0.5);
        let cls_token = param(&[1, d], 0.5);

        let mut blocks = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let block = Block {
                norm1_gain: {
                    let t = Tensor::from_vec(&[d], vec![F::ONE; d])?;
                    t.set_requires_grad(trainable);
                    t
                },
                norm1_bias: param(&[d], 0.02),
                w_query: (0..config.num_heads)
                    .map(|_| param(&[d, dh], proj_std))
                    .collect(),
                w_key: (0..config.num_heads)
                    .map(|_| param(&[d, dh], proj_std))
                    .collect(),
                w_value: (0..config.num_heads)
                    .map(|_| param(&[d, dh], proj_std))
                    .collect(),
                w_out: param(&[d, d], proj_std),
                norm2_gain: {
                    let t = Tensor::from_vec(&[d], vec![F::ONE; d])?;
                    t.set_requires_grad(trainable);
                    t
                },
                norm2_bias: param(&[d], 0.02),
                mlp_w1: param(&[d, hidden], proj_std),
                mlp_b1: param(&[hidden], 0.02),
                mlp_w2: param(&[hidden, d], 1.0 / (hidden as f64).sqrt()),
                mlp_b2: param(&[d], 0.02),
            };
            blocks.push(block);
        }
        Ok(Backbone {
            config,
            patch_proj,
            pos_embed,
            cls_token,
            blocks,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// All weights in a stable order; used for checkpoints and for verifying
    /// that training never touches the encoder.
    pub fn parameters(&self) -> Vec<Tensor<F>> {
        let mut params = vec![
            self.patch_proj.clone(),
            self.pos_embed.clone(),
            self.cls_token.clone(),
        ];
        for block in &self.blocks {
            params.push(block.norm1_gain.clone());
            params.push(block.norm1_bias.clone());
            params.extend(block.w_query.iter().cloned());
            params.extend(block.w_key.iter().cloned());
            params.extend(block.w_value.iter().cloned());
            params.push(block.w_out.clone());
            params.push(block.norm2_gain.clone());
            params.push(block.norm2_bias.clone());
            params.push(block.mlp_w1.clone());
            params.push(block.mlp_b1.clone());
            params.push(block.mlp_w2.clone());
            params.push(block.mlp_b2.clone());
        }
        params
    }

    /// Row-major patch matrix `[token_count x patch_dim]` for one image.
    /// Patches scan left-to-right, top-to-bottom; within a patch, pixels keep
    /// row-major order with channels innermost.
    fn patch_matrix(&self, image: &[f32]) -> Result<Tensor<F>> {
        let cfg = &self.config;
        if image.len() != cfg.pixels_per_image() {
            return Err(Error::shape(format!(
                "image has {} values, config expects {} ({}x{}x{})",
                image.len(),
                cfg.pixels_per_image(),
                cfg.image_side,
                cfg.image_side,
                cfg.channels
            )));
        }
        let per_side = cfg.image_side / cfg.patch_side;
        let mut data = Vec::with_capacity(cfg.token_count() * cfg.patch_dim());
        for py in 0..per_side {
            for px in 0..per_side {
                for row in 0..cfg.patch_side {
                    let y = py * cfg.patch_side + row;
                    let x0 = px * cfg.patch_side;
                    let start = (y * cfg.image_side + x0) * cfg.channels;
                    let end = start + cfg.patch_side * cfg.channels;
                    data.extend(image[start..end].iter().map(|&p| F::from_f64(p as f64)));
                }
            }
        }
        Tensor::from_vec(&[cfg.token_count(), cfg.patch_dim()], data)
    }

    /// Patch projection plus position embeddings, CLS token prepended at
    /// row 0. Output is `[seq_len x embed_dim]`.
    pub fn patch_embed(&self, tape: &Tape<F>, image: &[f32]) -> Result<Tensor<F>> {
        let patches = self.patch_matrix(image)?;
        let tokens = tape.matmul(&patches, &self.patch_proj)?;
        let seq = tape.concat_rows(&[&self.cls_token, &tokens])?;
        tape.add(&seq, &self.pos_embed)
    }

    fn attention(
        &self,
        tape: &Tape<F>,
        block: &Block<F>,
        normed: &Tensor<F>,
        prefix: Option<&(Tensor<F>, Tensor<F>)>,
        mut capture_weights: Option<&mut Vec<Tensor<F>>>,
    ) -> Result<Tensor<F>> {
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let q = tape.matmul(normed, &block.w_query[h])?;
            let k_tokens = tape.matmul(normed, &block.w_key[h])?;
            let v_tokens = tape.matmul(normed, &block.w_value[h])?;
            let (k, v) = match prefix {
                Some((p_k, p_v)) => {
                    let k_prefix = tape.matmul(p_k, &block.w_key[h])?;
                    let v_prefix = tape.matmul(p_v, &block.w_value[h])?;
                    (
                        tape.concat_rows(&[&k_prefix, &k_tokens])?,
                        tape.concat_rows(&[&v_prefix, &v_tokens])?,
                    )
                }
                None => (k_tokens, v_tokens),
            };
            let scores = tape.scale(&tape.matmul(&q, &tape.transpose(&k)?)?, scale)?;
            let weights = tape.softmax_rows(&scores)?;
            if let Some(capture) = capture_weights.as_deref_mut() {
                capture.push(weights.detached_copy());
            }
            heads.push(tape.matmul(&weights, &v)?);
        }
        let head_refs: Vec<&Tensor<F>> = heads.iter().collect();
        let merged = tape.concat_cols(&head_refs)?;
        tape.matmul(&merged, &block.w_out)
    }

    fn block_forward(
        &self,
        tape: &Tape<F>,
        block: &Block<F>,
        z: &Tensor<F>,
        prefix: Option<&(Tensor<F>, Tensor<F>)>,
        capture_weights: Option<&mut Vec<Tensor<F>>>,
    ) -> Result<Tensor<F>> {
        let normed = tape.layer_norm(z, &block.norm1_gain, &block.norm1_bias, LAYER_NORM_EPS)?;
        let attended = self.attention(tape, block, &normed, prefix, capture_weights)?;
        let z = tape.add(z, &attended)?;
        let normed2 = tape.layer_norm(&z, &block.norm2_gain, &block.norm2_bias, LAYER_NORM_EPS)?;
        let hidden = tape.add_row_bias(&tape.matmul(&normed2, &block.mlp_w1)?, &block.mlp_b1)?;
        let activated = tape.gelu(&hidden)?;
        let mlp_out = tape.add_row_bias(&tape.matmul(&activated, &block.mlp_w2)?, &block.mlp_b2)?;
        tape.add(&z, &mlp_out)
    }

    fn check_prefixes(&self, prefixes: &PrefixSet<F>) -> Result<()> {
        let cfg = &self.config;
        for layer in prefixes.layers() {
            if layer >= cfg.num_layers {
                return Err(Error::contract(format!(
                    "prefix at layer {layer} but the encoder has {} layers",
                    cfg.num_layers
                )));
            }
            let (p_k, p_v) = prefixes.get(layer).expect("layer iterated from the set");
            let expected = vec![cfg.prefix_len, cfg.embed_dim];
            if p_k.shape() != expected || p_v.shape() != expected {
                return Err(Error::shape(format!(
                    "prefix at layer {layer}: P_K {:?} / P_V {:?}, expected {:?}",
                    p_k.shape(),
                    p_v.shape(),
                    expected
                )));
            }
        }
        Ok(())
    }

    /// Run the full encoder over a batch of images, injecting prefixes at the
    /// layers present in `prefixes`, and classify with `classifier`
    /// (`[embed_dim x classes]`). Per-layer trace tensors are detached copies;
    /// only the logits stay on the tape.
    pub fn forward(
        &self,
        tape: &Tape<F>,
        images: &[&[f32]],
        prefixes: &PrefixSet<F>,
        classifier: &Tensor<F>,
    ) -> Result<ForwardTrace<F>> {
        if images.is_empty() {
            return Err(Error::contract("forward: empty batch"));
        }
        self.check_prefixes(prefixes)?;
        let cfg = &self.config;
        let (rows, _classes) = classifier.dims2()?;
        if rows != cfg.embed_dim {
            return Err(Error::shape(format!(
                "classifier shape {:?} does not match embed_dim {}",
                classifier.shape(),
                cfg.embed_dim
            )));
        }

        let seq = cfg.seq_len();
        let mut logit_rows = Vec::with_capacity(images.len());
        let mut cls_rows: Vec<Vec<Tensor<F>>> =
            vec![Vec::with_capacity(images.len()); cfg.num_layers];
        let mut pooled_rows: Vec<Vec<Tensor<F>>> =
            vec![Vec::with_capacity(images.len()); cfg.num_layers];
        let mut stem_rows = Vec::with_capacity(images.len());
        let detach = Tape::no_grad();

        for &image in images {
            let mut z = self.patch_embed(tape, image)?;
            stem_rows.push(detach.mean_rows(&detach.slice_rows(&z.detached_copy(), 1, seq)?)?);
            for (l, block) in self.blocks.iter().enumerate() {
                z = self.block_forward(tape, block, &z, prefixes.get(l), None)?;
                let snapshot = z.detached_copy();
                cls_rows[l].push(detach.slice_rows(&snapshot, 0, 1)?);
                pooled_rows[l].push(detach.mean_rows(&detach.slice_rows(&snapshot, 1, seq)?)?);
            }
            let cls_final = tape.slice_rows(&z, 0, 1)?;
            logit_rows.push(tape.matmul(&cls_final, classifier)?);
        }

        let logits = tape.concat_rows(&logit_rows.iter().collect::<Vec<_>>())?;
        let stack = |rows: &[Tensor<F>]| -> Result<Tensor<F>> {
            detach.concat_rows(&rows.iter().collect::<Vec<_>>())
        };
        let cls_per_layer = cls_rows
            .iter()
            .map(|r| stack(r))
            .collect::<Result<Vec<_>>>()?;
        let pooled_per_layer = pooled_rows
            .iter()
            .map(|r| stack(r))
            .collect::<Result<Vec<_>>>()?;
        let pooled_stem = stack(&stem_rows)?;

        Ok(ForwardTrace {
            logits,
            cls_per_layer,
            pooled_per_layer,
            pooled_stem,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            num_layers: 2,
            embed_dim: 8,
            num_heads: 2,
            image_side: 8,
            patch_side: 4,
            channels: 1,
            prefix_len: 2,
            mlp_ratio: 2.0,
        }
    }

    fn image(cfg: &BackboneConfig, seed: u64) -> Vec<f32> {
        let mut rng = Rng::new(seed);
        (0..cfg.pixels_per_image())
            .map(|_| rng.uniform() as f32)
            .collect()
    }

    fn classifier(cfg: &BackboneConfig, classes: usize) -> Tensor<f64> {
        let mut rng = Rng::new(99);
        Tensor::randn(&[cfg.embed_dim, classes], 0.1, &mut rng)
    }

    #[test]
    fn patch_embed_shapes() {
        let cfg = BackboneConfig {
            image_side: 32,
            patch_side: 8,
            ..tiny_config()
        };
        let bb = Backbone::<f64>::seeded(cfg.clone(), 1).unwrap();
        let tape = Tape::no_grad();
        let img = image(&cfg, 5);
        let z = bb.patch_embed(&tape, &img).unwrap();
        assert_eq!(z.shape(), vec![17, cfg.embed_dim]); // 16 patches + CLS
    }

    #[test]
    fn zero_image_zero_projection_gives_pos_plus_cls() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 2).unwrap();
        bb.patch_proj
            .store(&vec![0.0; bb.patch_proj.len()])
            .unwrap();
        let tape = Tape::no_grad();
        let img = vec![0.0f32; cfg.pixels_per_image()];
        let z = bb.patch_embed(&tape, &img).unwrap().to_vec();
        let pos = bb.pos_embed.to_vec();
        let cls = bb.cls_token.to_vec();
        let d = cfg.embed_dim;
        for j in 0..d {
            assert_eq!(z[j], cls[j] + pos[j]);
        }
        for i in 1..cfg.seq_len() {
            for j in 0..d {
                assert_eq!(z[i * d + j], pos[i * d + j]);
            }
        }
    }

    #[test]
    fn patch_extraction_matches_slicing_oracle() {
        let cfg = BackboneConfig {
            channels: 2,
            ..tiny_config()
        };
        let bb = Backbone::<f64>::seeded(cfg.clone(), 3).unwrap();
        let img = image(&cfg, 7);
        let patches = bb.patch_matrix(&img).unwrap();
        let per_side = cfg.image_side / cfg.patch_side;
        for py in 0..per_side {
            for px in 0..per_side {
                let token = py * per_side + px;
                for row in 0..cfg.patch_side {
                    for col in 0..cfg.patch_side {
                        for ch in 0..cfg.channels {
                            let y = py * cfg.patch_side + row;
                            let x = px * cfg.patch_side + col;
                            let pixel = img[(y * cfg.image_side + x) * cfg.channels + ch] as f64;
                            let flat = (row * cfg.patch_side + col) * cfg.channels + ch;
                            assert_eq!(patches.value(&[token, flat]), pixel);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn promptless_forward_is_deterministic_with_full_trace() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 4).unwrap();
        let cls = classifier(&cfg, 3);
        let img = image(&cfg, 11);
        let tape = Tape::no_grad();
        let a = bb
            .forward(&tape, &[&img], &PrefixSet::empty(), &cls)
            .unwrap();
        let b = bb
            .forward(&tape, &[&img], &PrefixSet::empty(), &cls)
            .unwrap();
        assert_eq!(a.logits.fingerprint(), b.logits.fingerprint());
        assert_eq!(a.cls_per_layer.len(), cfg.num_layers);
        assert_eq!(a.pooled_per_layer.len(), cfg.num_layers);
        for t in &a.cls_per_layer {
            assert_eq!(t.shape(), vec![1, cfg.embed_dim]);
        }
        assert_eq!(a.pooled_stem.shape(), vec![1, cfg.embed_dim]);
    }

    #[test]
    fn prefix_changes_prompted_layer_and_spares_earlier_ones() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 5).unwrap();
        let cls = classifier(&cfg, 3);
        let img = image(&cfg, 13);
        let mut rng = Rng::new(21);
        let tape = Tape::no_grad();

        let plain = bb
            .forward(&tape, &[&img], &PrefixSet::empty(), &cls)
            .unwrap();

        let mut prefixes = PrefixSet::empty();
        prefixes.insert(
            1,
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
        );
        let prompted = bb.forward(&tape, &[&img], &prefixes, &cls).unwrap();

        // locality: layer 0 identical, layer 1 changed
        assert_eq!(
            plain.cls_per_layer[0].fingerprint(),
            prompted.cls_per_layer[0].fingerprint()
        );
        assert_ne!(
            plain.cls_per_layer[1].fingerprint(),
            prompted.cls_per_layer[1].fingerprint()
        );

        // prefix at layer 0 perturbs even the first trace entry
        let mut at_zero = PrefixSet::empty();
        at_zero.insert(
            0,
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
        );
        let prompted0 = bb.forward(&tape, &[&img], &at_zero, &cls).unwrap();
        assert_ne!(
            plain.cls_per_layer[0].fingerprint(),
            prompted0.cls_per_layer[0].fingerprint()
        );
    }

    #[test]
    fn prefix_layer_out_of_range_is_contract_error() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 6).unwrap();
        let cls = classifier(&cfg, 2);
        let img = image(&cfg, 1);
        let mut rng = Rng::new(2);
        let mut prefixes = PrefixSet::empty();
        prefixes.insert(
            cfg.num_layers,
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
        );
        let tape = Tape::no_grad();
        let err = bb.forward(&tape, &[&img], &prefixes, &cls).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }

    #[test]
    fn prefix_shape_mismatch_is_shape_error() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 6).unwrap();
        let cls = classifier(&cfg, 2);
        let img = image(&cfg, 1);
        let mut rng = Rng::new(2);
        let mut prefixes = PrefixSet::empty();
        prefixes.insert(
            0,
            Tensor::randn(&[cfg.prefix_len + 1, cfg.embed_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.prefix_len + 1, cfg.embed_dim], 1.0, &mut rng),
        );
        let tape = Tape::no_grad();
        let err = bb.forward(&tape, &[&img], &prefixes, &cls).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn attention_rows_normalize_over_extended_sequence() {
        let cfg = tiny_config();
        let bb = Backbone::<f64>::seeded(cfg.clone(), 7).unwrap();
        let mut rng = Rng::new(3);
        let tape = Tape::no_grad();
        let normed = Tensor::randn(&[cfg.seq_len(), cfg.embed_dim], 1.0, &mut rng);
        let prefix = (
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
            Tensor::randn(&[cfg.prefix_len, cfg.embed_dim], 1.0, &mut rng),
        );
        let mut captured = Vec::new();
        bb.attention(
            &tape,
            &bb.blocks[0],
            &normed,
            Some(&prefix),
            Some(&mut captured),
        )
        .unwrap();
        assert_eq!(captured.len(), cfg.num_heads);
        let extended = cfg.seq_len() + cfg.prefix_len;
        for weights in &captured {
            assert_eq!(weights.shape(), vec![cfg.seq_len(), extended]);
            for row in weights.to_vec().chunks_exact(extended) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
            }
        }
    }

    #[test]
    fn backbone_weights_are_frozen_and_deterministic() {
        let cfg = tiny_config();
        let a = Backbone::<f32>::seeded(cfg.clone(), 42).unwrap();
        let b = Backbone::<f32>::seeded(cfg, 42).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert!(!pa.requires_grad());
            assert_eq!(pa.fingerprint(), pb.fingerprint());
        }
    }
}

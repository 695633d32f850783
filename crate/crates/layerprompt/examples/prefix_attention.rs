//! Show what prefix injection does to a forward pass: nothing when absent,
//! a localized change from the prompted layer onward when present.
//!
//! Run: cargo run --example prefix_attention

use layerprompt::backbone::{Backbone, BackboneConfig, PrefixSet};
use layerprompt::rng::Rng;
use layerprompt::tensor::{Tape, Tensor};

fn main() {
    let config = BackboneConfig::default(); // 6 layers, width 64
    let backbone = Backbone::<f32>::seeded(config.clone(), 1993).unwrap();
    let mut rng = Rng::new(11);
    let classifier = Tensor::randn(&[config.embed_dim, 4], 0.1, &mut rng);
    let image: Vec<f32> = (0..config.pixels_per_image())
        .map(|_| rng.uniform() as f32)
        .collect();

    let tape = Tape::no_grad();
    let plain = backbone
        .forward(&tape, &[&image], &PrefixSet::empty(), &classifier)
        .unwrap();

    // inject a prefix at layer 3 only
    let layer = 3;
    let mut prefixes = PrefixSet::empty();
    prefixes.insert(
        layer,
        Tensor::randn(&[config.prefix_len, config.embed_dim], 0.5, &mut rng),
        Tensor::randn(&[config.prefix_len, config.embed_dim], 0.5, &mut rng),
    );
    let prompted = backbone
        .forward(&tape, &[&image], &prefixes, &classifier)
        .unwrap();

    println!("prefix injected at layer {layer}; per-layer CLS drift vs promptless pass:");
    for l in 0..config.num_layers {
        let a = plain.cls_per_layer[l].to_f64_vec();
        let b = prompted.cls_per_layer[l].to_f64_vec();
        let drift: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let marker = if l < layer {
            "identical (before the prompt)"
        } else {
            "shifted"
        };
        println!("  layer {l}: |delta CLS| = {drift:.6}  <- {marker}");
    }

    let delta: Vec<f64> = plain
        .logits
        .to_f64_vec()
        .iter()
        .zip(prompted.logits.to_f64_vec())
        .map(|(a, b)| b - a)
        .collect();
    println!("logit shift from the prompt: {delta:?}");
}

//! Verify analytic gradients against central finite differences, both for
//! individual kernels and for a full prompted transformer block.
//!
//! Run: cargo run --example gradient_check

use layerprompt::backbone::{Backbone, BackboneConfig, PrefixSet};
use layerprompt::rng::Rng;
use layerprompt::tensor::gradcheck::check_gradients;
use layerprompt::tensor::Tensor;

fn main() {
    let mut rng = Rng::new(2025);
    let tol = 1e-3;
    let step = 1e-5;

    // a single kernel: layer norm feeding a quadratic loss
    let x = Tensor::<f64>::randn(&[4, 6], 1.0, &mut rng).with_grad();
    let gain = Tensor::<f64>::randn(&[6], 0.5, &mut rng).with_grad();
    let bias = Tensor::<f64>::randn(&[6], 0.5, &mut rng).with_grad();
    check_gradients(
        &[x.clone(), gain.clone(), bias.clone()],
        tol,
        step,
        |tape| {
            let normed = tape.layer_norm(&x, &gain, &bias, 1e-5)?;
            let sq = tape.mul(&normed, &normed)?;
            tape.sum_all(&sq)
        },
    )
    .unwrap();
    println!("layer_norm: analytic gradients match finite differences (rel tol {tol})");

    // the full prompted block: encoder weights, prefixes and classifier all
    // checked at once through a cross-entropy loss
    let config = BackboneConfig {
        num_layers: 1,
        embed_dim: 8,
        num_heads: 2,
        image_side: 8,
        patch_side: 4,
        channels: 1,
        prefix_len: 2,
        mlp_ratio: 2.0,
    };
    let backbone = Backbone::<f64>::seeded_trainable(config.clone(), 7).unwrap();
    let p_k = Tensor::<f64>::randn(&[2, 8], 0.5, &mut rng).with_grad();
    let p_v = Tensor::<f64>::randn(&[2, 8], 0.5, &mut rng).with_grad();
    let classifier = Tensor::<f64>::randn(&[8, 3], 0.5, &mut rng).with_grad();
    let images: Vec<Vec<f32>> = (0..2)
        .map(|_| {
            (0..config.pixels_per_image())
                .map(|_| rng.uniform() as f32)
                .collect()
        })
        .collect();
    let image_refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();

    let mut params = backbone.parameters();
    params.push(p_k.clone());
    params.push(p_v.clone());
    params.push(classifier.clone());
    let count: usize = params.iter().map(|p| p.len()).sum();

    check_gradients(&params, tol, step, |tape| {
        let mut prefixes = PrefixSet::empty();
        prefixes.insert(0, p_k.clone(), p_v.clone());
        let trace = backbone.forward(tape, &image_refs, &prefixes, &classifier)?;
        tape.cross_entropy_logits(&trace.logits, &[2, 0])
    })
    .unwrap();
    println!("prompted transformer block: all {count} parameter gradients verified");
}

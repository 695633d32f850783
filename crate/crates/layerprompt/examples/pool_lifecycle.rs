//! Follow the dual pools across a 5-task stream: fixed-capacity training
//! pools, retrieval reuse, freezing, and the global pool's growth law.
//!
//! Run: cargo run --example pool_lifecycle

use layerprompt::cli::config::RunConfig;
use layerprompt::trainer::Trainer;

fn main() {
    let json = r#"{
        "dataset": { "synthetic": {
            "classes": 10, "train_per_class": 8, "test_per_class": 4,
            "image_side": 8, "channels": 1,
            "separation": 3.0, "noise": 0.05, "seed": 21
        }},
        "split": { "increment": 2 },
        "backbone": { "num_layers": 3, "embed_dim": 16, "num_heads": 2,
                      "patch_side": 4, "mlp_ratio": 2.0 },
        "train": { "lr": 0.01, "weight_decay": 0.0005, "epochs": 2, "batch_size": 8 },
        "pool": { "capacity": 4, "reuse": 2, "prefix_len": 2 },
        "importance": { "num_bins": 4, "num_samples": 16 },
        "forced_layers": [1]
    }"#;
    let config = RunConfig::from_json(json, &[]).unwrap();
    let (stream, backbone_cfg) = config.prepare_stream(1993).unwrap();
    let mut trainer =
        Trainer::<f32>::new(backbone_cfg, config.trainer_options(1993).unwrap()).unwrap();

    println!("capacity S = 4, reuse s = 2, prompts forced onto layer 1");
    println!("expected growth: S, then +(S-s) per task -> 4, 6, 8, 10, 12\n");
    for task in &stream.tasks {
        let session = trainer.train_task(task).unwrap();
        let frozen = trainer
            .global_pool()
            .iter_entries()
            .filter(|e| e.frozen)
            .count();
        println!(
            "task {}: global pool per layer {:?} ({} frozen entries, final loss {:.4})",
            task.task_id,
            session.pool_sizes,
            frozen,
            session.loss_history.last().unwrap()
        );
    }

    println!("\nper-entry provenance in the global pool:");
    for entry in trainer.global_pool().iter_entries() {
        println!(
            "  layer {} task {} frozen {} |key| = {:.3}",
            entry.layer_id,
            entry.task_id,
            entry.frozen,
            entry
                .key
                .to_f64_vec()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        );
    }
}

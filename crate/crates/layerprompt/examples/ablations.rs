//! Compare the four pipeline variants on one stream and seed:
//! (1) single always-trainable pool, (2) expansion without freezing,
//! (3) prompts at every layer, (4) the full method.
//!
//! Run: cargo run --example ablations

use layerprompt::cli::commands::cmd_ablate;
use layerprompt::cli::config::RunConfig;

fn main() {
    let out = std::env::temp_dir().join("layerprompt_ablations_example");
    let json = format!(
        r#"{{
            "dataset": {{ "synthetic": {{
                "classes": 8, "train_per_class": 12, "test_per_class": 6,
                "image_side": 16, "channels": 1,
                "separation": 3.0, "noise": 0.05, "seed": 5
            }}}},
            "split": {{ "increment": 2 }},
            "backbone": {{ "num_layers": 4, "embed_dim": 32, "num_heads": 4,
                          "patch_side": 4, "mlp_ratio": 2.0 }},
            "train": {{ "lr": 0.005, "weight_decay": 0.001, "epochs": 2, "batch_size": 12 }},
            "pool": {{ "capacity": 4, "reuse": 2, "prefix_len": 4 }},
            "importance": {{ "num_bins": 8, "num_samples": 24 }},
            "seeds": [1993],
            "output_dir": "{}"
        }}"#,
        out.display()
    );
    let config = RunConfig::from_json(&json, &[]).unwrap();
    let ablation = cmd_ablate(&config).unwrap();

    print!("{}", ablation.render());
    for row in &ablation.rows {
        let pools: Vec<usize> = row
            .report
            .tasks
            .iter()
            .map(|t| t.pool_sizes.values().sum())
            .collect();
        let selected: Vec<usize> = row
            .report
            .tasks
            .iter()
            .map(|t| t.importance.selected.len())
            .collect();
        println!(
            "variant ({}) pool totals per task {:?}, selected-layer counts {:?}",
            row.variant, pools, selected
        );
    }
    std::fs::remove_dir_all(&out).ok();
}

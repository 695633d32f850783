//! Interrupt a run mid-stream, save a checkpoint, resume it, and confirm the
//! finished report matches an uninterrupted run exactly.
//!
//! Run: cargo run --example checkpoint_resume

use layerprompt::cli::commands::{cmd_resume, cmd_run};
use layerprompt::cli::config::RunConfig;

fn main() {
    let base = std::env::temp_dir().join("layerprompt_resume_example");
    std::fs::create_dir_all(&base).unwrap();
    let json = format!(
        r#"{{
            "dataset": {{ "synthetic": {{
                "classes": 10, "train_per_class": 8, "test_per_class": 4,
                "image_side": 8, "channels": 1,
                "separation": 3.0, "noise": 0.05, "seed": 31
            }}}},
            "split": {{ "increment": 2 }},
            "backbone": {{ "num_layers": 2, "embed_dim": 8, "num_heads": 2,
                          "patch_side": 4, "mlp_ratio": 2.0 }},
            "train": {{ "lr": 0.01, "weight_decay": 0.0005, "epochs": 2, "batch_size": 8 }},
            "pool": {{ "capacity": 4, "reuse": 2, "prefix_len": 2 }},
            "importance": {{ "num_bins": 4, "num_samples": 16 }},
            "output_dir": "{}"
        }}"#,
        base.join("full").display()
    );

    let full_config = RunConfig::from_json(&json, &[]).unwrap();
    let full = cmd_run(&full_config, None, None, false).unwrap().unwrap();
    println!("uninterrupted run: Avg {:.2}", full.seeds[0].avg);

    let mut interrupted = full_config.clone();
    interrupted.output_dir = base.join("resumed").display().to_string();
    let state = base.join("state.lpck");
    let paused = cmd_run(&interrupted, Some(&state), Some(2), false).unwrap();
    assert!(paused.is_none());
    println!(
        "interrupted after task 2; checkpoint at {}",
        state.display()
    );

    let resumed = cmd_resume(&state).unwrap();
    println!("resumed run:       Avg {:.2}", resumed.seeds[0].avg);
    println!(
        "per-seed records identical: {}",
        full.seeds == resumed.seeds && full.aggregate == resumed.aggregate
    );

    std::fs::remove_dir_all(&base).ok();
}

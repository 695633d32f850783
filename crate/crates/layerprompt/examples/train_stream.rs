//! Run the full class-incremental pipeline on a synthetic stream and print
//! the accuracy matrix with the Avg/Last/forgetting summary.
//!
//! Run: cargo run --example train_stream

use layerprompt::cli::config::RunConfig;
use layerprompt::data::TaskData;
use layerprompt::metrics::AccuracyMatrix;
use layerprompt::trainer::Trainer;

fn main() {
    let json = r#"{
        "dataset": { "synthetic": {
            "classes": 8, "train_per_class": 16, "test_per_class": 8,
            "image_side": 16, "channels": 1,
            "separation": 3.0, "noise": 0.05, "seed": 5
        }},
        "split": { "increment": 2 },
        "backbone": { "num_layers": 4, "embed_dim": 32, "num_heads": 4,
                      "patch_side": 4, "mlp_ratio": 2.0 },
        "train": { "lr": 0.005, "weight_decay": 0.001, "epochs": 3, "batch_size": 16 },
        "pool": { "capacity": 4, "reuse": 2, "prefix_len": 4 },
        "importance": { "num_bins": 8, "num_samples": 32 }
    }"#;
    let config = RunConfig::from_json(json, &[]).unwrap();
    let seed = 1993;
    let (stream, backbone_cfg) = config.prepare_stream(seed).unwrap();
    let mut trainer =
        Trainer::<f32>::new(backbone_cfg, config.trainer_options(seed).unwrap()).unwrap();

    let mut matrix = AccuracyMatrix::new();
    println!("accuracy matrix (row = after task i, column = test set of task j):");
    for task in &stream.tasks {
        let session = trainer.train_task(task).unwrap();
        let seen: Vec<&TaskData> = stream.tasks[..=task.task_id].iter().collect();
        let row = trainer.evaluate(&seen).unwrap();
        print!(
            "  after task {} (classes {:?}, loss {:.3}->{:.3}): ",
            task.task_id,
            task.class_ids,
            session.loss_history.first().unwrap(),
            session.loss_history.last().unwrap()
        );
        for a in &row {
            print!("{a:.2} ");
        }
        println!();
        matrix.record_row(task.task_id + 1, &row).unwrap();
    }

    let sizes: Vec<usize> = stream.tasks.iter().map(|t| t.test.len()).collect();
    println!(
        "\nAvg {:.2}  Last {:.2}  Forgetting {:.2}",
        matrix.avg_accuracy(&sizes).unwrap(),
        matrix.last_accuracy(&sizes).unwrap(),
        matrix.forgetting().unwrap()
    );
}

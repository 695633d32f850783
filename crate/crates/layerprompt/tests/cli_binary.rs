//! End-to-end checks of the `layerprompt` binary: subcommands, file outputs
//! and exit codes (0 success, 1 runtime failure, 2 configuration error).

use std::path::PathBuf;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layerprompt"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lp_bin_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config(dir: &std::path::Path) -> PathBuf {
    let path = dir.join("config.json");
    let json = format!(
        r#"{{
            "dataset": {{ "synthetic": {{
                "classes": 4, "train_per_class": 8, "test_per_class": 4,
                "image_side": 8, "channels": 1,
                "separation": 3.0, "noise": 0.05, "seed": 7
            }}}},
            "split": {{ "increment": 2 }},
            "backbone": {{ "num_layers": 2, "embed_dim": 8, "num_heads": 2,
                          "patch_side": 4, "mlp_ratio": 2.0 }},
            "train": {{ "lr": 0.01, "weight_decay": 0.0005, "epochs": 2, "batch_size": 8 }},
            "pool": {{ "capacity": 3, "reuse": 1, "prefix_len": 2 }},
            "importance": {{ "num_bins": 4, "num_samples": 16 }},
            "output_dir": "{}"
        }}"#,
        dir.join("out").display()
    );
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn run_succeeds_and_writes_outputs() {
    let dir = temp_dir("run");
    let config = tiny_config(&dir);
    let output = binary()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("1993"), "{stdout}");
    assert!(dir.join("out/report.json").is_file());
    assert!(dir.join("out/accuracy_matrix_1993.csv").is_file());
    assert!(dir.join("out/curves.csv").is_file());

    // the report subcommand renders the same numbers
    let report_out = binary()
        .args(["report", "--report"])
        .arg(dir.join("out/report.json"))
        .output()
        .unwrap();
    assert!(report_out.status.success());
    let rendered = String::from_utf8_lossy(&report_out.stdout);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap())
            .unwrap();
    let avg = report["seeds"][0]["avg"].as_f64().unwrap();
    assert!(
        rendered.contains(&format!("{avg:.2}")),
        "{rendered} missing {avg:.2}"
    );

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_config_exits_2_with_field_messages() {
    let dir = temp_dir("bad");
    let config = tiny_config(&dir);
    let output = binary()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "train.epochs=0", "--set", "pool.reuse=9"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epochs"), "{stderr}");
    assert!(stderr.contains("reuse"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_file_exits_1() {
    let output = binary()
        .args(["run", "--config", "/nonexistent/nowhere.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn checkpoint_resume_and_tamper_detection() {
    let dir = temp_dir("ck");
    let config = tiny_config(&dir);
    let state = dir.join("state.lpck");

    let output = binary()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--stop-after-task", "1", "--checkpoint"])
        .arg(&state)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(state.is_file());

    // inspection prints progress
    let inspect = binary()
        .args(["checkpoint", "--state"])
        .arg(&state)
        .output()
        .unwrap();
    assert!(inspect.status.success());
    let text = String::from_utf8_lossy(&inspect.stdout);
    assert!(text.contains("1 tasks done"), "{text}");

    // resume completes the run
    let resume = binary()
        .args(["resume", "--state"])
        .arg(&state)
        .output()
        .unwrap();
    assert!(
        resume.status.success(),
        "{}",
        String::from_utf8_lossy(&resume.stderr)
    );
    assert!(dir.join("out/report.json").is_file());

    // flip one payload byte: integrity error, nonzero exit
    let mut bytes = std::fs::read(&state).unwrap();
    let last = bytes.len() - 1;
    bytes[last] = bytes[last].wrapping_add(1);
    std::fs::write(&state, &bytes).unwrap();
    let tampered = binary()
        .args(["checkpoint", "--state"])
        .arg(&state)
        .output()
        .unwrap();
    assert_eq!(tampered.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&tampered.stderr);
    assert!(stderr.contains("integrity"), "{stderr}");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn ablate_prints_four_rows() {
    let dir = temp_dir("ablate");
    let config = tiny_config(&dir);
    let output = binary()
        .args(["ablate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    for label in ["(1)", "(2)", "(3)", "(4)"] {
        assert!(stdout.contains(label), "{stdout}");
    }
    assert!(dir.join("out/ablation.json").is_file());
    std::fs::remove_dir_all(&dir).ok();
}

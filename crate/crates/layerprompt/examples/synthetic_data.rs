//! Generate a clustered synthetic dataset, export it to the raw on-disk
//! format, reload it, and confirm the round trip is exact.
//!
//! Run: cargo run --example synthetic_data

use layerprompt::data::{
    generate_synthetic, load_image_dataset, make_splits, save_image_dataset, SplitSpec,
    SyntheticSpec,
};

fn main() {
    let spec = SyntheticSpec {
        classes: 6,
        train_per_class: 10,
        test_per_class: 4,
        image_side: 16,
        channels: 1,
        separation: 2.5,
        noise: 0.1,
        seed: 42,
    };
    let (train, test) = generate_synthetic(&spec).unwrap();
    println!(
        "generated {} train / {} test samples, {}x{} px, {} classes",
        train.samples.len(),
        test.samples.len(),
        spec.image_side,
        spec.image_side,
        spec.classes
    );

    let dir = std::env::temp_dir().join("layerprompt_synthetic_example");
    save_image_dataset(&train, &dir).unwrap();
    let reloaded = load_image_dataset(&dir).unwrap();
    let exact = train
        .samples
        .iter()
        .zip(&reloaded.samples)
        .all(|(a, b)| a.pixels == b.pixels && a.label == b.label);
    println!(
        "exported to {} and reloaded: bit-exact = {exact}",
        dir.display()
    );

    let split = SplitSpec {
        total_classes: 6,
        base_classes: 2,
        increment: 2,
        seed: 1993,
    };
    let tasks = make_splits(&split).unwrap();
    println!(
        "B2-Inc2 split over 6 classes -> {} tasks: {:?}",
        tasks.len(),
        tasks
    );

    std::fs::remove_dir_all(&dir).ok();
}

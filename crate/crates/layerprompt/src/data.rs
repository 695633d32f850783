//! Task streams, synthetic data and the on-disk dataset format.
//!
//! A class-incremental stream is described as "B-m Inc-n": the first task
//! holds `m` classes (omitted when `m = 0`) and every later task holds `n`,
//! over a seeded permutation of the class ids. Tasks are disjoint and cover
//! every class exactly once.
//!
//! Synthetic data is Gaussian cluster imagery: each class has a seeded random
//! template image scaled by `separation`, and samples are the template plus
//! pixel noise, quantized to 8-bit levels so that exporting to the raw format
//! and reloading reproduces the dataset bit for bit.
//!
//! On-disk layout: a directory with `index.csv` (rows `relative_path,label`)
//! and one raw image file per sample: a 12-byte header of `width`, `height`,
//! `channels` as little-endian u32, then row-major 8-bit pixels.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

/// One labeled image; pixel values in `[0, 1]`, always multiples of `1/255`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pixels: Vec<f32>,
    pub label: usize,
}

/// An immutable labeled image collection.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub image_side: usize,
    pub channels: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }
}

/// "B-m Inc-n" split description over `total_classes` classes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub total_classes: usize,
    pub base_classes: usize,
    pub increment: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.total_classes == 0 {
            faults.push("split.total_classes must be positive".into());
        }
        if self.increment == 0 {
            faults.push("split.increment must be positive".into());
        }
        if self.base_classes > self.total_classes {
            faults.push(format!(
                "split.base_classes {} exceeds total_classes {}",
                self.base_classes, self.total_classes
            ));
        } else if self.increment > 0
            && !(self.total_classes - self.base_classes).is_multiple_of(self.increment)
        {
            faults.push(format!(
                "split does not cover classes exactly: ({} - {}) is not a multiple of {}",
                self.total_classes, self.base_classes, self.increment
            ));
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }
}

/// Seeded class-id lists, one per task: the base task of `m` classes (when
/// `m > 0`) followed by increments of `n`.
pub fn make_splits(spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, Stream::SplitPermutation, 0);
    let order = rng.permutation(spec.total_classes);
    let mut tasks = Vec::new();
    let mut cursor = 0;
    if spec.base_classes > 0 {
        tasks.push(order[..spec.base_classes].to_vec());
        cursor = spec.base_classes;
    }
    while cursor < spec.total_classes {
        tasks.push(order[cursor..cursor + spec.increment].to_vec());
        cursor += spec.increment;
    }
    Ok(tasks)
}

/// Gaussian-cluster image recipe.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_side: usize,
    pub channels: usize,
    /// Scale of the per-class template; larger values spread class means.
    pub separation: f64,
    /// Pixel noise scale around the template.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_per_class: 24,
            test_per_class: 12,
            image_side: 32,
            channels: 1,
            separation: 1.0,
            noise: 0.08,
            seed: 1993,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if self.classes == 0 {
            faults.push("dataset.classes must be positive".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            faults.push("dataset per-class sample counts must be positive".into());
        }
        if self.image_side == 0 || self.channels == 0 {
            faults.push("dataset image dimensions must be positive".into());
        }
        if self.separation <= 0.0 {
            faults.push("dataset.separation must be positive".into());
        }
        if self.noise < 0.0 {
            faults.push("dataset.noise must be nonnegative".into());
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(faults))
        }
    }

    fn pixels(&self) -> usize {
        self.image_side * self.image_side * self.channels
    }
}

/// Quantize to the nearest 8-bit level in [0, 1]; the raw format stores
/// bytes, so generated data must already live on this grid.
fn quantize(v: f64) -> f32 {
    let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    byte as f32 / 255.0
}

/// Deterministic train/test pair from a synthetic recipe. Per class, a
/// template image is drawn once, and each sample is `template + noise *
/// standard normal`, squashed into [0, 1] around mid-gray and quantized.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = Rng::derive(spec.seed, Stream::SyntheticData, 0);
    let pixels = spec.pixels();
    let mut train = Vec::with_capacity(spec.classes * spec.train_per_class);
    let mut test = Vec::with_capacity(spec.classes * spec.test_per_class);

    for class in 0..spec.classes {
        let template: Vec<f64> = (0..pixels)
            .map(|_| 0.5 + 0.18 * spec.separation * rng.normal())
            .collect();
        let mut draw = |bucket: &mut Vec<Sample>| {
            let values: Vec<f32> = template
                .iter()
                .map(|&t| quantize(t + spec.noise * rng.normal()))
                .collect();
            bucket.push(Sample {
                pixels: values,
                label: class,
            });
        };
        for _ in 0..spec.train_per_class {
            draw(&mut train);
        }
        for _ in 0..spec.test_per_class {
            draw(&mut test);
        }
    }

    let dataset = |samples| Dataset {
        image_side: spec.image_side,
        channels: spec.channels,
        samples,
    };
    Ok((dataset(train), dataset(test)))
}

/// One task of a class-incremental stream. Sample labels are remapped to the
/// global sequential id space: task classes occupy `class_offset ..
/// class_offset + class_count`.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task_id: usize,
    /// Original dataset class ids assigned to this task.
    pub class_ids: Vec<usize>,
    pub class_offset: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskData {
    pub fn class_count(&self) -> usize {
        self.class_ids.len()
    }
}

/// Ordered disjoint tasks covering every class of the source datasets.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub image_side: usize,
    pub channels: usize,
    pub tasks: Vec<TaskData>,
}

impl TaskStream {
    /// Partition train/test datasets into tasks according to the split spec.
    pub fn build(train: &Dataset, test: &Dataset, spec: &SplitSpec) -> Result<TaskStream> {
        if train.image_side != test.image_side || train.channels != test.channels {
            return Err(Error::Data(format!(
                "train ({}x{}ch) and test ({}x{}ch) dimensions disagree",
                train.image_side, train.channels, test.image_side, test.channels
            )));
        }
        let splits = make_splits(spec)?;
        // sequential id of an original class = its position in the permutation
        let mut sequential = vec![usize::MAX; spec.total_classes];
        let mut next = 0;
        for task_classes in &splits {
            for &c in task_classes {
                sequential[c] = next;
                next += 1;
            }
        }

        let remap = |samples: &[Sample], wanted: &[usize]| -> Result<Vec<Sample>> {
            let mut out = Vec::new();
            for sample in samples {
                if sample.label >= spec.total_classes {
                    return Err(Error::Data(format!(
                        "sample label {} outside the declared {} classes",
                        sample.label, spec.total_classes
                    )));
                }
                if wanted.contains(&sample.label) {
                    out.push(Sample {
                        pixels: sample.pixels.clone(),
                        label: sequential[sample.label],
                    });
                }
            }
            Ok(out)
        };

        let mut tasks = Vec::with_capacity(splits.len());
        let mut offset = 0;
        for (task_id, class_ids) in splits.into_iter().enumerate() {
            let train_samples = remap(&train.samples, &class_ids)?;
            let test_samples = remap(&test.samples, &class_ids)?;
            if train_samples.is_empty() || test_samples.is_empty() {
                return Err(Error::Data(format!(
                    "task {task_id} has no data for classes {class_ids:?}"
                )));
            }
            let count = class_ids.len();
            tasks.push(TaskData {
                task_id,
                class_ids,
                class_offset: offset,
                train: train_samples,
                test: test_samples,
            });
            offset += count;
        }
        Ok(TaskStream {
            image_side: train.image_side,
            channels: train.channels,
            tasks,
        })
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(TaskData::class_count).sum()
    }
}

const RAW_HEADER_BYTES: usize = 12;

/// Write a dataset as `index.csv` plus one raw image file per sample.
pub fn save_image_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut index = String::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let name = format!("img_{i:06}.raw");
        let path = root.join(&name);
        let mut bytes = Vec::with_capacity(RAW_HEADER_BYTES + sample.pixels.len());
        bytes.extend((dataset.image_side as u32).to_le_bytes());
        bytes.extend((dataset.image_side as u32).to_le_bytes());
        bytes.extend((dataset.channels as u32).to_le_bytes());
        for &p in &sample.pixels {
            bytes.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        let mut file =
            std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        index.push_str(&format!("{name},{}\n", sample.label));
    }
    let index_path = root.join("index.csv");
    std::fs::write(&index_path, index).map_err(|e| Error::io(index_path.display().to_string(), e))
}

/// Load a dataset written by [`save_image_dataset`] (or any producer of the
/// same layout). No resampling: every image must share one geometry.
pub fn load_image_dataset(root: &Path) -> Result<Dataset> {
    let index_path = root.join("index.csv");
    let index = std::fs::read_to_string(&index_path)
        .map_err(|e| Error::io(index_path.display().to_string(), e))?;

    let mut samples = Vec::new();
    let mut geometry: Option<(usize, usize)> = None;
    for (line_no, line) in index.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, label) = line.rsplit_once(',').ok_or_else(|| {
            Error::Data(format!(
                "index.csv line {}: expected 'path,label'",
                line_no + 1
            ))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::Data(format!(
                "index.csv line {}: bad label {label:?}",
                line_no + 1
            ))
        })?;
        let path = root.join(name);
        let (side, channels, pixels) = read_raw_image(&path)?;
        match geometry {
            None => geometry = Some((side, channels)),
            Some((s, c)) if s != side || c != channels => {
                return Err(Error::Data(format!(
                    "{}: geometry {side}x{side}x{channels} differs from the dataset's {s}x{s}x{c}",
                    path.display()
                )));
            }
            _ => {}
        }
        samples.push(Sample { pixels, label });
    }
    let (image_side, channels) = geometry
        .ok_or_else(|| Error::Data(format!("{}: index lists no samples", index_path.display())))?;
    Ok(Dataset {
        image_side,
        channels,
        samples,
    })
}

fn read_raw_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = [0u8; RAW_HEADER_BYTES];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let width = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if width != height {
        return Err(Error::Data(format!(
            "{}: non-square image {width}x{height} is not supported",
            path.display()
        )));
    }
    let expected = width * height * channels;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} pixel bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let pixels = bytes.into_iter().map(|b| b as f32 / 255.0).collect();
    Ok((width, channels, pixels))
}

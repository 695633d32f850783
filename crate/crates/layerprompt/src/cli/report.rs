//! Run reports: per-seed records, aggregates, JSON and CSV emission.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceReport;
use crate::metrics::{mean_std, AccuracyMatrix};

/// Everything recorded about one task of one seed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub class_offset: usize,
    pub class_count: usize,
    pub importance: ImportanceReport,
    pub loss_history: Vec<f64>,
    /// Global pool entry count per layer after this task.
    pub pool_sizes: BTreeMap<usize, usize>,
}

/// One seed's complete outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub avg: f64,
    pub last: f64,
    pub forgetting: f64,
    /// Pooled accuracy after each stage, percentages.
    pub per_stage_accuracy: Vec<f64>,
    /// Lower-triangular per-task accuracies in [0, 1], row per stage.
    pub accuracy_matrix: Vec<Vec<f64>>,
    pub test_sizes: Vec<usize>,
    pub tasks: Vec<TaskRecord>,
}

impl SeedReport {
    /// Assemble the metric block from raw rows and task records.
    pub fn assemble(
        seed: u64,
        matrix: &AccuracyMatrix,
        test_sizes: Vec<usize>,
        tasks: Vec<TaskRecord>,
    ) -> Result<SeedReport> {
        let stages = matrix.stages();
        let mut per_stage = Vec::with_capacity(stages);
        for stage in 1..=stages {
            per_stage.push(matrix.stage_accuracy(stage, &test_sizes)? * 100.0);
        }
        let forgetting = if stages >= 2 {
            matrix.forgetting()?
        } else {
            0.0
        };
        Ok(SeedReport {
            seed,
            avg: matrix.avg_accuracy(&test_sizes)?,
            last: matrix.last_accuracy(&test_sizes)?,
            forgetting,
            per_stage_accuracy: per_stage,
            accuracy_matrix: matrix.rows().to_vec(),
            test_sizes,
            tasks,
        })
    }
}

/// Mean and population std per metric over the seed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub avg_mean: f64,
    pub avg_std: f64,
    pub last_mean: f64,
    pub last_std: f64,
    pub forgetting_mean: f64,
    pub forgetting_std: f64,
}

impl Aggregate {
    pub fn over(seeds: &[SeedReport]) -> Aggregate {
        let collect = |f: fn(&SeedReport) -> f64| -> Vec<f64> { seeds.iter().map(f).collect() };
        let (avg_mean, avg_std) = mean_std(&collect(|s| s.avg));
        let (last_mean, last_std) = mean_std(&collect(|s| s.last));
        let (forgetting_mean, forgetting_std) = mean_std(&collect(|s| s.forgetting));
        Aggregate {
            avg_mean,
            avg_std,
            last_mean,
            last_std,
            forgetting_mean,
            forgetting_std,
        }
    }
}

/// Full experiment report: one entry per seed plus the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Wall-clock stamp; the only field allowed to differ between reruns.
    pub generated_unix_secs: u64,
    pub variant: usize,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn new(variant: usize, seeds: Vec<SeedReport>) -> RunReport {
        let aggregate = Aggregate::over(&seeds);
        RunReport {
            generated_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            variant,
            seeds,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunReport> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Write `report.json`, one accuracy-matrix CSV per seed, and the
    /// per-stage curve CSV into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write = |name: &str, contents: &str| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write("report.json", &self.to_json())?;
        for seed in &self.seeds {
            write(
                &format!("accuracy_matrix_{}.csv", seed.seed),
                &matrix_csv(seed),
            )?;
        }
        write("curves.csv", &self.curves_csv())?;
        Ok(())
    }

    /// Stage-by-stage pooled accuracy per seed, one row per stage.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("stage");
        for seed in &self.seeds {
            out.push_str(&format!(",seed_{}", seed.seed));
        }
        out.push('\n');
        let stages = self
            .seeds
            .iter()
            .map(|s| s.per_stage_accuracy.len())
            .max()
            .unwrap_or(0);
        for stage in 0..stages {
            out.push_str(&format!("{}", stage + 1));
            for seed in &self.seeds {
                match seed.per_stage_accuracy.get(stage) {
                    Some(a) => out.push_str(&format!(",{a:.4}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Human-readable summary table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:>8} {:>8} {:>11}\n",
            "seed", "Avg", "Last", "Forgetting"
        ));
        for seed in &self.seeds {
            out.push_str(&format!(
                "{:<8} {:>8.2} {:>8.2} {:>11.2}\n",
                seed.seed, seed.avg, seed.last, seed.forgetting
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "{:<8} {:>5.2} ± {:.2} {:>4.2} ± {:.2} {:>6.2} ± {:.2}\n",
            "all",
            a.avg_mean,
            a.avg_std,
            a.last_mean,
            a.last_std,
            a.forgetting_mean,
            a.forgetting_std
        ));
        out
    }
}

fn matrix_csv(seed: &SeedReport) -> String {
    let mut out = String::from("stage");
    let stages = seed.accuracy_matrix.len();
    for j in 1..=stages {
        out.push_str(&format!(",task_{j}"));
    }
    out.push('\n');
    for (i, row) in seed.accuracy_matrix.iter().enumerate() {
        out.push_str(&format!("{}", i + 1));
        for a in row {
            out.push_str(&format!(",{a:.6}"));
        }
        for _ in row.len()..stages {
            out.push(',');
        }
        out.push('\n');
    }
    out
}

/// Comparative table for the four pipeline variants on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub generated_unix_secs: u64,
    pub seed: u64,
    /// Exactly four rows, variants (1)..(4).
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: usize,
    pub avg: f64,
    pub last: f64,
    pub forgetting: f64,
    pub report: SeedReport,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<4} {:>8} {:>8} {:>11}\n",
            "#", "Avg", "Last", "Forgetting"
        );
        for row in &self.rows {
            out.push_str(&format!(
                "({}) {:>9.2} {:>8.2} {:>11.2}\n",
                row.variant, row.avg, row.last, row.forgetting
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ablation serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<AblationReport> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("ablation report: {e}")))
    }
}

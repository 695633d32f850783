//! Accuracy-matrix bookkeeping and the Avg/Last/forgetting protocol.
//!
//! `a[i][j]` is the accuracy on the test set of task `j` (1-based) after
//! training through task `i`; only `j <= i` is defined. Stage accuracy `A_i`
//! pools all test sets seen so far, weighted by their sample counts. `Avg` is
//! the mean of the `A_i` over all stages and `Last` is `A_T`, both reported
//! as percentages. Forgetting is the mean gap between a task's best
//! historical accuracy and its final accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracy record, rows appended one stage at a time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        AccuracyMatrix { rows: Vec::new() }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut matrix = AccuracyMatrix::new();
        for (i, row) in rows.into_iter().enumerate() {
            matrix.record_row(i + 1, &row)?;
        }
        Ok(matrix)
    }

    /// Record stage `stage` (1-based): exactly `stage` accuracies, once.
    pub fn record_row(&mut self, stage: usize, accuracies: &[f64]) -> Result<()> {
        if stage != self.rows.len() + 1 {
            return Err(Error::contract(format!(
                "record_row: expected stage {}, got {stage} (rows are recorded once, in order)",
                self.rows.len() + 1
            )));
        }
        if accuracies.len() != stage {
            return Err(Error::contract(format!(
                "record_row: stage {stage} needs {stage} accuracies, got {}",
                accuracies.len()
            )));
        }
        if let Some(bad) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::contract(format!(
                "record_row: accuracy {bad} outside [0, 1]"
            )));
        }
        self.rows.push(accuracies.to_vec());
        Ok(())
    }

    /// Number of recorded stages `T`.
    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    /// `a[i][j]` with 1-based stage/task indices; `None` when undefined.
    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        if stage == 0 || task == 0 || task > stage {
            return None;
        }
        self.rows
            .get(stage - 1)
            .and_then(|row| row.get(task - 1))
            .copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Pooled accuracy after stage `i` (1-based), weighted by test-set sizes.
    pub fn stage_accuracy(&self, stage: usize, test_sizes: &[usize]) -> Result<f64> {
        let row = self
            .rows
            .get(stage - 1)
            .ok_or_else(|| Error::contract(format!("stage {stage} not recorded")))?;
        if test_sizes.len() < row.len() {
            return Err(Error::contract(format!(
                "stage {stage} needs {} test sizes, got {}",
                row.len(),
                test_sizes.len()
            )));
        }
        let mut correct = 0.0;
        let mut total = 0.0;
        for (a, &n) in row.iter().zip(test_sizes) {
            correct += a * n as f64;
            total += n as f64;
        }
        if total == 0.0 {
            return Err(Error::contract("stage_accuracy: zero total test size"));
        }
        Ok(correct / total)
    }

    /// Mean of the per-stage pooled accuracies, x100.
    pub fn avg_accuracy(&self, test_sizes: &[usize]) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::contract("avg_accuracy: no stages recorded"));
        }
        let mut sum = 0.0;
        for stage in 1..=self.rows.len() {
            sum += self.stage_accuracy(stage, test_sizes)?;
        }
        Ok(sum / self.rows.len() as f64 * 100.0)
    }

    /// Final-stage pooled accuracy over all seen classes, x100.
    pub fn last_accuracy(&self, test_sizes: &[usize]) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::contract("last_accuracy: no stages recorded"));
        }
        Ok(self.stage_accuracy(self.rows.len(), test_sizes)? * 100.0)
    }

    /// Mean over tasks `j < T` of `max_i a[i][j] - a[T][j]`, x100.
    pub fn forgetting(&self) -> Result<f64> {
        let t = self.rows.len();
        if t < 2 {
            return Err(Error::contract("forgetting: needs at least 2 stages"));
        }
        let last = &self.rows[t - 1];
        let mut total = 0.0;
        for j in 0..t - 1 {
            let best = self.rows[j..]
                .iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            total += best - last[j];
        }
        Ok(total / (t - 1) as f64 * 100.0)
    }
}

/// Population mean and standard deviation (divide by N).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

//! Experiment commands: run, ablate, checkpoint inspection, resume, report.
//!
//! Seeds run sequentially by default; `parallel` fans seeds out over scoped
//! threads (seed runs share no mutable state, each thread builds its own
//! engine). Checkpointing is cooperative: `run` with `stop_after_task` saves
//! the state mid-stream and exits, `resume` picks it up and finishes with
//! byte-identical results.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::AccuracyMatrix;
use crate::trainer::Trainer;

use super::checkpoint::{self, CheckpointState, ModelState};
use super::config::RunConfig;
use super::report::{AblationReport, AblationRow, RunReport, SeedReport, TaskRecord};

/// Partial per-seed records carried across a checkpoint boundary.
#[derive(Debug, Default, Clone)]
struct SeedProgress {
    rows: Vec<Vec<f64>>,
    records: Vec<TaskRecord>,
}

enum SeedRun {
    Done(SeedReport),
    Paused(Box<Trainer<f32>>, SeedProgress),
}

/// Drive one seed through the stream: train each task, evaluate on every
/// seen test set, record the accuracy row. `start` resumes from checkpointed
/// state; `stop_after` pauses once that many tasks are done.
fn run_seed(
    config: &RunConfig,
    seed: u64,
    start: Option<(Trainer<f32>, SeedProgress)>,
    stop_after: Option<usize>,
) -> Result<SeedRun> {
    let (stream, backbone_config) = config.prepare_stream(seed)?;
    let (mut trainer, mut progress) = match start {
        Some((trainer, progress)) => (trainer, progress),
        None => (
            Trainer::<f32>::new(backbone_config, config.trainer_options(seed)?)?,
            SeedProgress::default(),
        ),
    };
    if trainer.tasks_done() != progress.rows.len() {
        return Err(Error::contract(format!(
            "resume state inconsistent: {} tasks done but {} accuracy rows",
            trainer.tasks_done(),
            progress.rows.len()
        )));
    }

    for task in stream.tasks.iter().skip(trainer.tasks_done()) {
        if let Some(limit) = stop_after {
            if trainer.tasks_done() >= limit {
                return Ok(SeedRun::Paused(Box::new(trainer), progress));
            }
        }
        let session = trainer.train_task(task)?;
        let seen: Vec<&crate::data::TaskData> = stream.tasks[..=task.task_id].iter().collect();
        progress.rows.push(trainer.evaluate(&seen)?);
        progress.records.push(TaskRecord {
            task_id: session.task_id,
            class_offset: session.class_offset,
            class_count: session.class_count,
            importance: session.importance,
            loss_history: session.loss_history,
            pool_sizes: session.pool_sizes,
        });
    }

    let mut matrix = AccuracyMatrix::new();
    for (i, row) in progress.rows.iter().enumerate() {
        matrix.record_row(i + 1, row)?;
    }
    let test_sizes: Vec<usize> = stream.tasks.iter().map(|t| t.test.len()).collect();
    let report = SeedReport::assemble(seed, &matrix, test_sizes, progress.records)?;
    Ok(SeedRun::Done(report))
}

/// Execute the configured experiment. Returns the report, or `None` when a
/// `stop_after_task` pause wrote a checkpoint instead.
pub fn cmd_run(
    config: &RunConfig,
    checkpoint_path: Option<&Path>,
    stop_after_task: Option<usize>,
    parallel: bool,
) -> Result<Option<RunReport>> {
    if stop_after_task.is_some() && checkpoint_path.is_none() {
        return Err(Error::Config(vec![
            "stop_after_task requires a checkpoint path to save into".into(),
        ]));
    }

    let seeds = if parallel && stop_after_task.is_none() {
        run_seeds_parallel(config)?
    } else {
        let mut seeds = Vec::with_capacity(config.seeds.len());
        for (index, &seed) in config.seeds.iter().enumerate() {
            match run_seed(config, seed, None, stop_after_task)? {
                SeedRun::Done(report) => seeds.push(report),
                SeedRun::Paused(trainer, progress) => {
                    let path = checkpoint_path.expect("checked above");
                    let state = CheckpointState {
                        config: config.clone(),
                        seed_index: index,
                        finished: seeds,
                        partial_rows: progress.rows,
                        partial_tasks: progress.records,
                        model: ModelState::capture(&trainer),
                    };
                    checkpoint::save(path, &state)?;
                    return Ok(None);
                }
            }
        }
        seeds
    };

    let report = RunReport::new(config.variant, seeds);
    report.write_files(Path::new(&config.output_dir))?;
    Ok(Some(report))
}

fn run_seeds_parallel(config: &RunConfig) -> Result<Vec<SeedReport>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || match run_seed(config, seed, None, None)? {
                    SeedRun::Done(report) => Ok(report),
                    SeedRun::Paused(..) => Err(Error::contract("parallel seeds cannot pause")),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| Error::contract("seed thread panicked"))?
            })
            .collect()
    })
}

/// Resume an interrupted run from its checkpoint and finish every remaining
/// seed. The completed report is byte-identical to an uninterrupted run,
/// timestamp aside.
pub fn cmd_resume(state_path: &Path) -> Result<RunReport> {
    let state = checkpoint::load(state_path)?;
    let config = state.config.clone();
    let seed = *config.seeds.get(state.seed_index).ok_or_else(|| {
        Error::Integrity(format!(
            "checkpoint seed_index {} out of range",
            state.seed_index
        ))
    })?;
    let (_, backbone_config) = config.prepare_stream(seed)?;
    let trainer: Trainer<f32> = state
        .model
        .restore_trainer(backbone_config, &config, seed)?;
    let progress = SeedProgress {
        rows: state.partial_rows,
        records: state.partial_tasks,
    };

    let mut seeds = state.finished;
    match run_seed(&config, seed, Some((trainer, progress)), None)? {
        SeedRun::Done(report) => seeds.push(report),
        SeedRun::Paused(..) => unreachable!("no stop limit on resume"),
    }
    for &next in &config.seeds[state.seed_index + 1..] {
        match run_seed(&config, next, None, None)? {
            SeedRun::Done(report) => seeds.push(report),
            SeedRun::Paused(..) => unreachable!("no stop limit on resume"),
        }
    }

    let report = RunReport::new(config.variant, seeds);
    report.write_files(Path::new(&config.output_dir))?;
    Ok(report)
}

/// Run variants (1)..(4) on the same stream and first seed; the table
/// mirrors the four-row ablation layout.
pub fn cmd_ablate(config: &RunConfig) -> Result<AblationReport> {
    let seed = *config
        .seeds
        .first()
        .ok_or_else(|| Error::Config(vec!["ablation needs at least one seed".into()]))?;
    let mut rows = Vec::with_capacity(4);
    for variant in 1..=4 {
        let mut variant_config = config.clone();
        variant_config.variant = variant;
        let report = match run_seed(&variant_config, seed, None, None)? {
            SeedRun::Done(report) => report,
            SeedRun::Paused(..) => unreachable!("no stop limit in ablation"),
        };
        rows.push(AblationRow {
            variant,
            avg: report.avg,
            last: report.last,
            forgetting: report.forgetting,
            report,
        });
    }
    let ablation = AblationReport {
        generated_unix_secs: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        seed,
        rows,
    };
    let dir = Path::new(&config.output_dir);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join("ablation.json");
    std::fs::write(&path, ablation.to_json())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(ablation)
}

/// Validate a checkpoint (magic, version, checksum) and describe it.
pub fn cmd_checkpoint(state_path: &Path) -> Result<String> {
    let state = checkpoint::load(state_path)?;
    Ok(checkpoint::describe(&state))
}

/// Summarize a written report and emit the plotting CSV next to it (or at
/// an explicit path).
pub fn cmd_report(report_path: &Path, curves_out: Option<&Path>) -> Result<String> {
    let report = RunReport::load(report_path)?;
    let curves = report.curves_csv();
    let target = match curves_out {
        Some(path) => path.to_path_buf(),
        None => report_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("curves.csv"),
    };
    std::fs::write(&target, curves).map_err(|e| Error::io(target.display().to_string(), e))?;
    Ok(report.render())
}

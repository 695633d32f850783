//! Class-incremental learning with layer-importance-guided prompt insertion
//! and dual expandable prompt pools.
//!
//! The crate trains a frozen, compact vision transformer on a stream of
//! disjoint class groups by learning only per-layer attention prefixes and a
//! growing classifier. Before each task, an information-gain score over
//! layers decides where prompts are inserted; a frozen global pool plus a
//! fixed-capacity training pool lets tasks share old prompts without
//! overwriting them.
//!
//! Module map:
//! - [`tensor`]: dense tensors with tape-based reverse-mode autodiff and SGD
//! - [`backbone`]: the transformer encoder with key/value prefix injection
//! - [`importance`]: binned-entropy information gain and layer selection
//! - [`pool`]: prompt entries, global/training pools, retrieval and merging
//! - [`trainer`]: the per-task pipeline and class-incremental evaluation
//! - [`data`]: task-stream splits, synthetic data, on-disk dataset format
//! - [`metrics`]: accuracy matrix and the Avg/Last/forgetting protocol
//! - [`cli`]: experiment configuration, runner, reports and checkpoints
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `layerprompt` binary for the experiment front end.

pub mod backbone;
pub mod cli;
pub mod data;
pub mod error;
pub mod importance;
pub mod metrics;
pub mod pool;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor};

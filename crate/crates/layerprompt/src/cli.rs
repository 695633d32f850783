//! Experiment front end: configuration, the multi-seed runner, reports and
//! resumable checkpoints. The `layerprompt` binary is a thin wrapper over
//! [`commands`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;

//! Experiment driver: configuration, checkpoints and the commands behind
//! the `rhn` binary.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod analysis;
pub mod app;
pub mod run;
pub mod sweep;
pub mod tables;

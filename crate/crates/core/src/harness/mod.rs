//! Experiment configuration, runs, checkpoints and run artifacts.

pub mod checkpoint;
pub mod config;
pub mod curves;
pub mod experiment;
pub mod metrics;
pub mod selfcheck;

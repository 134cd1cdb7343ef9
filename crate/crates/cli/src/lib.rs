//! Command-line front end: synthetic data, training, inference, ablation,
//! benchmarking, gradient checking and evaluation.

pub mod app;
pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod synth;

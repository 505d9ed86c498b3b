//! Batch command-line surface: simulate, reconstruct, train, verify and
//! evaluate, all driven by a `section.key = value` run configuration.

pub mod commands;
pub mod config;

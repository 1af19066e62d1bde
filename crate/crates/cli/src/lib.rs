//! Configuration and experiment commands behind the `spikelearn` binary.

pub mod commands;
pub mod config;

//! Experiment runner library behind the `tobo` binary: configuration,
//! problem construction, seeded execution, persistence and aggregation.

pub mod config;
pub mod oracle_cmd;
pub mod persist;
pub mod runner;
pub mod summary;

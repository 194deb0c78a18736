//! Library surface of the `linsub` binary: config schemas, experiment
//! runners, and dataset serialization. Kept as a library so integration
//! tests and downstream tooling can drive experiments without shelling
//! out.

pub mod config;
pub mod dataset_io;
pub mod experiments;

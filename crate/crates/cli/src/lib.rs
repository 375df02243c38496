//! Sweep harness for the decoding lab: dataset ingestion, prompt
//! templates, run configuration, journaled decoding sweeps and PRR reports.

pub mod config;
pub mod dataset;
pub mod journal;
pub mod prompt;
pub mod report;
pub mod sweep;

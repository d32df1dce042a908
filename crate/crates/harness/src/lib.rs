//! Evaluation harness for the fusetrack tracker: OTB-style sequence I/O,
//! synthetic sequences, success/precision metrics and CSV reporting.

pub mod metrics;
pub mod report;
pub mod selftest;
pub mod sequence;
pub mod synth;

//! Configuration, checkpoint I/O and experiment dispatch behind the `bundleflow` binary.

pub mod checkpoint;
pub mod config;
pub mod run;

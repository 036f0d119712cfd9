//! Harness for the subsphere attack experiments: configuration, the
//! experiment runner and the `ssal` command line.

pub mod cli;
pub mod config;
pub mod experiment;

//! File formats, configuration, experiment driver and CLI for
//! [`kvswarm_core`].

pub mod cli;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod report;

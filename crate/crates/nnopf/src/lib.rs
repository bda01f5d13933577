//! File formats, run configuration and the command pipeline around
//! `nnopf-core`.

pub mod bounds_io;
pub mod case_io;
pub mod commands;
pub mod config;
pub mod data_io;
pub mod fsutil;
pub mod net_io;
pub mod report_io;
pub mod runtime;

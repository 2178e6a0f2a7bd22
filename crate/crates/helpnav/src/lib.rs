//! File formats, the command line and the operator session server on top of
//! `helpnav-core`.

pub mod cli;
pub mod commands;
pub mod files;
pub mod protocol;
pub mod report;
pub mod server;
pub mod session;
pub mod trace_file;
pub mod weights;

pub use helpnav_core as core;

//! File formats, run configuration, reports, and the commands behind the
//! `mindspell` binary. The algorithms live in `mindspell-core`; this crate
//! adds everything that needs an operating system.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::CliError;

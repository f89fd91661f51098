//! IO, file formats and the command line around `misc-core`.

pub mod commands;
pub mod config;
pub mod io;

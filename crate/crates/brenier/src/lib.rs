//! File formats, configuration and commands around `brenier-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;

pub use error::{Error, Result};

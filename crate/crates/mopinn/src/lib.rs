//! Experiment harness, configuration, file formats and command-line
//! front end around [`mopinn_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;

pub use error::{Error, Result};
pub use mopinn_core as core;

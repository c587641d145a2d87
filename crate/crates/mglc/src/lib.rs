//! File formats, parallel drivers and the command-line pipeline built on
//! [`mglc_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod format;
pub mod parallel;
pub mod pipeline;

pub use error::{Error, Result};

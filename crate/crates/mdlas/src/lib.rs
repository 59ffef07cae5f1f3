//! File formats, a threaded decoding runner and the `mdlas` command line
//! on top of [`mdlas_core`].

pub use mdlas_core as core;

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod runner;

pub use error::{Error, Result};

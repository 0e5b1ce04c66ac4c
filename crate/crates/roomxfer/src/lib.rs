//! File formats, dataset building, training and the command-line surface
//! around `roomxfer-core`.

pub mod builder;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod fsutil;
pub mod manifest;
pub mod models;
pub mod report;
pub mod train;
pub mod wav;

pub use error::{Error, Result};

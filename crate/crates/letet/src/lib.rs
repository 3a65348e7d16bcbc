//! File formats, operator caching, parallel preprocessing and the command-line
//! layer around `letet-core`.

pub mod cache;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod tetgen;
pub mod vtk;

pub use error::{Error, Result};

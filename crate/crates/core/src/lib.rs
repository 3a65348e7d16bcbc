#![cfg_attr(not(test), no_std)]
#![doc = include_str!("../README.md")]

extern crate alloc;

pub mod eigen;
pub mod error;
pub mod explain;
pub mod geom;
pub mod landmarks;
pub mod lbo;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod sparse;
pub mod synth;
pub mod tokenize;

pub use error::{Error, Result};

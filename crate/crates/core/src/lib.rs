//! Quality-controlled computational phantoms from multi-label segmentation
//! volumes.

pub mod catalog;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod mesh;
pub mod patient;
pub mod qc;
pub mod server;
pub mod synth;
pub mod taxonomy;
pub mod volumetry;
pub mod voxelize;

pub use error::{Error, Result};
